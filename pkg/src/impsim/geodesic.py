"""Shortest conductive paths on the mesh edge graph.

Ties between equal-length paths are broken toward the path whose
predecessor chain, read from the sink back to the source, is
lexicographically smallest by vertex index. Both the Dijkstra search and the
exhaustive oracle implement the same rule, so their outputs can be compared
path-for-path.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mesh import MeshError, MeshFrame, MeshGraph, MeshSequence, build_graph, reweight


class UnreachableError(RuntimeError):
    def __init__(self, source: int, sink: int, frame: Optional[int] = None):
        where = f" in frame {frame}" if frame is not None else ""
        super().__init__(f"sink {sink} is unreachable from source {source}{where}")
        self.source, self.sink, self.frame = source, sink, frame


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class ElectrodePair:
    source: int
    sink: int

    def check(self, vertex_count: int) -> None:
        for name, v in (("source", self.source), ("sink", self.sink)):
            if not 0 <= v < vertex_count:
                raise IndexError(f"electrode {name} {v} out of range for {vertex_count} vertices")


@dataclass(frozen=True)
class GeodesicPath:
    vertices: tuple
    length: float

    @property
    def source(self) -> int:
        return self.vertices[0]

    @property
    def sink(self) -> int:
        return self.vertices[-1]


def path_length(graph: MeshGraph, vertices) -> float:
    """Left-to-right sum of edge weights along ``vertices``."""
    total = 0.0
    for a, b in zip(vertices[:-1], vertices[1:]):
        total = total + graph.weight(a, b)
    return total


def dijkstra(graph: MeshGraph, electrodes: ElectrodePair, adjacency: Optional[list] = None) -> GeodesicPath:
    """Lazy-deletion Dijkstra with early exit when the sink is settled.

    ``adjacency`` may be passed in (from ``graph.adjacency_lists()``) to
    amortise conversion when many queries run on one graph.
    """
    s, t = electrodes.source, electrodes.sink
    electrodes.check(graph.vertex_count)
    if s == t:
        return GeodesicPath((s,), 0.0)
    adj = adjacency if adjacency is not None else graph.adjacency_lists()
    n = graph.vertex_count
    dist = [math.inf] * n
    pred = [-1] * n
    done = [False] * n
    dist[s] = 0.0
    heap = [(0.0, s)]
    while heap:
        du, u = heapq.heappop(heap)
        if done[u] or du > dist[u]:
            continue
        done[u] = True
        if u == t:
            break
        for v, w in adj[u]:
            if done[v]:
                continue
            alt = du + w
            if alt < dist[v]:
                dist[v] = alt
                pred[v] = u
                heapq.heappush(heap, (alt, v))
            elif alt == dist[v] and u < pred[v]:
                pred[v] = u
    if not done[t]:
        raise UnreachableError(s, t)
    chain = [t]
    while chain[-1] != s:
        chain.append(pred[chain[-1]])
    return GeodesicPath(tuple(reversed(chain)), dist[t])


def brute_force_shortest(graph: MeshGraph, electrodes: ElectrodePair, max_vertices: int = 12) -> GeodesicPath:
    """Exhaustive simple-path enumeration; test oracle for ``dijkstra``."""
    if graph.vertex_count > max_vertices:
        raise BudgetError(f"brute force limited to {max_vertices} vertices, graph has {graph.vertex_count}")
    s, t = electrodes.source, electrodes.sink
    electrodes.check(graph.vertex_count)
    if s == t:
        return GeodesicPath((s,), 0.0)
    adj = graph.adjacency_lists()
    best_len = math.inf
    best_key = None
    best_path = None
    stack = [(s, 0.0, [s])]
    while stack:
        u, length, path = stack.pop()
        if u == t:
            key = tuple(reversed(path))
            if length < best_len or (length == best_len and key < best_key):
                best_len, best_key, best_path = length, key, path
            continue
        visited = set(path)
        for v, w in adj[u]:
            if v not in visited:
                stack.append((v, length + w, path + [v]))
    if best_path is None:
        raise UnreachableError(s, t)
    return GeodesicPath(tuple(best_path), best_len)


@dataclass(frozen=True)
class PathSeries:
    lengths: np.ndarray
    paths: tuple
    fps: float


def path_series(sequence: MeshSequence, electrodes: ElectrodePair) -> PathSeries:
    electrodes.check(sequence.frames[0].vertex_count)
    graph = build_graph(sequence.frames[0])
    lengths, paths = [], []
    for i, frame in enumerate(sequence.frames):
        try:
            g = graph if i == 0 else reweight(graph, frame)
        except MeshError as exc:
            raise MeshError(f"frame {i}: {exc}") from None
        try:
            p = dijkstra(g, electrodes)
        except UnreachableError:
            raise UnreachableError(electrodes.source, electrodes.sink, frame=i) from None
        lengths.append(p.length)
        paths.append(p)
    return PathSeries(np.array(lengths), tuple(paths), sequence.fps)


def frame_path(frame: MeshFrame, electrodes: ElectrodePair) -> GeodesicPath:
    return dijkstra(build_graph(frame), electrodes)
