"""Triangle-mesh frames, OBJ parsing and the Euclidean-weighted edge graph."""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class MeshError(ValueError):
    """Invalid mesh data (bad indices, degenerate edges, topology mismatch)."""


class ObjParseError(MeshError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def topology_digest(faces: np.ndarray) -> str:
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    h = hashlib.sha256()
    h.update(str(faces.shape).encode())
    h.update(faces.tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class MeshFrame:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                bad = int(np.argmax((f < 0).any(1) | (f >= len(v)).any(1)))
                raise MeshError(f"face {bad} index out of range for {len(v)} vertices: {f[bad].tolist()}")
            rep = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if rep.any():
                bad = int(np.argmax(rep))
                raise MeshError(f"face {bad} repeats a vertex: {f[bad].tolist()}")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    @property
    def topology_id(self) -> str:
        return topology_digest(self.faces)

    def with_vertices(self, vertices) -> "MeshFrame":
        return MeshFrame(vertices, self.faces)


@dataclass(frozen=True)
class MeshSequence:
    frames: tuple
    fps: float
    topology_id: str = field(default="")

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise MeshError("mesh sequence has no frames")
        if not self.fps > 0:
            raise MeshError(f"fps must be positive, got {self.fps}")
        topo = frames[0].topology_id
        for i, fr in enumerate(frames[1:], start=1):
            if fr.vertex_count != frames[0].vertex_count or fr.topology_id != topo:
                raise MeshError(f"frame {i} topology differs from frame 0")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "topology_id", topo)

    def __len__(self):
        return len(self.frames)


def parse_obj(text) -> MeshFrame:
    """Parse an OBJ character stream (or string) into a MeshFrame.

    Only ``v`` and ``f`` records are used. Face indices are 1-based (negative
    indices count from the end), ``/vt/vn`` suffixes are ignored and quads are
    fan-triangulated.
    """
    if isinstance(text, str):
        text = io.StringIO(text)
    verts: list = []
    faces: list = []
    for lineno, line in enumerate(text, start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ObjParseError(lineno, "vertex record needs 3 coordinates")
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError as exc:
                raise ObjParseError(lineno, f"malformed vertex coordinate ({exc})") from None
        elif tag == "f":
            idx = []
            for tok in parts[1:]:
                head = tok.split("/", 1)[0]
                try:
                    i = int(head)
                except ValueError:
                    raise ObjParseError(lineno, f"malformed face index {tok!r}") from None
                if i == 0:
                    raise ObjParseError(lineno, "face index 0 is invalid (OBJ is 1-based)")
                idx.append(i - 1 if i > 0 else len(verts) + i)
            if len(idx) == 3:
                faces.append(idx)
            elif len(idx) == 4:
                faces.append([idx[0], idx[1], idx[2]])
                faces.append([idx[0], idx[2], idx[3]])
            else:
                raise ObjParseError(lineno, f"faces must have 3 or 4 vertices, got {len(idx)}")
    return MeshFrame(np.array(verts, dtype=np.float64).reshape(-1, 3),
                     np.array(faces, dtype=np.int64).reshape(-1, 3))


def read_obj(path) -> MeshFrame:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_obj(fh)


def write_obj(path, frame: MeshFrame) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in frame.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in frame.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sequence(mesh_dir, fps: float) -> MeshSequence:
    files = sorted(Path(mesh_dir).glob("frame_*.obj"))
    if not files:
        raise MeshError(f"no frame_%06d.obj files in {mesh_dir}")
    return MeshSequence(tuple(read_obj(p) for p in files), fps)


def write_sequence(mesh_dir, seq: MeshSequence) -> None:
    mesh_dir = Path(mesh_dir)
    mesh_dir.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(seq.frames):
        write_obj(mesh_dir / f"frame_{i:06d}.obj", fr)


@dataclass(frozen=True)
class MeshGraph:
    """Undirected edge graph with Euclidean weights.

    ``edges`` holds each undirected edge once as ``(u, v)`` with ``u < v``,
    sorted lexicographically. ``indptr``/``nbr``/``nbr_edge`` are a CSR
    adjacency with neighbours in increasing index order.
    """

    vertex_count: int
    edges: np.ndarray
    weights: np.ndarray
    indptr: np.ndarray
    nbr: np.ndarray
    nbr_edge: np.ndarray
    topology_id: str = ""

    @classmethod
    def from_edges(cls, positions, edges: Iterable[Sequence[int]], topology_id: str = "") -> "MeshGraph":
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(pos)
        e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise MeshError("edge index out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise MeshError("self-loop edge")
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0)
        w = _edge_lengths(pos, e)
        order = np.lexsort((np.concatenate([e[:, 1], e[:, 0]]), np.concatenate([e[:, 0], e[:, 1]])))
        src = np.concatenate([e[:, 0], e[:, 1]])[order]
        dst = np.concatenate([e[:, 1], e[:, 0]])[order]
        eid = np.concatenate([np.arange(len(e)), np.arange(len(e))])[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        g = cls(n, e, w, indptr, dst, eid, topology_id)
        for arr in (e, w, indptr, dst, eid):
            arr.setflags(write=False)
        return g

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def neighbors(self, u: int):
        lo, hi = self.indptr[u], self.indptr[u + 1]
        return self.nbr[lo:hi], self.weights[self.nbr_edge[lo:hi]]

    def weight(self, u: int, v: int) -> float:
        lo, hi = self.indptr[u], self.indptr[u + 1]
        k = lo + np.searchsorted(self.nbr[lo:hi], v)
        if k >= hi or self.nbr[k] != v:
            raise MeshError(f"vertices {u} and {v} are not adjacent")
        return float(self.weights[self.nbr_edge[k]])

    def adjacency_lists(self) -> list:
        """Per-vertex ``[(neighbor, weight), ...]`` as plain Python objects."""
        w = self.weights.tolist()
        nb = self.nbr.tolist()
        ne = self.nbr_edge.tolist()
        ptr = self.indptr.tolist()
        return [[(nb[k], w[ne[k]]) for k in range(ptr[u], ptr[u + 1])] for u in range(self.vertex_count)]


def _edge_lengths(pos: np.ndarray, edges: np.ndarray) -> np.ndarray:
    d = pos[edges[:, 0]] - pos[edges[:, 1]]
    w = np.sqrt(np.einsum("ij,ij->i", d, d))
    if np.any(w <= 0):
        k = int(np.argmin(w))
        raise MeshError(f"degenerate edge between coincident vertices {int(edges[k, 0])} and {int(edges[k, 1])}")
    return w


def face_edges(faces: np.ndarray) -> np.ndarray:
    f = np.asarray(faces, dtype=np.int64)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def build_graph(frame: MeshFrame) -> MeshGraph:
    return MeshGraph.from_edges(frame.vertices, face_edges(frame.faces), frame.topology_id)


def reweight(graph: MeshGraph, frame: MeshFrame) -> MeshGraph:
    """Same edge set as ``graph`` with weights taken from ``frame``."""
    if frame.topology_id != graph.topology_id or frame.vertex_count != graph.vertex_count:
        raise MeshError("frame topology does not match the graph")
    w = _edge_lengths(frame.vertices, graph.edges)
    w.setflags(write=False)
    return MeshGraph(graph.vertex_count, graph.edges, w, graph.indptr, graph.nbr, graph.nbr_edge, graph.topology_id)
