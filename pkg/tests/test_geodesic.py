import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_connected_graph

from impsim.geodesic import (BudgetError, ElectrodePair, UnreachableError, brute_force_shortest, dijkstra,
                             path_length, path_series)
from impsim.harness.arm import body_model
from impsim.mesh import MeshError, MeshFrame, MeshGraph, MeshSequence, build_graph

SQUARE = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]  # A, B, C, D


def square_graph(diagonal=False):
    edges = [(0, 1), (1, 2), (2, 3), (3, 0)] + ([(0, 2)] if diagonal else [])
    return MeshGraph.from_edges(SQUARE, edges)


def test_source_equals_sink():
    p = dijkstra(square_graph(), ElectrodePair(2, 2))
    assert p.vertices == (2,) and p.length == 0.0


def test_square_tie_break():
    p = dijkstra(square_graph(), ElectrodePair(0, 2))
    assert p.length == 2.0
    assert p.vertices == (0, 1, 2)


def test_square_with_diagonal():
    p = dijkstra(square_graph(True), ElectrodePair(0, 2))
    assert p.vertices == (0, 2)
    assert p.length == pytest.approx(math.sqrt(2), abs=1e-15)


def test_electrode_out_of_range():
    with pytest.raises(IndexError):
        dijkstra(square_graph(), ElectrodePair(0, 9))


def test_unreachable_two_triangles():
    m = MeshFrame([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 0, 0], [6, 0, 0], [5, 1, 0]], [[0, 1, 2], [3, 4, 5]])
    g = build_graph(m)
    with pytest.raises(UnreachableError):
        dijkstra(g, ElectrodePair(0, 4))
    with pytest.raises(UnreachableError):
        brute_force_shortest(g, ElectrodePair(0, 4))


def test_brute_force_budget():
    g = MeshGraph.from_edges([[i, 0, 0] for i in range(13)], [(i, i + 1) for i in range(12)])
    with pytest.raises(BudgetError):
        brute_force_shortest(g, ElectrodePair(0, 12))


def test_dijkstra_matches_brute_force_sample():
    rng = np.random.default_rng(11)
    for _ in range(200):
        g, _ = random_connected_graph(rng)
        s, t = (int(x) for x in rng.integers(0, g.vertex_count, 2))
        a = dijkstra(g, ElectrodePair(s, t))
        b = brute_force_shortest(g, ElectrodePair(s, t))
        assert a.length == b.length
        assert a.vertices == b.vertices


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_geodesic_properties(seed):
    rng = np.random.default_rng(seed)
    g, pos = random_connected_graph(rng)
    s, t = (int(x) for x in rng.choice(g.vertex_count, 2, replace=False))
    e = ElectrodePair(s, t)
    p = dijkstra(g, e)
    assert p.length >= np.linalg.norm(pos[s] - pos[t]) - 1e-12
    assert p.length == path_length(g, p.vertices)
    assert dijkstra(g, e) == p

    # dropping an edge the path does not use leaves the answer unchanged
    used = {tuple(sorted(x)) for x in zip(p.vertices[:-1], p.vertices[1:])}
    spare = [tuple(x) for x in g.edges.tolist() if tuple(x) not in used]
    if spare:
        drop = spare[int(rng.integers(len(spare)))]
        kept = [tuple(x) for x in g.edges.tolist() if tuple(x) != drop]
        try:
            p2 = dijkstra(MeshGraph.from_edges(pos, kept), e)
        except UnreachableError:
            p2 = None
        if p2 is not None:
            assert p2.length == p.length

    # an extra edge never makes the path longer
    a, b = (int(x) for x in rng.choice(g.vertex_count, 2, replace=False))
    more = MeshGraph.from_edges(pos, [tuple(x) for x in g.edges.tolist()] + [(a, b)])
    assert dijkstra(more, e).length <= p.length


def arm_sequence(frames=3):
    arm = body_model("articulated_arm")
    return arm, arm.sequence(np.linspace(0.0, 1.5, frames), 20.0)


def test_static_sequence_constant_lengths():
    arm = body_model("articulated_arm")
    f = arm.frame(0.7)
    ps = path_series(MeshSequence((f,) * 5, 20.0), arm.electrodes())
    assert np.all(ps.lengths == ps.lengths[0])


def test_scaled_sequence_scales_lengths():
    arm = body_model("articulated_arm")
    f = arm.frame(0.7)
    base = path_series(MeshSequence((f,), 20.0), arm.electrodes()).lengths[0]
    big = path_series(MeshSequence((f.with_vertices(f.vertices * 3.0),), 20.0), arm.electrodes()).lengths[0]
    assert big == pytest.approx(3.0 * base, rel=1e-12)


def test_series_matches_per_frame_dijkstra():
    arm, seq = arm_sequence(3)
    ps = path_series(seq, arm.electrodes())
    for i, fr in enumerate(seq.frames):
        p = dijkstra(build_graph(fr), arm.electrodes())
        assert ps.lengths[i] == p.length
        assert ps.paths[i].vertices == p.vertices


def test_series_error_names_frame():
    arm = body_model("articulated_arm")
    good = arm.frame(0.2)
    v = good.vertices.copy()
    v[1] = v[0]  # collapse an edge in frame 2
    seq = MeshSequence((good, good, good.with_vertices(v)), 20.0)
    with pytest.raises(MeshError, match="frame 2"):
        path_series(seq, arm.electrodes())


def test_series_unreachable_names_frame():
    a = MeshFrame([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 0, 0], [6, 0, 0], [5, 1, 0]], [[0, 1, 2], [3, 4, 5]])
    with pytest.raises(UnreachableError, match="frame 0"):
        path_series(MeshSequence((a, a), 10.0), ElectrodePair(0, 4))
