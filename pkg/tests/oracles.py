"""Independent reference implementations and generators shared by the tests."""

import numpy as np

from impsim.mesh import MeshGraph


def random_connected_graph(rng, n_max=12, lattice=3):
    """``(graph, positions)``: a connected graph on lattice points, so many path lengths tie exactly."""
    n = int(rng.integers(2, n_max + 1))
    cells = rng.choice(lattice ** 3, size=n, replace=False)
    pos = np.stack(np.unravel_index(cells, (lattice,) * 3), axis=1).astype(float)
    edges = set()
    order = rng.permutation(n)
    for i in range(1, n):
        a, b = int(order[i]), int(order[rng.integers(i)])
        edges.add((min(a, b), max(a, b)))
    for _ in range(int(rng.integers(0, 2 * n))):
        a, b = rng.choice(n, 2, replace=False)
        edges.add((int(min(a, b)), int(max(a, b))))
    return MeshGraph.from_edges(pos, sorted(edges)), pos


def tally_metrics(preds, labels, n_classes):
    """Per-class counting with plain loops; F1 is 0 for classes with no support."""
    preds, labels = list(map(int, preds)), list(map(int, labels))
    correct = sum(p == y for p, y in zip(preds, labels))
    f1s = []
    for c in range(n_classes):
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return correct / len(labels), sum(f1s) / n_classes, f1s


def point_segment_distance(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)
