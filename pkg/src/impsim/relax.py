"""Strain relaxation of geodesic vertex chains.

The chain is treated as a string pinned at both electrodes. Interior points
take damped Laplacian (Jacobi) steps toward the midpoint of their neighbours;
a step is kept only if it does not lengthen the chain. When a surface radius
is configured, each point is held within that radius of the mesh vertex it
started on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geodesic import ElectrodePair, GeodesicPath, path_series
from .mesh import MeshFrame, MeshSequence


@dataclass(frozen=True)
class RelaxConfig:
    step_size: float = 0.5
    max_iters: int = 200
    convergence_tol: float = 1e-6
    surface_radius: Optional[float] = None
    max_backtracks: int = 8

    def __post_init__(self):
        if not 0 < self.step_size <= 1:
            raise ValueError(f"step_size must be in (0, 1], got {self.step_size}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.convergence_tol > 0:
            raise ValueError(f"convergence_tol must be > 0, got {self.convergence_tol}")
        if self.surface_radius is not None and not self.surface_radius > 0:
            raise ValueError("surface_radius must be positive or None")


@dataclass(frozen=True)
class RelaxedPath:
    points: np.ndarray
    length: float
    iterations_used: int
    initial_length: float


def polyline_length(points: np.ndarray) -> float:
    d = np.diff(points, axis=0)
    return float(np.sqrt(np.einsum("ij,ij->i", d, d)).sum())


def _project(points: np.ndarray, anchors: np.ndarray, radius: float) -> np.ndarray:
    off = points - anchors
    r = np.sqrt(np.einsum("ij,ij->i", off, off))
    scale = np.where(r > radius, radius / np.maximum(r, 1e-300), 1.0)
    return anchors + off * scale[:, None]


def relax_points(points, cfg: RelaxConfig, anchors=None) -> RelaxedPath:
    """Relax an explicit polyline; endpoints are never written.

    Termination uses an a-posteriori bound for a linearly converging
    iteration: with per-step displacement ``d_k`` and observed contraction
    ``rho``, the remaining distance to the fixed point is at most
    ``rho / (1 - rho) * d_k``. The loop stops once that bound is below
    ``convergence_tol``; ``rho`` is the largest ratio over the last five
    steps.
    """
    p = np.array(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3 or len(p) < 2:
        raise ValueError("a relaxed path needs at least 2 three-dimensional points")
    length0 = polyline_length(p)
    if len(p) == 2:
        return RelaxedPath(p, length0, 0, length0)
    anchor = None
    if cfg.surface_radius is not None:
        anchor = np.array(anchors if anchors is not None else p, dtype=np.float64)[1:-1]

    length = length0
    prev_disp = None
    ratios: list = []
    it = 0
    while it < cfg.max_iters:
        it += 1
        interior = p[1:-1]
        delta = 0.5 * (p[:-2] + p[2:]) - interior
        alpha = cfg.step_size
        for _ in range(cfg.max_backtracks + 1):
            trial_int = interior + alpha * delta
            if anchor is not None:
                trial_int = _project(trial_int, anchor, cfg.surface_radius)
            trial = p.copy()
            trial[1:-1] = trial_int
            trial_len = polyline_length(trial)
            if trial_len <= length:
                break
            alpha *= 0.5
        else:
            # no non-lengthening step exists: the chain is at a constrained optimum
            it -= 1
            break
        disp = float(np.abs(trial_int - interior).max())
        p, length = trial, trial_len
        if disp == 0.0:
            break
        if prev_disp is not None:
            ratios.append(disp / prev_disp)
            del ratios[:-5]
        prev_disp = disp
        if len(ratios) == 5:
            rho = max(ratios)
            if rho < 1.0 and rho / (1.0 - rho) * disp < cfg.convergence_tol:
                break
    return RelaxedPath(p, length, it, length0)


def relax_path(path: GeodesicPath, frame: MeshFrame, cfg: RelaxConfig) -> RelaxedPath:
    if len(path.vertices) < 2:
        raise ValueError("cannot relax a path with fewer than 2 points")
    pts = frame.vertices[list(path.vertices)]
    return relax_points(pts, cfg, anchors=pts)


@dataclass(frozen=True)
class RelaxedSeries:
    raw: np.ndarray
    relaxed: np.ndarray
    straight: np.ndarray
    iterations: np.ndarray
    fps: float


def relaxed_series(sequence: MeshSequence, electrodes: ElectrodePair, cfg: RelaxConfig) -> RelaxedSeries:
    """Per-frame raw geodesic, relaxed and straight-line electrode distances.

    Frames with a single-vertex path (source == sink) relax to length 0.
    """
    ps = path_series(sequence, electrodes)
    relaxed, iters, straight = [], [], []
    for frame, gp in zip(sequence.frames, ps.paths):
        a, b = frame.vertices[electrodes.source], frame.vertices[electrodes.sink]
        straight.append(float(np.linalg.norm(a - b)))
        if len(gp.vertices) < 2:
            relaxed.append(0.0)
            iters.append(0)
            continue
        rp = relax_path(gp, frame, cfg)
        relaxed.append(rp.length)
        iters.append(rp.iterations_used)
    return RelaxedSeries(ps.lengths, np.array(relaxed), np.array(straight), np.array(iters), sequence.fps)
