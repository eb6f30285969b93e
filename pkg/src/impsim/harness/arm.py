"""Two-segment articulated arm used as a desk-scale body model.

The arm is an open tube along +x: upper arm from the shoulder to the elbow,
forearm beyond it. Flexion bends the forearm about the z axis through the
elbow, with a linear skinning blend over ``blend`` metres either side of the
joint so the surface stays smooth. The flexion angle is carried in pose
joint ``ELBOW_JOINT`` (axis z) so arm recordings share the pose CSV format.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..geodesic import ElectrodePair
from ..mesh import MeshFrame, MeshSequence
from ..signal import POSE_JOINTS

ELBOW_JOINT = 19


@dataclass(frozen=True)
class ArmModel:
    upper: float = 0.30
    fore: float = 0.26
    radius: float = 0.04
    rings: int = 16
    sides: int = 6
    blend: float = 0.05
    fore_radius: Optional[float] = None

    def __post_init__(self):
        if self.rings < 3 or self.sides < 3:
            raise ValueError("arm needs at least 3 rings and 3 sides")
        if min(self.upper, self.fore, self.radius, self.blend) <= 0:
            raise ValueError("arm dimensions must be positive")
        if self.fore_radius is not None and self.fore_radius <= 0:
            raise ValueError("fore_radius must be positive")

    @property
    def vertex_count(self) -> int:
        return self.rings * self.sides

    def to_dict(self) -> dict:
        return asdict(self)

    def rest_vertices(self) -> np.ndarray:
        xs = np.linspace(0.0, self.upper + self.fore, self.rings)
        ang = 2 * np.pi * np.arange(self.sides) / self.sides
        x = np.repeat(xs, self.sides)
        fore = self.radius if self.fore_radius is None else self.fore_radius
        r = np.repeat(np.where(xs > self.upper, fore, self.radius), self.sides)
        y = r * np.tile(np.cos(ang), self.rings)
        z = r * np.tile(np.sin(ang), self.rings)
        return np.column_stack([x, y, z])

    def faces(self) -> np.ndarray:
        f = []
        s = self.sides
        for r in range(self.rings - 1):
            for k in range(s):
                a, b = r * s + k, r * s + (k + 1) % s
                c, d = a + s, b + s
                f.append((a, b, d))
                f.append((a, d, c))
        return np.array(f, dtype=np.int64)

    def electrodes(self) -> ElectrodePair:
        # both on the inner (+y) side: ring 2 of the upper arm and two rings before the wrist
        return ElectrodePair(2 * self.sides, (self.rings - 3) * self.sides)

    def skin_weights(self) -> np.ndarray:
        x = self.rest_vertices()[:, 0]
        return np.clip((x - (self.upper - self.blend)) / (2 * self.blend), 0.0, 1.0)

    def pose(self, angle: float, rest=None, weights=None) -> np.ndarray:
        """Vertex positions at flexion ``angle`` (radians, positive folds toward +y)."""
        rest = self.rest_vertices() if rest is None else rest
        w = self.skin_weights() if weights is None else weights
        th = w * angle
        c, s = np.cos(th), np.sin(th)
        dx = rest[:, 0] - self.upper
        dy = rest[:, 1]
        out = rest.copy()
        out[:, 0] = self.upper + c * dx - s * dy
        out[:, 1] = s * dx + c * dy
        return out

    def frame(self, angle: float) -> MeshFrame:
        return MeshFrame(self.pose(angle), self.faces())

    def sequence(self, angles, fps: float) -> MeshSequence:
        rest, w, faces = self.rest_vertices(), self.skin_weights(), self.faces()
        frames = [MeshFrame(self.pose(float(a), rest, w), faces) for a in np.asarray(angles, dtype=np.float64)]
        return MeshSequence(frames, fps)


def angles_to_pose(angles) -> np.ndarray:
    """(T,) flexion angles to (T, 52, 3) axis-angle pose with only the elbow set."""
    a = np.asarray(angles, dtype=np.float64)
    pose = np.zeros((len(a), POSE_JOINTS, 3))
    pose[:, ELBOW_JOINT, 2] = a
    return pose


def pose_to_angles(pose) -> np.ndarray:
    p = np.asarray(pose, dtype=np.float64)
    return p.reshape(len(p), POSE_JOINTS, 3)[:, ELBOW_JOINT, 2].copy()


def body_model(kind: str, **overrides) -> ArmModel:
    """``articulated_arm`` is a skinned tube; ``cylinder_pair`` a near-rigid hinge between two radii."""
    if kind == "articulated_arm":
        return ArmModel(**overrides)
    if kind == "cylinder_pair":
        return ArmModel(**{"blend": 0.005, "fore_radius": 0.032, **overrides})
    raise ValueError(f"unknown body model {kind!r}")


MAX_FLEXION = math.radians(130.0)
