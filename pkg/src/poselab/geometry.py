"""Quaternion and pose algebra.

Quaternions are scalar-first ``(w, x, y, z)``. Every constructor returns the
double-cover representative with ``w >= 0``; when ``w == 0`` the first
nonzero of ``x, y, z`` is made positive.

Poses are camera-to-world. The camera frame is x right, y down, z forward
(optical axis), so rolling the camera means rotating about its own z axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEGENERATE_NORM = 1e-12
UNIT_TOL = 1e-9
ORTHO_TOL = 1e-6

CAMERA_FORWARD = (0.0, 0.0, 1.0)
# Sign linking an image rotation by +theta (counter-clockwise on screen) to
# the label rewrite. Pinned by the render/rotate equivariance tests.
ROLL_SIGN = 1.0


class DegenerateRotationError(ValueError):
    pass


def _canonical(w: float, x: float, y: float, z: float) -> tuple:
    if w < 0 or (w == 0 and _first_nonzero(x, y, z) < 0):
        return (-w, -x, -y, -z)
    return (w, x, y, z)


def _first_nonzero(*vals: float) -> float:
    for v in vals:
        if v != 0:
            return v
    return 0.0


@dataclass(frozen=True)
class UnitQuaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w ** 2 + self.x ** 2 + self.y ** 2 + self.z ** 2)
        if abs(n - 1.0) > UNIT_TOL:
            raise ValueError(f"quaternion norm {n!r} is not 1; use normalize()")

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def __iter__(self):
        return iter((self.w, self.x, self.y, self.z))

    def __neg__(self) -> "UnitQuaternion":
        # the other double-cover representative, deliberately not canonical
        return UnitQuaternion(-self.w, -self.x, -self.y, -self.z)

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(*_canonical(self.w, -self.x, -self.y, -self.z))

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        return hamilton_product(self, other)

    def to_matrix(self) -> np.ndarray:
        return quaternion_to_matrix(self)

    def rotate(self, v: Sequence[float]) -> np.ndarray:
        return self.to_matrix() @ np.asarray(v, dtype=float)


def normalize(raw: Sequence[float]) -> UnitQuaternion:
    """Scale a 4-vector to unit length and pick the ``w >= 0`` representative."""
    w, x, y, z = (float(v) for v in raw)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if not n > DEGENERATE_NORM:
        raise DegenerateRotationError(f"cannot normalize quaternion with norm {n:g}")
    return UnitQuaternion(*_canonical(w / n, x / n, y / n, z / n))


def hamilton_product(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return normalize((
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ))


def from_axis_angle(axis: Sequence[float], theta_deg: float) -> UnitQuaternion:
    ax = np.asarray(axis, dtype=float)
    n = float(np.linalg.norm(ax))
    if ax.shape != (3,) or abs(n - 1.0) > UNIT_TOL:
        raise ValueError(f"axis must be a unit 3-vector, got norm {n!r}")
    half = math.radians(theta_deg) / 2.0
    s = math.sin(half)
    return normalize((math.cos(half), s * ax[0], s * ax[1], s * ax[2]))


def angular_distance_deg(a: UnitQuaternion, b: UnitQuaternion) -> float:
    """Rotation angle between two orientations, in degrees, within [0, 180].

    Equals ``2 * arccos(min(1, |a.b|))`` but is evaluated through
    ``atan2(|a - b|, |a + b|)`` after aligning signs; arccos loses about half
    the significant digits near zero angle.
    """
    pa, pb = a.as_array(), b.as_array()
    if float(pa @ pb) < 0:
        pb = -pb
    return math.degrees(4.0 * math.atan2(float(np.linalg.norm(pa - pb)), float(np.linalg.norm(pa + pb))))


def quaternion_to_matrix(q: UnitQuaternion) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quaternion(R) -> UnitQuaternion:
    """Rotation matrix to quaternion, branching on the largest of w, x, y, z."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise DegenerateRotationError(f"expected a finite 3x3 matrix, got shape {R.shape}")
    ortho_dev = float(np.max(np.abs(R.T @ R - np.eye(3))))
    det = float(np.linalg.det(R))
    if ortho_dev > ORTHO_TOL or abs(det - 1.0) > ORTHO_TOL:
        raise DegenerateRotationError(
            f"not a rotation: max |R^T R - I| = {ortho_dev:.3g}, det = {det:.6g}")
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    # 4*w^2, 4*x^2, 4*y^2, 4*z^2 up to the unit-norm constraint
    cand = (1 + tr, 1 + R[0, 0] - R[1, 1] - R[2, 2],
            1 - R[0, 0] + R[1, 1] - R[2, 2], 1 - R[0, 0] - R[1, 1] + R[2, 2])
    k = int(np.argmax(cand))
    s = 2.0 * math.sqrt(cand[k])
    if k == 0:
        q = (s / 4, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
    elif k == 1:
        q = ((R[2, 1] - R[1, 2]) / s, s / 4, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
    elif k == 2:
        q = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, s / 4, (R[1, 2] + R[2, 1]) / s)
    else:
        q = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, s / 4)
    return normalize(q)


@dataclass(frozen=True)
class Pose:
    """Camera-to-world pose; ``position`` in meters."""

    position: tuple
    orientation: UnitQuaternion

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(math.isfinite(v) for v in pos):
            raise ValueError(f"position must be 3 finite numbers, got {self.position!r}")
        object.__setattr__(self, "position", pos)
        if not isinstance(self.orientation, UnitQuaternion):
            raise TypeError("orientation must be a UnitQuaternion")

    def to_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.orientation.to_matrix()
        T[:3, 3] = self.position
        return T

    def inverse(self) -> "Pose":
        R = self.orientation.to_matrix()
        t = -R.T @ np.asarray(self.position)
        return Pose(tuple(t), self.orientation.conjugate())


def apply_roll_augmentation(label: Pose, theta_deg: float) -> Pose:
    """Label for the image rotated by ``theta_deg`` about its center.

    Position is passed through untouched; the orientation is composed on the
    right with a rotation about the camera's optical axis.
    """
    if not math.isfinite(theta_deg):
        raise ValueError("theta must be finite")
    if theta_deg == 0:
        return label
    roll = from_axis_angle(CAMERA_FORWARD, ROLL_SIGN * theta_deg)
    return Pose(label.position, hamilton_product(label.orientation, roll))
