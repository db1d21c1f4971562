"""Rigid-body geometry kernel: unit quaternions, poses, transforms.

Conventions used across the package:
    - Quaternions are stored as (w, x, y, z), Hamilton product, double precision.
    - q and -q denote the same rotation.
    - Positions and translations are 3-vectors in meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Unit-norm tolerance maintained after every constructor/operation.
UNIT_TOL = 1e-9

# Below this quaternion-space angle the slerp closed form divides by ~0;
# fall back to normalized linear interpolation.
SLERP_PARALLEL_ANGLE = 1e-7


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3).copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Quat:
    """Unit quaternion (w, x, y, z).

    Constructors normalize; ``normalized`` skips the division when the norm
    is already 1 within tolerance so that exact values pass through bitwise.
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        # keep components plain Python floats so serialization stays clean
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))

    @staticmethod
    def identity() -> "Quat":
        return Quat(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_array(a) -> "Quat":
        w, x, y, z = (float(c) for c in a)
        return Quat(w, x, y, z).normalized()

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Quat":
        ax = np.asarray(axis, dtype=np.float64)
        n = float(np.linalg.norm(ax))
        if n == 0.0:
            raise ValueError("rotation axis must be nonzero")
        ax = ax / n
        h = 0.5 * angle
        s = math.sin(h)
        return Quat(math.cos(h), s * ax[0], s * ax[1], s * ax[2]).normalized()

    @staticmethod
    def from_rotvec(rv) -> "Quat":
        rv = np.asarray(rv, dtype=np.float64)
        angle = float(np.linalg.norm(rv))
        if angle < 1e-12:
            # first-order expansion, still unit after normalize
            return Quat(1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]).normalized()
        return Quat.from_axis_angle(rv / angle, angle)

    def to_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def to_rotvec(self) -> np.ndarray:
        q = self if self.w >= 0.0 else self.negated()
        sin_half = math.sqrt(q.x * q.x + q.y * q.y + q.z * q.z)
        angle = 2.0 * math.atan2(sin_half, q.w)
        if sin_half < 1e-12:
            return np.array([2.0 * q.x, 2.0 * q.y, 2.0 * q.z])
        return (angle / sin_half) * np.array([q.x, q.y, q.z])

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def normalized(self) -> "Quat":
        if self.x == 0.0 and self.y == 0.0 and self.z == 0.0 and self.w != 0.0:
            # pure-scalar quaternions normalize exactly to +/- identity
            return Quat(math.copysign(1.0, self.w), 0.0, 0.0, 0.0)
        n2 = self.w**2 + self.x**2 + self.y**2 + self.z**2
        if abs(n2 - 1.0) < 1e-14:
            return self
        n = math.sqrt(n2)
        if n < 1e-300:
            raise ValueError("cannot normalize zero quaternion")
        return Quat(self.w / n, self.x / n, self.y / n, self.z / n)

    def negated(self) -> "Quat":
        return Quat(-self.w, -self.x, -self.y, -self.z)

    def conjugate(self) -> "Quat":
        return Quat(self.w, -self.x, -self.y, -self.z)

    def inverse(self) -> "Quat":
        # unit quaternion: inverse == conjugate
        return self.conjugate().normalized()

    def dot(self, other: "Quat") -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z

    def __mul__(self, other: "Quat") -> "Quat":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quat(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ).normalized()

    def rotate(self, v) -> np.ndarray:
        """Rotate a 3-vector by this quaternion."""
        v = np.asarray(v, dtype=np.float64)
        u = np.array([self.x, self.y, self.z])
        t = 2.0 * np.cross(u, v)
        return v + self.w * t + np.cross(u, t)

    def to_matrix(self) -> np.ndarray:
        """Rotation-matrix view (3x3), computed on demand."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def approx_equal(self, other: "Quat", tol: float = 1e-9) -> bool:
        return geodesic_distance(self, other) <= tol


@dataclass(frozen=True)
class Pose:
    """Rigid-body state: position (m) plus unit-quaternion orientation."""

    position: np.ndarray
    orientation: Quat

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec3(self.position))
        object.__setattr__(self, "orientation", self.orientation.normalized())

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), Quat.identity())

    def approx_equal(self, other: "Pose", pos_tol: float = 1e-9, ang_tol: float = 1e-9) -> bool:
        return (
            float(np.linalg.norm(self.position - other.position)) <= pos_tol
            and geodesic_distance(self.orientation, other.orientation) <= ang_tol
        )


@dataclass(frozen=True)
class Transform:
    """Rigid transform: p_out = rotation * p_in + translation."""

    rotation: Quat = field(default_factory=Quat.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "translation", _as_vec3(self.translation))
        object.__setattr__(self, "rotation", self.rotation.normalized())

    @staticmethod
    def identity() -> "Transform":
        return Transform(Quat.identity(), np.zeros(3))

    def apply_point(self, p) -> np.ndarray:
        return self.rotation.rotate(p) + self.translation

    def apply_direction(self, d) -> np.ndarray:
        return self.rotation.rotate(d)

    def apply_pose(self, pose: Pose) -> Pose:
        return Pose(self.apply_point(pose.position), self.rotation * pose.orientation)

    def approx_equal(self, other: "Transform", tol: float = 1e-9) -> bool:
        return (
            float(np.linalg.norm(self.translation - other.translation)) <= tol
            and geodesic_distance(self.rotation, other.rotation) <= tol
        )


def compose(t1: Transform, t2: Transform) -> Transform:
    """Rigid composition: (t1 * t2) applies t2 first, then t1."""
    return Transform(t1.rotation * t2.rotation, t1.rotation.rotate(t2.translation) + t1.translation)


def invert(t: Transform) -> Transform:
    qi = t.rotation.inverse()
    return Transform(qi, -qi.rotate(t.translation))


def chain(*transforms: Transform) -> Transform:
    """Left-to-right product of transforms: chain(a, b, c) == a * b * c."""
    out = Transform.identity()
    for t in transforms:
        out = compose(out, t)
    return out


def lerp(p1, p2, alpha: float) -> np.ndarray:
    """Linear interpolation between two 3-vectors; exact at both endpoints."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if alpha == 0.0:
        return p1.copy()
    if alpha == 1.0:
        return p2.copy()
    return (1.0 - alpha) * p1 + alpha * p2


def hemisphere_align(q_prev: Quat, q_target: Quat) -> Quat:
    """Return q_target or its negation so that dot(q_prev, result) >= 0.

    Keeping consecutive quaternions in the same hemisphere guarantees the
    interpolation takes the shortest rotation path.
    """
    if q_prev.dot(q_target) < 0.0:
        return q_target.negated()
    return q_target


def slerp(q_prev: Quat, q_target: Quat, alpha: float) -> Quat:
    """Spherical linear interpolation along the great-circle arc.

    Expects hemisphere-aligned inputs (dot >= 0); apply ``hemisphere_align``
    first. Near-identical inputs (arc angle < 1e-7 rad in quaternion space)
    fall back to normalized linear interpolation, which is indistinguishable
    at that scale and avoids the sin(theta) division.
    """
    d = max(-1.0, min(1.0, q_prev.dot(q_target)))
    theta = math.acos(d)
    if theta < SLERP_PARALLEL_ANGLE:
        a = q_prev.to_array()
        b = q_target.to_array()
        return Quat.from_array((1.0 - alpha) * a + alpha * b)
    s = math.sin(theta)
    c1 = math.sin((1.0 - alpha) * theta) / s
    c2 = math.sin(alpha * theta) / s
    a = q_prev.to_array()
    b = q_target.to_array()
    return Quat.from_array(c1 * a + c2 * b)


def geodesic_distance(q1: Quat, q2: Quat) -> float:
    """Angular distance between two rotations in radians, in [0, pi].

    Sign-invariant: q and -q are the same rotation. Equivalent to
    2*acos(|q1 . q2|) but computed through atan2 of the chord lengths,
    which keeps full precision for nearly identical rotations where the
    acos form bottoms out around 1e-8.
    """
    a = q1.to_array()
    b = q2.to_array()
    if float(a @ b) < 0.0:
        b = -b
    return 4.0 * math.atan2(float(np.linalg.norm(a - b)), float(np.linalg.norm(a + b)))


def random_quat(rng: np.random.Generator) -> Quat:
    """Uniform random unit quaternion."""
    v = rng.normal(size=4)
    n = float(np.linalg.norm(v))
    while n < 1e-12:
        v = rng.normal(size=4)
        n = float(np.linalg.norm(v))
    return Quat.from_array(v / n)
