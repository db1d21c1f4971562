"""Independent verification oracles used by the test suite.

Each oracle deliberately avoids the code path it checks: brute-force grid
search instead of the closed-form segment distance, quaternion exp/log maps
instead of the sin-ratio slerp, finite differences instead of backprop, and
frame-to-frame integration as a drift foil for the absolute pose mapping.
They are slow by design.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import Pose, Quat


def quat_log(q: Quat) -> np.ndarray:
    """Log map of a unit quaternion: rotation vector of half-angle length."""
    v = np.array([q.x, q.y, q.z])
    s = float(np.linalg.norm(v))
    if s < 1e-15:
        return np.zeros(3)
    angle = math.atan2(s, q.w)
    return (angle / s) * v


def quat_exp(v) -> Quat:
    """Exp map: inverse of quat_log."""
    v = np.asarray(v, dtype=np.float64)
    angle = float(np.linalg.norm(v))
    if angle < 1e-15:
        return Quat(1.0, v[0], v[1], v[2]).normalized()
    s = math.sin(angle) / angle
    return Quat(math.cos(angle), s * v[0], s * v[1], s * v[2]).normalized()


def slerp_reference(q1: Quat, q2: Quat, alpha: float) -> Quat:
    """Great-circle interpolation via q1 * exp(alpha * log(q1^-1 * q2))."""
    rel = q1.inverse() * q2
    return q1 * quat_exp(alpha * quat_log(rel))


def brute_segment_distance(c1, c2, grid: int = 200, refinements: int = 2) -> float:
    """Minimum distance between two segments by nested grid refinement.

    Evaluates an initial (grid x grid) lattice over both segment parameters,
    then re-grids around the best cell ``refinements`` times. Guaranteed to
    be >= the true minimum and converges well below 1e-6 for desk-scale
    segments with the default settings.
    """
    a0 = np.asarray(c1.anchor, dtype=np.float64)
    u = np.asarray(c1.axis, dtype=np.float64)
    b0 = np.asarray(c2.anchor, dtype=np.float64)
    v = np.asarray(c2.axis, dtype=np.float64)
    lo1, hi1 = 0.0, float(c1.length)
    lo2, hi2 = 0.0, float(c2.length)

    best = math.inf
    for _ in range(refinements + 1):
        l1 = np.linspace(lo1, hi1, grid)
        l2 = np.linspace(lo2, hi2, grid)
        p1 = a0[None, :] + l1[:, None] * u[None, :]
        p2 = b0[None, :] + l2[:, None] * v[None, :]
        d2 = np.sum((p1[:, None, :] - p2[None, :, :]) ** 2, axis=2)
        i, j = np.unravel_index(int(np.argmin(d2)), d2.shape)
        best = min(best, math.sqrt(float(d2[i, j])))
        # shrink the window to one cell either side of the best lattice point
        step1 = (hi1 - lo1) / (grid - 1)
        step2 = (hi2 - lo2) / (grid - 1)
        lo1, hi1 = max(0.0, l1[i] - step1), min(float(c1.length), l1[i] + step1)
        lo2, hi2 = max(0.0, l2[j] - step2), min(float(c2.length), l2[j] + step2)
    return best


def fd_gradient(loss_fn, params: dict, coords, step: float = 1e-5) -> dict:
    """Central finite differences of loss_fn(params) at selected coordinates.

    ``coords`` is an iterable of (name, flat_index); the result maps each
    coordinate to its scalar derivative estimate. params values are mutated
    in place during probing and restored afterwards.
    """
    grads = {}
    for name, idx in coords:
        arr = params[name]
        orig = arr.flat[idx]
        arr.flat[idx] = orig + step
        f_plus = float(loss_fn(params))
        arr.flat[idx] = orig - step
        f_minus = float(loss_fn(params))
        arr.flat[idx] = orig
        grads[(name, idx)] = (f_plus - f_minus) / (2.0 * step)
    return grads


def drift_foil(ref, leader_trace) -> Pose:
    """Frame-to-frame incremental integration of a leader trace.

    This is the approach the absolute mapping exists to avoid: each step
    applies the delta between consecutive leader poses to the running target,
    so floating-point error and normalization drift accumulate with the path.
    Used as a negative reference in drift tests.
    """
    target_p = ref.follower_zero.position.copy()
    target_q = ref.follower_zero.orientation
    prev = ref.leader_zero
    for pose in leader_trace:
        target_p = target_p + (pose.position - prev.position)
        dq = pose.orientation * prev.orientation.inverse()
        target_q = (dq * target_q).normalized()
        prev = pose
    return Pose(target_p, target_q)


def analytic_settle_time(tau: float, fraction: float = 0.02) -> float:
    """Time for a first-order lag to shrink its error to ``fraction``."""
    return -tau * math.log(fraction)
