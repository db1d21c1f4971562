"""Two-level bimanual safety gate.

Level one saturates each arm's Cartesian target into its workspace box.
Level two abstracts both tools as bounding cylinders in a unified frame
(via the six-term calibration chain) and executes a dual-arm command only
if the centerline distance satisfies d_min >= r1 + r2 + clearance.
Commands that violate the threshold are blocked and the last safe target
pair is held.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError
from .geometry import Pose, Transform, chain, invert

# Segments count as parallel when |u . v| exceeds this; the closed form
# would otherwise divide by 1 - (u . v)^2.
PARALLEL_DOT = 1.0 - 1e-10


@dataclass(frozen=True)
class WorkspaceLimits:
    """Axis-aligned workspace box in one arm's base frame."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", np.asarray(self.min, dtype=np.float64).reshape(3))
        object.__setattr__(self, "max", np.asarray(self.max, dtype=np.float64).reshape(3))
        if np.any(self.min > self.max):
            raise ConfigurationError("workspace min must be <= max componentwise")


@dataclass(frozen=True)
class ArmCalibration:
    """One arm's half of the calibration chain, captured at calibration time."""

    base_to_ee: Transform   # forward kinematics snapshot
    ee_to_cam: Transform    # wrist camera mount
    cam_to_marker: Transform  # board pose seen by that camera


@dataclass(frozen=True)
class CalibrationSet:
    probe: ArmCalibration   # unified-frame arm
    needle: ArmCalibration


@dataclass(frozen=True)
class ToolSpec:
    """Cylinder abstraction of a mounted tool, in the end-effector frame."""

    axis: np.ndarray      # unit direction of the shaft, tool frame
    length: float         # m
    radius: float         # m
    name: str = "tool"

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64).reshape(3)
        n = float(np.linalg.norm(a))
        if abs(n - 1.0) > 1e-9:
            raise ConfigurationError(f"{self.name}: tool axis must be unit length")
        object.__setattr__(self, "axis", a)
        if self.length <= 0 or self.radius <= 0:
            raise ConfigurationError(f"{self.name}: length and radius must be positive")

    def tip_offset(self) -> np.ndarray:
        return self.axis * self.length


@dataclass(frozen=True)
class BoundingCylinder:
    anchor: np.ndarray
    axis: np.ndarray
    length: float
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=np.float64).reshape(3))
        a = np.asarray(self.axis, dtype=np.float64).reshape(3)
        if abs(float(np.linalg.norm(a)) - 1.0) > 1e-9:
            raise ValueError("cylinder axis must be unit length")
        object.__setattr__(self, "axis", a)
        if self.length <= 0 or self.radius <= 0:
            raise ValueError("cylinder length and radius must be positive")


class VerdictKind(Enum):
    ALLOWED = "allowed"
    CLAMPED = "clamped"
    BLOCKED = "blocked"


@dataclass(frozen=True)
class SafetyVerdict:
    kind: VerdictKind
    adjusted_probe: Pose
    adjusted_needle: Pose
    d_min: float


def clamp_workspace(target: Pose, limits: WorkspaceLimits) -> Pose:
    """Saturate the target position into the workspace box; orientation
    passes through unchanged."""
    clamped = np.clip(target.position, limits.min, limits.max)
    if np.array_equal(clamped, target.position):
        return target
    return Pose(clamped, target.orientation)


def base_to_base(cal: CalibrationSet) -> Transform:
    """Needle-arm base expressed in the probe-arm base frame.

    Six-term chain: the probe half maps base -> board, the inverted needle
    half maps board -> base, and a shared board makes the product exactly
    the relative base transform.
    """
    return chain(
        cal.probe.base_to_ee,
        cal.probe.ee_to_cam,
        cal.probe.cam_to_marker,
        invert(cal.needle.cam_to_marker),
        invert(cal.needle.ee_to_cam),
        invert(cal.needle.base_to_ee),
    )


def tool_cylinder(pose: Pose, tool: ToolSpec) -> BoundingCylinder:
    """Bounding cylinder of a tool mounted at ``pose`` (same frame as pose)."""
    return BoundingCylinder(
        anchor=pose.position,
        axis=pose.orientation.rotate(tool.axis),
        length=tool.length,
        radius=tool.radius,
    )


def transform_cylinder(t: Transform, c: BoundingCylinder) -> BoundingCylinder:
    return BoundingCylinder(
        anchor=t.apply_point(c.anchor),
        axis=t.apply_direction(c.axis),
        length=c.length,
        radius=c.radius,
    )


def segment_min_distance(c1: BoundingCylinder, c2: BoundingCylinder):
    """Minimum distance between the two centerline segments.

    Closed-form clamped closest-point computation with an explicit
    parallel branch. Returns (d_min, lambda1, lambda2) where lambda_i is
    the arc-length parameter of the closest point on segment i.
    """
    a0, u, l1_max = c1.anchor, c1.axis, c1.length
    b0, v, l2_max = c2.anchor, c2.axis, c2.length
    r = a0 - b0
    uv = float(np.dot(u, v))
    ru = float(np.dot(r, u))
    rv = float(np.dot(r, v))

    if abs(uv) > PARALLEL_DOT:
        lam1 = 0.0
    else:
        denom = 1.0 - uv * uv
        lam1 = min(max((uv * rv - ru) / denom, 0.0), l1_max)

    # optimal lambda2 for fixed lambda1, then re-clamp lambda1 if needed
    lam2 = rv + lam1 * uv
    if lam2 < 0.0:
        lam2 = 0.0
        lam1 = min(max(-ru, 0.0), l1_max)
    elif lam2 > l2_max:
        lam2 = l2_max
        lam1 = min(max(uv * l2_max - ru, 0.0), l1_max)

    p1 = a0 + lam1 * u
    p2 = b0 + lam2 * v
    return float(np.linalg.norm(p1 - p2)), lam1, lam2


def collision_threshold(probe_tool: ToolSpec, needle_tool: ToolSpec, clearance: float) -> float:
    """Distance below which a dual-arm command is blocked: r1 + r2 + c."""
    return probe_tool.radius + needle_tool.radius + clearance


class SafetyGate:
    """Stateful gate applied to every emitted setpoint pair.

    Workspace clamping runs first per arm, then the joint collision check in
    the unified frame. A blocked command holds the last safe pair; the stored
    pair always satisfies the gate itself, so blocking is sticky-safe.
    """

    def __init__(
        self,
        probe_limits: WorkspaceLimits,
        needle_limits: WorkspaceLimits,
        probe_tool: ToolSpec,
        needle_tool: ToolSpec,
        cal: CalibrationSet | None,
        clearance: float,
        initial_probe: Pose,
        initial_needle: Pose,
    ):
        if cal is None:
            raise ConfigurationError(
                "collision gate requires a calibration set; refusing all commands"
            )
        if clearance < 0:
            raise ConfigurationError("clearance must be non-negative")
        self.probe_limits = probe_limits
        self.needle_limits = needle_limits
        self.probe_tool = probe_tool
        self.needle_tool = needle_tool
        self.needle_to_probe_base = base_to_base(cal)
        self.threshold = collision_threshold(probe_tool, needle_tool, clearance)
        first = self.evaluate(
            clamp_workspace(initial_probe, probe_limits),
            clamp_workspace(initial_needle, needle_limits),
        )
        if first < self.threshold:
            raise ConfigurationError(
                f"initial pose pair violates the collision gate "
                f"(d_min={first:.4f} < {self.threshold:.4f})"
            )
        self.last_safe_probe = clamp_workspace(initial_probe, probe_limits)
        self.last_safe_needle = clamp_workspace(initial_needle, needle_limits)

    def evaluate(self, target_probe: Pose, target_needle: Pose) -> float:
        """Centerline distance for a candidate pair in the unified frame."""
        probe_cyl = tool_cylinder(target_probe, self.probe_tool)
        needle_cyl = transform_cylinder(
            self.needle_to_probe_base, tool_cylinder(target_needle, self.needle_tool)
        )
        d, _, _ = segment_min_distance(probe_cyl, needle_cyl)
        return d

    def gate(self, target_probe: Pose, target_needle: Pose) -> SafetyVerdict:
        clamped_probe = clamp_workspace(target_probe, self.probe_limits)
        clamped_needle = clamp_workspace(target_needle, self.needle_limits)
        was_clamped = clamped_probe is not target_probe or clamped_needle is not target_needle

        d = self.evaluate(clamped_probe, clamped_needle)
        if d < self.threshold or not math.isfinite(d):
            return SafetyVerdict(
                VerdictKind.BLOCKED, self.last_safe_probe, self.last_safe_needle, d
            )
        self.last_safe_probe = clamped_probe
        self.last_safe_needle = clamped_needle
        kind = VerdictKind.CLAMPED if was_clamped else VerdictKind.ALLOWED
        return SafetyVerdict(kind, clamped_probe, clamped_needle, d)
