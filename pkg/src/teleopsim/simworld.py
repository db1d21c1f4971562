"""Deterministic dual-arm follower simulator.

Each arm tracks its setpoint with first-order pose dynamics in its own base
frame. A virtual phantom provides the latent acoustic-window pose and the
lesion target, and a synthetic observation model stands in for the real
image stream: plane quality is a smooth kernel around the window pose,
gated by a Lipschitz contact ramp so phase triggers cannot chatter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError
from .geometry import Pose, Quat, Transform, geodesic_distance, hemisphere_align, slerp
from .safety import ToolSpec

DEFAULT_TAU = 0.1          # s, first-order time constant
DEFAULT_SIGMA_POS = 0.01   # m, quality kernel width (position)
DEFAULT_SIGMA_ANG = 0.1    # rad, quality kernel width (orientation)
DEFAULT_CONTACT_TOL = 0.002   # m above the surface still counting as contact
DEFAULT_CONTACT_RAMP = 0.003  # m over which quality ramps in after contact
FEATURE_DIM = 8


@dataclass
class FollowerArm:
    name: str
    pose: Pose
    tau: float = DEFAULT_TAU
    tool: ToolSpec | None = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigurationError(f"{self.name}: tau must be positive")


@dataclass(frozen=True)
class Phantom:
    """Virtual tissue block in the unified frame.

    ``target_plane`` is the probe pose giving the optimal acoustic window;
    ``lesion_point`` is the needle target and must lie inside the tissue.
    """

    surface_height: float
    target_plane: Pose
    lesion_point: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "lesion_point", np.asarray(self.lesion_point, dtype=np.float64).reshape(3)
        )
        if self.lesion_point[2] >= self.surface_height:
            raise ConfigurationError("lesion_point must lie below the phantom surface")


@dataclass(frozen=True)
class UltrasoundObservation:
    features: np.ndarray
    plane_quality: float
    contact: bool


def step_arm(arm: FollowerArm, setpoint: Pose, dt: float) -> Pose:
    """Advance one arm by first-order tracking toward the setpoint.

    Both position and orientation close the same fraction 1 - exp(-dt/tau)
    of their remaining error, so the residual decays exactly exponentially
    under a held setpoint.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    k = 1.0 - math.exp(-dt / arm.tau)
    new_pos = arm.pose.position + k * (setpoint.position - arm.pose.position)
    aligned = hemisphere_align(arm.pose.orientation, setpoint.orientation)
    new_q = slerp(arm.pose.orientation, aligned, k)
    arm.pose = Pose(new_pos, new_q)
    return arm.pose


def probe_tip(probe_pose: Pose, tool: ToolSpec) -> np.ndarray:
    return probe_pose.position + probe_pose.orientation.rotate(tool.tip_offset())


def contact_factor(tip_z: float, phantom: Phantom,
                   tol: float = DEFAULT_CONTACT_TOL,
                   ramp: float = DEFAULT_CONTACT_RAMP) -> float:
    """Smooth 0..1 ramp as the probe tip crosses the contact boundary."""
    depth = (phantom.surface_height + tol) - tip_z
    return min(max(depth / ramp, 0.0), 1.0)


def plane_quality(probe_pose: Pose, phantom: Phantom, tool: ToolSpec,
                  sigma_pos: float = DEFAULT_SIGMA_POS,
                  sigma_ang: float = DEFAULT_SIGMA_ANG,
                  contact_tol: float = DEFAULT_CONTACT_TOL,
                  contact_ramp: float = DEFAULT_CONTACT_RAMP) -> float:
    tip_z = float(probe_tip(probe_pose, tool)[2])
    factor = contact_factor(tip_z, phantom, contact_tol, contact_ramp)
    if factor == 0.0:
        return 0.0
    dp = float(np.linalg.norm(probe_pose.position - phantom.target_plane.position))
    da = geodesic_distance(probe_pose.orientation, phantom.target_plane.orientation)
    kernel = math.exp(-((dp / sigma_pos) ** 2 + (da / sigma_ang) ** 2))
    return factor * kernel


def needle_tip_error(needle_pose_unified: Pose, phantom: Phantom, tool: ToolSpec) -> float:
    """Euclidean distance from the needle tip to the lesion point."""
    tip = needle_pose_unified.position + needle_pose_unified.orientation.rotate(tool.tip_offset())
    return float(np.linalg.norm(tip - phantom.lesion_point))


def needle_axis_to_lesion_distance(needle_pose_unified: Pose, phantom: Phantom,
                                   tool: ToolSpec) -> float:
    """Distance from the lesion to the needle's centerline (extended).

    Drives the pre-alignment trigger: the needle trajectory converges on the
    imaging plane when its axis passes through the lesion.
    """
    axis = needle_pose_unified.orientation.rotate(tool.axis)
    rel = phantom.lesion_point - needle_pose_unified.position
    return float(np.linalg.norm(rel - np.dot(rel, axis) * axis))


@dataclass(frozen=True)
class TickSignals:
    """Per-tick sensor bundle consumed by the phase machine and the policy."""

    observation: UltrasoundObservation
    needle_alignment_distance: float
    needle_tip_error: float


class SimWorld:
    """Both follower arms plus the phantom, advanced by explicit step calls.

    The needle arm lives in its own base frame; ``needle_base`` is the ground
    truth transform into the unified (probe-base) frame, used for phantom
    queries. All randomness flows from one seeded generator, so identical
    (seed, command trace, dt schedule) produce identical traces.
    """

    def __init__(
        self,
        probe: FollowerArm,
        needle: FollowerArm,
        phantom: Phantom,
        needle_base: Transform,
        seed: int = 0,
        feature_noise_std: float = 0.01,
        sigma_pos: float = DEFAULT_SIGMA_POS,
        sigma_ang: float = DEFAULT_SIGMA_ANG,
        contact_tol: float = DEFAULT_CONTACT_TOL,
        contact_ramp: float = DEFAULT_CONTACT_RAMP,
    ):
        if probe.tool is None or needle.tool is None:
            raise ConfigurationError("both arms need a tool spec")
        self.probe = probe
        self.needle = needle
        self.phantom = phantom
        self.needle_base = needle_base
        self.feature_noise_std = feature_noise_std
        self.sigma_pos = sigma_pos
        self.sigma_ang = sigma_ang
        self.contact_tol = contact_tol
        self.contact_ramp = contact_ramp
        self._rng = np.random.default_rng(seed)
        # fixed mixing matrix stands in for a learned image encoder
        self._mix = np.random.default_rng(seed + 1).normal(
            size=(FEATURE_DIM, FEATURE_DIM)
        ) / math.sqrt(FEATURE_DIM)

    def needle_pose_unified(self) -> Pose:
        return self.needle_base.apply_pose(self.needle.pose)

    def observe(self) -> UltrasoundObservation:
        """Synthetic ultrasound observation at the current probe pose."""
        pose = self.probe.pose
        tool = self.probe.tool
        tip_z = float(probe_tip(pose, tool)[2])
        factor = contact_factor(tip_z, self.phantom, self.contact_tol, self.contact_ramp)
        contact = tip_z <= self.phantom.surface_height + self.contact_tol
        quality = plane_quality(
            pose, self.phantom, tool,
            self.sigma_pos, self.sigma_ang, self.contact_tol, self.contact_ramp,
        )
        if contact:
            dp = self.phantom.target_plane.position - pose.position
            dq = (self.phantom.target_plane.orientation * pose.orientation.inverse()).to_rotvec()
            signal = np.concatenate([dp, dq, [quality, factor]])
        else:
            signal = np.zeros(FEATURE_DIM)
        noise = self._rng.normal(size=FEATURE_DIM) * self.feature_noise_std
        features = np.tanh(self._mix @ signal) + noise
        return UltrasoundObservation(features=features, plane_quality=quality, contact=contact)

    def signals(self) -> TickSignals:
        unified = self.needle_pose_unified()
        return TickSignals(
            observation=self.observe(),
            needle_alignment_distance=needle_axis_to_lesion_distance(
                unified, self.phantom, self.needle.tool
            ),
            needle_tip_error=needle_tip_error(unified, self.phantom, self.needle.tool),
        )

    def step(self, probe_setpoint: Pose, needle_setpoint: Pose, dt: float) -> TickSignals:
        """Advance both arms one tick and return the fresh sensor bundle."""
        step_arm(self.probe, probe_setpoint, dt)
        step_arm(self.needle, needle_setpoint, dt)
        return self.signals()
