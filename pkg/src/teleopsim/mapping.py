"""Leader-to-follower kinematic mapping.

Targets are computed from the leader's absolute displacement relative to a
frozen engagement reference and applied to the follower's own zero pose,
decoupled into translation and rotation. Two calls with the same displacement
produce the identical target, so frame-to-frame error can never accumulate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Quat


@dataclass(frozen=True)
class EngagementReference:
    """Frozen leader/follower zero poses captured at engagement.

    ``alignment`` optionally rotates leader-frame displacements into the
    follower base frame for rigs where the two frames are not axis-aligned
    at engagement; identity by default.
    """

    leader_zero: Pose
    follower_zero: Pose
    alignment: Quat = field(default_factory=Quat.identity)


@dataclass(frozen=True)
class LeaderDisplacement:
    delta_p: np.ndarray
    delta_q: Quat


def engage(leader_pose: Pose, follower_pose: Pose, alignment: Quat | None = None) -> EngagementReference:
    """Freeze both current poses as the zero reference for mapping."""
    return EngagementReference(leader_pose, follower_pose, alignment or Quat.identity())


def leader_displacement(ref: EngagementReference, leader_now: Pose) -> LeaderDisplacement:
    """Absolute displacement of the leader from its engagement pose.

    The rotational deviation is left-multiplicative: q_now = delta_q * q_zero.
    """
    delta_p = leader_now.position - ref.leader_zero.position
    delta_q = leader_now.orientation * ref.leader_zero.orientation.inverse()
    return LeaderDisplacement(delta_p, delta_q)


def map_target(ref: EngagementReference, disp: LeaderDisplacement) -> Pose:
    """Apply a leader displacement onto the follower zero pose.

    position = follower_zero.position + delta_p
    orientation = delta_q * follower_zero.orientation

    Depends only on (ref, disp), never on any previous target.
    """
    a = ref.alignment
    if a.w == 1.0 and a.x == 0.0 and a.y == 0.0 and a.z == 0.0:
        delta_p = disp.delta_p
        delta_q = disp.delta_q
    else:
        delta_p = a.rotate(disp.delta_p)
        delta_q = (a * disp.delta_q) * a.inverse()
    return Pose(
        ref.follower_zero.position + delta_p,
        delta_q * ref.follower_zero.orientation,
    )


def map_leader_pose(ref: EngagementReference, leader_now: Pose) -> Pose:
    """Convenience: displacement + mapping in one call."""
    return map_target(ref, leader_displacement(ref, leader_now))


def leader_pose_for_target(ref: EngagementReference, follower_target: Pose) -> Pose:
    """Inverse mapping: the leader pose that maps onto ``follower_target``.

    Used by scripted drivers that plan in follower coordinates but feed the
    pipeline through the leader interface. Assumes identity alignment.
    """
    delta_p = follower_target.position - ref.follower_zero.position
    delta_q = follower_target.orientation * ref.follower_zero.orientation.inverse()
    return Pose(
        ref.leader_zero.position + delta_p,
        delta_q * ref.leader_zero.orientation,
    )
