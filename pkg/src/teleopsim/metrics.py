"""Evaluation metrics over episode logs.

All metrics are pure functions of a stored log: recomputing them on a file
read back from disk matches the values computed live. Angles are radians
internally; summary formatting converts to degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .episodes import EpisodeLog
from .geometry import Pose, Quat, geodesic_distance
from .phases import Phase

# A leader pose is "at" another when within these bounds; used only to find
# the arrival tick in move-and-hold traces, not as an accuracy claim.
ARRIVAL_POS_EPS = 1e-9
ARRIVAL_ANG_EPS = 1e-9

DEFAULT_HOLD_S = 0.5


@dataclass(frozen=True)
class LatencyResult:
    settled: bool
    latency: float | None          # s; None when the follower never settles
    arrival_tick: int
    settle_tick: int | None
    residual_pos: float            # m, at end of log
    residual_ang: float            # rad


def _pose_close(a: Pose, b: Pose, pos_eps: float, ang_eps: float) -> bool:
    return (
        float(np.linalg.norm(a.position - b.position)) <= pos_eps
        and geodesic_distance(a.orientation, b.orientation) <= ang_eps
    )


def _leader_arrival_tick(log: EpisodeLog, arm: str) -> int:
    """Last tick at which the leader still differed from its final pose, +1.

    Invariant to prepending idle segments: only the final move matters.
    """
    records = log.records
    final = getattr(records[-1], f"leader_{arm}")
    arrival = 0
    for i in range(len(records) - 1, -1, -1):
        pose = getattr(records[i], f"leader_{arm}")
        if not _pose_close(pose, final, ARRIVAL_POS_EPS, ARRIVAL_ANG_EPS):
            arrival = i + 1
            break
    return arrival


def endpoint_latency(log: EpisodeLog, settle_eps_pos: float, settle_eps_ang: float,
                     hold: float = DEFAULT_HOLD_S, arm: str = "probe") -> LatencyResult:
    """Delay between leader arrival and the follower's stabilized settle.

    The follower has settled at the first tick from which it stays within
    (settle_eps_pos, settle_eps_ang) of its final commanded target for a
    continuous ``hold`` seconds.
    """
    if not log.records:
        raise ValueError("empty episode log")
    records = log.records
    dt = log.dt
    hold_ticks = max(1, int(round(hold / dt)))
    arrival = _leader_arrival_tick(log, arm)
    target = getattr(records[-1], f"target_{arm}")

    within = [
        _pose_close(getattr(r, f"follower_{arm}"), target, settle_eps_pos, settle_eps_ang)
        for r in records
    ]
    settle_tick = None
    run = 0
    for i in range(len(records) - 1, -1, -1):
        if within[i]:
            run += 1
        else:
            break
        if run >= hold_ticks or i == 0:
            settle_tick = i
    # the settle must both start a continuous run to the end of the log and
    # cover at least the hold window
    if settle_tick is not None and run >= hold_ticks:
        settle_tick = len(records) - run
        last = getattr(records[-1], f"follower_{arm}")
        return LatencyResult(
            settled=True,
            latency=max(0.0, (settle_tick - arrival)) * dt,
            arrival_tick=arrival,
            settle_tick=settle_tick,
            residual_pos=float(np.linalg.norm(last.position - target.position)),
            residual_ang=geodesic_distance(last.orientation, target.orientation),
        )
    last = getattr(records[-1], f"follower_{arm}")
    return LatencyResult(
        settled=False,
        latency=None,
        arrival_tick=arrival,
        settle_tick=None,
        residual_pos=float(np.linalg.norm(last.position - target.position)),
        residual_ang=geodesic_distance(last.orientation, target.orientation),
    )


def _mean_pose(poses: list[Pose]) -> Pose:
    mean_p = np.mean([p.position for p in poses], axis=0)
    # average quaternions in a common hemisphere, then renormalize
    ref = poses[0].orientation
    acc = np.zeros(4)
    for p in poses:
        q = p.orientation if ref.dot(p.orientation) >= 0 else p.orientation.negated()
        acc += q.to_array()
    return Pose(mean_p, Quat.from_array(acc / len(poses)))


def steady_state_error(log: EpisodeLog, hold: float = DEFAULT_HOLD_S,
                       arm: str = "probe") -> tuple[float, float]:
    """(position m, orientation rad) error between the final commanded target
    and the mean follower pose over the trailing hold window."""
    if not log.records:
        raise ValueError("empty episode log")
    dt = log.dt
    hold_ticks = max(1, min(len(log.records), int(round(hold / dt))))
    window = log.records[-hold_ticks:]
    target = getattr(log.records[-1], f"target_{arm}")
    mean = _mean_pose([getattr(r, f"follower_{arm}") for r in window])
    return (
        float(np.linalg.norm(mean.position - target.position)),
        geodesic_distance(mean.orientation, target.orientation),
    )


def phase_durations(log: EpisodeLog) -> dict[Phase, float]:
    """Wall time spent in each phase; absent phases are simply not present.

    Durations partition the episode: they sum to the total episode length.
    """
    out: dict[Phase, float] = {}
    for r in log.records:
        out[r.phase] = out.get(r.phase, 0.0) + r.dt
    return out


def blocked_count(log: EpisodeLog) -> int:
    return sum(1 for r in log.records if r.verdict == "blocked")


def summarize(log: EpisodeLog) -> dict:
    durations = phase_durations(log)
    return {
        "ticks": len(log.records),
        "duration_s": round(log.duration(), 6),
        "phase_durations_s": {p.label: round(v, 6) for p, v in durations.items()},
        "phases_reached": [p.label for p in sorted(durations)],
        "blocked_ticks": blocked_count(log),
        "final_plane_quality": log.records[-1].plane_quality if log.records else 0.0,
        "min_d_min": min((r.d_min for r in log.records), default=math.inf),
    }
