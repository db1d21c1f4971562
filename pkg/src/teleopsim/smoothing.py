"""Dynamic target queue: buffers absolute pose commands, emits rate-limited
interpolated setpoints at the control rate.

Translation follows lerp, rotation follows slerp after hemisphere alignment,
and both share a single interpolation progress per target so position and
orientation arrive together (the slower axis dominates). Per-step progress is
derived from explicit linear/angular speed limits, which makes setpoint
continuity a checkable contract.
"""

from __future__ import annotations

import math
import threading
from collections import deque

from .geometry import Pose, geodesic_distance, hemisphere_align, lerp, slerp

DEFAULT_MAX_LINEAR_SPEED = 0.5   # m/s
DEFAULT_MAX_ANGULAR_SPEED = 1.5  # rad/s
DEFAULT_QUEUE_CAP = 8


class TargetQueue:
    """Single-producer/single-consumer pose smoothing queue.

    One thread enqueues targets, one thread calls step() at the control rate;
    a lock protects only the handoff of pending targets. When the queue is
    full the oldest pending target is dropped so the latest operator intent
    wins.
    """

    def __init__(
        self,
        initial: Pose,
        max_linear_speed: float = DEFAULT_MAX_LINEAR_SPEED,
        max_angular_speed: float = DEFAULT_MAX_ANGULAR_SPEED,
        cap: int = DEFAULT_QUEUE_CAP,
    ):
        if max_linear_speed <= 0 or max_angular_speed <= 0:
            raise ValueError("speed limits must be positive")
        self.max_linear_speed = float(max_linear_speed)
        self.max_angular_speed = float(max_angular_speed)
        self._pending: deque[Pose] = deque(maxlen=cap)
        self._lock = threading.Lock()
        self._setpoint = initial
        # active segment state
        self._seg_start: Pose | None = None
        self._seg_target: Pose | None = None
        self._seg_dist = 0.0
        self._seg_angle = 0.0
        self._alpha = 0.0

    @property
    def current_setpoint(self) -> Pose:
        return self._setpoint

    @property
    def alpha(self) -> float:
        return self._alpha

    def depth(self) -> int:
        with self._lock:
            n = len(self._pending)
        return n + (1 if self._seg_target is not None else 0)

    def enqueue(self, target: Pose) -> None:
        with self._lock:
            self._pending.append(target)

    def rewind_to(self, pose: Pose) -> None:
        """Reset the emitted setpoint (e.g. after a blocked verdict).

        The active segment is re-planned from ``pose`` on the next step, so
        continuity from the held setpoint is preserved.
        """
        self._setpoint = pose
        if self._seg_target is not None:
            self._begin_segment(self._seg_target)

    def _begin_segment(self, target: Pose) -> None:
        self._seg_start = self._setpoint
        aligned = hemisphere_align(self._seg_start.orientation, target.orientation)
        self._seg_target = Pose(target.position, aligned)
        self._seg_dist = float(math.dist(tuple(self._seg_start.position), tuple(target.position)))
        self._seg_angle = geodesic_distance(self._seg_start.orientation, aligned)
        self._alpha = 0.0

    def step(self, dt: float) -> Pose:
        """Advance toward the head target by at most one speed-limited step."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        if self._seg_target is None:
            with self._lock:
                nxt = self._pending.popleft() if self._pending else None
            if nxt is None:
                return self._setpoint
            self._begin_segment(nxt)

        # largest progress increment consistent with both speed limits
        da = math.inf
        if self._seg_dist > 0.0:
            da = min(da, self.max_linear_speed * dt / self._seg_dist)
        if self._seg_angle > 0.0:
            da = min(da, self.max_angular_speed * dt / self._seg_angle)
        self._alpha = min(1.0, self._alpha + da)

        seg_start, seg_target = self._seg_start, self._seg_target
        self._setpoint = Pose(
            lerp(seg_start.position, seg_target.position, self._alpha),
            slerp(seg_start.orientation, seg_target.orientation, self._alpha),
        )
        if self._alpha >= 1.0:
            # segment complete; next step starts toward the next pending target
            self._seg_start = None
            self._seg_target = None
            self._alpha = 0.0
        return self._setpoint
