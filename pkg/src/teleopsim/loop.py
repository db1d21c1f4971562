"""Fixed-step control pipeline: leader input -> mapping -> smoothing ->
safety gate -> follower dynamics -> observation -> phase machine.

The loop is deterministic given (config, seed, submitted command trace);
the service wraps it with wall-clock pacing, scripted drivers call tick()
directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .episodes import DemonstrationRecord, EpisodeWriter
from .geometry import Pose, Quat
from .mapping import EngagementReference, engage, map_leader_pose
from .phases import Phase, PhaseState, transition
from .safety import SafetyGate, VerdictKind
from .simworld import FollowerArm, Phantom, SimWorld, TickSignals
from .smoothing import TargetQueue

START_JITTER_POS = 0.005   # m, per-seed variation of the initial arm poses
START_JITTER_ANG = 0.02    # rad


def _jitter_pose(pose: Pose, rng: np.random.Generator,
                 pos_std: float = START_JITTER_POS,
                 ang_std: float = START_JITTER_ANG) -> Pose:
    dp = rng.normal(scale=pos_std, size=3)
    dq = Quat.from_rotvec(rng.normal(scale=ang_std, size=3))
    return Pose(pose.position + dp, dq * pose.orientation)


@dataclass(frozen=True)
class TickResult:
    tick: int
    time: float
    signals: TickSignals
    verdict: str
    d_min: float
    phase: Phase
    setpoint_probe: Pose
    setpoint_needle: Pose
    follower_probe: Pose
    follower_needle: Pose
    recording: bool
    record_count: int


class ControlLoop:
    def __init__(self, config: RunConfig, seed: int | None = None,
                 start_jitter: bool = False):
        scene = config.scene
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.dt = config.dt

        rng = np.random.default_rng(self.seed)
        probe_start = scene.probe_start
        needle_start = scene.needle_start_own_frame()
        if start_jitter:
            probe_start = _jitter_pose(probe_start, rng)
            needle_start = _jitter_pose(needle_start, rng)

        self.world = SimWorld(
            probe=FollowerArm("probe", probe_start, scene.probe_tau, scene.probe_tool),
            needle=FollowerArm("needle", needle_start, scene.needle_tau, scene.needle_tool),
            phantom=Phantom(scene.surface_height, scene.target_plane, scene.lesion_point),
            needle_base=scene.needle_base,
            seed=self.seed,
            feature_noise_std=scene.feature_noise_std,
            sigma_pos=scene.sigma_pos,
            sigma_ang=scene.sigma_ang,
            contact_tol=scene.contact_tol,
            contact_ramp=scene.contact_ramp,
        )
        limits = config.values["speed_limits"]
        cap = int(config.values["queue_cap"])
        self.queues = {
            "probe": TargetQueue(probe_start, limits["linear"], limits["angular"], cap),
            "needle": TargetQueue(needle_start, limits["linear"], limits["angular"], cap),
        }
        self.gate = SafetyGate(
            probe_limits=config.workspace("probe"),
            needle_limits=config.workspace("needle"),
            probe_tool=scene.probe_tool,
            needle_tool=scene.needle_tool,
            cal=config.calibration,
            clearance=float(config.values["clearance"]),
            initial_probe=probe_start,
            initial_needle=needle_start,
        )
        self.triggers = config.triggers()
        self.phase_state = PhaseState()
        self.leader_pose = {"probe": scene.leader_probe_zero, "needle": scene.leader_needle_zero}
        self.last_target = {"probe": probe_start, "needle": needle_start}
        self.refs: dict[str, EngagementReference] | None = None
        self.tick_index = 0
        self.signals = self.world.signals()
        self.recorder: EpisodeWriter | None = None

    # -- input side (may be called from an ingestion thread) --------------

    def engage(self):
        """Freeze the current leader and follower poses as zero references."""
        self.refs = {
            "probe": engage(self.leader_pose["probe"], self.world.probe.pose),
            "needle": engage(self.leader_pose["needle"], self.world.needle.pose),
        }

    @property
    def engaged(self) -> bool:
        return self.refs is not None

    def submit_leader_pose(self, arm: str, pose: Pose):
        """Update one leader pose; when engaged, maps it to an absolute
        follower target and enqueues it for smoothing."""
        self.leader_pose[arm] = pose
        if self.refs is None:
            return
        target = map_leader_pose(self.refs[arm], pose)
        self.last_target[arm] = target
        self.queues[arm].enqueue(target)

    def submit_target(self, arm: str, target: Pose):
        """Direct absolute target injection (policy rollouts)."""
        self.last_target[arm] = target
        self.queues[arm].enqueue(target)

    # -- recording ---------------------------------------------------------

    def start_recording(self, path, config_payload: dict | None = None):
        if self.recorder is not None:
            self.recorder.close()
        self.recorder = EpisodeWriter(
            path, seed=self.seed, config_hash=self.config.config_hash(),
            config=config_payload,
        )

    def stop_recording(self, summary: dict | None = None):
        if self.recorder is not None:
            self.recorder.close(summary)
            self.recorder = None

    # -- control tick ------------------------------------------------------

    def tick(self) -> TickResult:
        candidate_probe = self.queues["probe"].step(self.dt)
        candidate_needle = self.queues["needle"].step(self.dt)

        verdict = self.gate.gate(candidate_probe, candidate_needle)
        if verdict.kind == VerdictKind.BLOCKED:
            # hold the last safe pair and re-plan smoothing from it
            self.queues["probe"].rewind_to(verdict.adjusted_probe)
            self.queues["needle"].rewind_to(verdict.adjusted_needle)
        executed_probe = verdict.adjusted_probe
        executed_needle = verdict.adjusted_needle

        self.signals = self.world.step(executed_probe, executed_needle, self.dt)
        self.phase_state = transition(
            self.phase_state, self.signals, self.triggers, self.tick_index
        )

        obs = self.signals.observation
        if self.recorder is not None:
            self.recorder.append(DemonstrationRecord(
                t=self.tick_index,
                dt=self.dt,
                leader_probe=self.leader_pose["probe"],
                leader_needle=self.leader_pose["needle"],
                target_probe=self.last_target["probe"],
                target_needle=self.last_target["needle"],
                setpoint_probe=executed_probe,
                setpoint_needle=executed_needle,
                follower_probe=self.world.probe.pose,
                follower_needle=self.world.needle.pose,
                us_features=obs.features,
                plane_quality=obs.plane_quality,
                contact=obs.contact,
                phase=self.phase_state.phase,
                verdict=verdict.kind.value,
                d_min=verdict.d_min,
            ))

        result = TickResult(
            tick=self.tick_index,
            time=self.tick_index * self.dt,
            signals=self.signals,
            verdict=verdict.kind.value,
            d_min=verdict.d_min,
            phase=self.phase_state.phase,
            setpoint_probe=executed_probe,
            setpoint_needle=executed_needle,
            follower_probe=self.world.probe.pose,
            follower_needle=self.world.needle.pose,
            recording=self.recorder is not None,
            record_count=self.recorder.count if self.recorder else 0,
        )
        self.tick_index += 1
        return result

    # -- rendering helpers ---------------------------------------------------

    def unified_tool_segments(self) -> dict:
        """Tool centerline endpoints in the unified frame, for display."""
        probe_pose = self.world.probe.pose
        needle_unified = self.gate.needle_to_probe_base.apply_pose(self.world.needle.pose)
        out = {}
        for name, pose, tool in (
            ("probe", probe_pose, self.world.probe.tool),
            ("needle", needle_unified, self.world.needle.tool),
        ):
            start = pose.position
            end = pose.position + pose.orientation.rotate(tool.tip_offset())
            out[name] = {
                "start": [float(v) for v in start],
                "end": [float(v) for v in end],
                "radius": tool.radius,
            }
        return out
