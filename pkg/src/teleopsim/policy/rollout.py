"""Closed-loop policy execution in the simulator.

Every ``replan_interval`` ticks the network predicts a fresh action chunk
from the live observation; the next slice of the chunk is fed tick-by-tick
through the smoothing queues and the safety gate (receding horizon). The
episode ends on insertion success, stall, or the step budget.
"""

from __future__ import annotations

import numpy as np

from ..config import RunConfig
from ..geometry import Pose, Quat
from ..loop import ControlLoop
from ..phases import Phase
from .network import forward
from .observation import external_features, phase_index, proprio_vector


def _normalized_action_pose(action) -> Pose:
    a = np.asarray(action, dtype=np.float64)
    q = a[3:7]
    n = float(np.linalg.norm(q))
    if n < 1e-9:
        q = Quat.identity().to_array()
        n = 1.0
    return Pose(a[:3], Quat.from_array(q / n))


def rollout(params: dict, config: RunConfig, seed: int, record_path=None,
            max_steps: int | None = None) -> dict:
    """Run one policy episode; returns a result summary with per-phase ticks."""
    loop = ControlLoop(config, seed=seed, start_jitter=True)
    scene = config.scene
    ext_rng = np.random.default_rng(seed + 20_000)
    replan = max(1, int(config.policy["replan_interval"]))
    max_steps = max_steps or int(config.episode["max_steps"])
    success_tol = float(config.episode["success_tip_error"])
    stall_ticks = int(config.episode["stall_ticks"])

    if record_path is not None:
        loop.start_recording(record_path, config_payload=config.resolved())

    chunk_probe = chunk_needle = None
    chunk_cursor = 0
    last_phase = loop.phase_state.phase
    last_phase_change = 0
    phase_ticks: dict[str, int] = {}
    blocked = 0
    result = None
    outcome = "max_steps"

    for _ in range(max_steps):
        if chunk_probe is None or chunk_cursor >= replan:
            obs = loop.signals.observation
            ext = external_features(loop.world.probe.pose, loop.world.needle.pose,
                                    scene, ext_rng)
            prop = proprio_vector(loop.world.probe.pose, loop.world.needle.pose)
            p_chunk, n_chunk = forward(params, obs.features, ext, prop,
                                       phase_index(loop.phase_state.phase))
            chunk_probe, chunk_needle = p_chunk[0], n_chunk[0]
            chunk_cursor = 0

        loop.submit_target("probe", _normalized_action_pose(chunk_probe[chunk_cursor]))
        loop.submit_target("needle", _normalized_action_pose(chunk_needle[chunk_cursor]))
        chunk_cursor += 1

        result = loop.tick()
        phase_ticks[result.phase.label] = phase_ticks.get(result.phase.label, 0) + 1
        if result.verdict == "blocked":
            blocked += 1
        if result.phase != last_phase:
            last_phase = result.phase
            last_phase_change = result.tick
        if (result.phase == Phase.INSERTION
                and result.signals.needle_tip_error <= success_tol):
            outcome = "success"
            break
        if result.tick - last_phase_change > stall_ticks:
            outcome = "stall"
            break

    summary = {
        "seed": seed,
        "outcome": outcome,
        "success": outcome == "success",
        "ticks": loop.tick_index,
        "final_phase": result.phase.label if result else "I",
        "final_tip_error": result.signals.needle_tip_error if result else None,
        "blocked_ticks": blocked,
        "phase_ticks": phase_ticks,
        "phase_durations_s": {k: v * loop.dt for k, v in phase_ticks.items()},
    }
    loop.stop_recording(summary if record_path is not None else None)
    return summary
