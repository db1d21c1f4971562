"""Oracle demonstration generation and dataset assembly."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..config import RunConfig
from ..episodes import read_episode
from ..loop import ControlLoop
from ..metrics import summarize
from ..phases import Phase
from .expert import ScriptedExpert
from .observation import (external_features, pose_to_action, phase_index,
                          proprio_vector)

SUCCESS_HOLD_TICKS = 20


def run_oracle_episode(config: RunConfig, seed: int, record_path=None,
                       max_steps: int | None = None) -> dict:
    """Drive one scripted-expert episode through the full pipeline.

    Returns a summary dict; when ``record_path`` is given the episode is
    persisted as it runs.
    """
    loop = ControlLoop(config, seed=seed, start_jitter=True)
    loop.engage()
    expert = ScriptedExpert(loop, seed=seed + 10_000)
    if record_path is not None:
        loop.start_recording(record_path, config_payload=config.resolved())

    max_steps = max_steps or int(config.episode["max_steps"])
    success_tol = float(config.episode["success_tip_error"])
    success_tick = None
    result = None
    for _ in range(max_steps):
        commands = expert.step(loop.phase_state.phase)
        for arm, pose in commands.items():
            loop.submit_leader_pose(arm, pose)
        result = loop.tick()
        if (success_tick is None and result.phase == Phase.INSERTION
                and result.signals.needle_tip_error <= success_tol):
            success_tick = result.tick
        if success_tick is not None and result.tick - success_tick >= SUCCESS_HOLD_TICKS:
            break

    summary = {
        "seed": seed,
        "success": success_tick is not None,
        "ticks": loop.tick_index,
        "final_tip_error": result.signals.needle_tip_error if result else None,
        "final_phase": result.phase.label if result else None,
    }
    loop.stop_recording(summary)
    return summary


def generate_demos(config: RunConfig, out_dir, count: int, base_seed: int | None = None) -> list:
    """Write ``count`` oracle demonstrations into out_dir; returns summaries."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_seed = config.seed if base_seed is None else base_seed
    summaries = []
    for i in range(count):
        path = out_dir / f"demo_{i:03d}.jsonl"
        summary = run_oracle_episode(config, seed=base_seed + i, record_path=path)
        summary["path"] = str(path)
        summaries.append(summary)
    return summaries


def build_dataset(demo_paths, config: RunConfig, noise_seed: int = 0) -> dict:
    """Turn recorded episodes into chunked training arrays.

    Each sample pairs the tick-t observation with the commanded-target
    sequence for ticks t+1 .. t+H (padded by repetition at episode end).
    External features are recomputed from the recorded poses with seeded
    noise; ultrasound features come from the recording itself.
    """
    scene = config.scene
    horizon = int(config.policy["horizon"])
    stride = max(1, int(config.policy["sample_stride"]))
    rng = np.random.default_rng(noise_seed)

    us, ext, prop, phases = [], [], [], []
    tgt_probe, tgt_needle = [], []
    for path in sorted(str(p) for p in demo_paths):
        log = read_episode(path)
        records = log.records
        n = len(records)
        if n < 2:
            continue
        actions_probe = np.stack([pose_to_action(r.target_probe) for r in records])
        actions_needle = np.stack([pose_to_action(r.target_needle) for r in records])
        for t in range(0, n - 1, stride):
            r = records[t]
            us.append(r.us_features)
            ext.append(external_features(r.follower_probe, r.follower_needle, scene, rng))
            prop.append(proprio_vector(r.follower_probe, r.follower_needle))
            phases.append(phase_index(r.phase))
            idx = np.minimum(np.arange(t + 1, t + 1 + horizon), n - 1)
            tgt_probe.append(actions_probe[idx])
            tgt_needle.append(actions_needle[idx])

    if not us:
        raise ValueError("no samples in demonstration set")
    return {
        "us": np.asarray(us, dtype=np.float64),
        "ext": np.asarray(ext, dtype=np.float64),
        "prop": np.asarray(prop, dtype=np.float64),
        "phase": np.asarray(phases, dtype=np.int64),
        "target_probe": np.asarray(tgt_probe, dtype=np.float64),
        "target_needle": np.asarray(tgt_needle, dtype=np.float64),
    }


def demo_summary_stats(summaries: list) -> dict:
    return {
        "count": len(summaries),
        "successes": sum(1 for s in summaries if s.get("success")),
        "mean_ticks": float(np.mean([s["ticks"] for s in summaries])) if summaries else 0.0,
    }
