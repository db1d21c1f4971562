"""Run configuration, scene description, and calibration file loading.

Files are YAML. Poses and transforms are written as a translation/position
3-vector plus a (w, x, y, z) quaternion. Every subcommand writes its fully
resolved configuration (defaults included) into its output artifacts, so a
run never depends on hidden parameters.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError
from .geometry import Pose, Quat, Transform, invert
from .phases import MaskSchedule, PhaseTriggers, phase_from_label
from .safety import ArmCalibration, CalibrationSet, ToolSpec, WorkspaceLimits


def _require(d: dict, key: str, ctx: str):
    if key not in d:
        raise ConfigurationError(f"{ctx}: missing required key {key!r}")
    return d[key]


def pose_from_dict(d: dict, ctx: str = "pose") -> Pose:
    return Pose(
        np.asarray(_require(d, "position", ctx), dtype=np.float64),
        Quat.from_array(_require(d, "quaternion", ctx)),
    )


def pose_to_dict(p: Pose) -> dict:
    return {
        "position": [float(v) for v in p.position],
        "quaternion": [p.orientation.w, p.orientation.x, p.orientation.y, p.orientation.z],
    }


def transform_from_dict(d: dict, ctx: str = "transform") -> Transform:
    return Transform(
        Quat.from_array(_require(d, "quaternion", ctx)),
        np.asarray(_require(d, "translation", ctx), dtype=np.float64),
    )


def transform_to_dict(t: Transform) -> dict:
    return {
        "translation": [float(v) for v in t.translation],
        "quaternion": [t.rotation.w, t.rotation.x, t.rotation.y, t.rotation.z],
    }


@dataclass
class SceneSpec:
    surface_height: float
    target_plane: Pose
    lesion_point: np.ndarray
    probe_tool: ToolSpec
    needle_tool: ToolSpec
    probe_tau: float
    needle_tau: float
    probe_start: Pose              # probe base frame == unified frame
    needle_start_unified: Pose     # authored in the unified frame
    needle_base: Transform         # ground-truth needle base in unified frame
    leader_probe_zero: Pose
    leader_needle_zero: Pose
    feature_noise_std: float
    sigma_pos: float
    sigma_ang: float
    contact_tol: float
    contact_ramp: float
    raw: dict = field(default_factory=dict, repr=False)

    def needle_start_own_frame(self) -> Pose:
        return invert(self.needle_base).apply_pose(self.needle_start_unified)


def load_scene(path) -> SceneSpec:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigurationError(f"cannot read scene file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"invalid YAML in scene file {path}: {e}") from e

    phantom = _require(raw, "phantom", "scene")
    tools = _require(raw, "tools", "scene")
    arms = _require(raw, "arms", "scene")
    obs = raw.get("observation", {})
    leaders = raw.get("leaders", {})

    def tool(name: str) -> ToolSpec:
        t = _require(tools, name, "scene.tools")
        return ToolSpec(
            axis=np.asarray(_require(t, "axis", f"tools.{name}"), dtype=np.float64),
            length=float(_require(t, "length", f"tools.{name}")),
            radius=float(_require(t, "radius", f"tools.{name}")),
            name=name,
        )

    def leader(name: str) -> Pose:
        if name in leaders:
            return pose_from_dict(leaders[name], f"leaders.{name}")
        return Pose.identity()

    return SceneSpec(
        surface_height=float(_require(phantom, "surface_height", "scene.phantom")),
        target_plane=pose_from_dict(_require(phantom, "target_plane", "scene.phantom")),
        lesion_point=np.asarray(_require(phantom, "lesion_point", "scene.phantom"), dtype=np.float64),
        probe_tool=tool("probe"),
        needle_tool=tool("needle"),
        probe_tau=float(arms["probe"].get("tau", 0.1)),
        needle_tau=float(arms["needle"].get("tau", 0.1)),
        probe_start=pose_from_dict(_require(arms["probe"], "initial_pose", "arms.probe")),
        needle_start_unified=pose_from_dict(
            _require(arms["needle"], "initial_pose_unified", "arms.needle")
        ),
        needle_base=transform_from_dict(_require(raw, "needle_base", "scene")),
        leader_probe_zero=leader("probe"),
        leader_needle_zero=leader("needle"),
        feature_noise_std=float(obs.get("feature_noise_std", 0.01)),
        sigma_pos=float(obs.get("sigma_pos", 0.01)),
        sigma_ang=float(obs.get("sigma_ang", 0.1)),
        contact_tol=float(obs.get("contact_tol", 0.002)),
        contact_ramp=float(obs.get("contact_ramp", 0.003)),
        raw=raw,
    )


def load_calibration(path) -> CalibrationSet:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigurationError(f"cannot read calibration file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"invalid YAML in calibration file {path}: {e}") from e
    arms = _require(raw, "arms", "calibration")

    def arm(name: str) -> ArmCalibration:
        a = _require(arms, name, "calibration.arms")
        return ArmCalibration(
            base_to_ee=transform_from_dict(_require(a, "base_to_ee", name)),
            ee_to_cam=transform_from_dict(_require(a, "ee_to_cam", name)),
            cam_to_marker=transform_from_dict(_require(a, "cam_to_marker", name)),
        )

    return CalibrationSet(probe=arm("probe"), needle=arm("needle"))


DEFAULTS: dict = {
    "scene": None,
    "calibration": None,
    "seed": 0,
    "control_rate_hz": 30.0,
    "speed_limits": {"linear": 0.5, "angular": 1.5},
    "queue_cap": 8,
    "workspace": {
        "probe": {"min": [0.15, -0.35, 0.05], "max": [0.70, 0.35, 0.60]},
        "needle": {"min": [0.15, -0.35, 0.05], "max": [0.70, 0.35, 0.60]},
    },
    "clearance": 0.02,
    "triggers": {
        "contact_quality_min": 0.2,
        "plane_quality_min": 0.8,
        "plane_hold_steps": 15,
        "alignment_distance_max": 0.005,
    },
    "mask_schedule": {
        "I": {"probe": 1.0, "needle": 1.0},
        "II": {"probe": 1.0, "needle": 1.0},
        "III": {"probe": 1.0, "needle": 1.0},
        "IV": {"probe": 1.0, "needle": 1.0},
    },
    "policy": {
        "horizon": 20,
        "replan_interval": 10,
        "d_model": 32,
        "ff_dim": 32,
        "lr": 1e-3,
        "epochs": 30,
        "batch_size": 64,
        "sample_stride": 2,
        "val_fraction": 0.1,
    },
    "episode": {
        "max_steps": 1800,
        "success_tip_error": 0.005,
        "stall_ticks": 600,
    },
    "service": {"host": "127.0.0.1", "port": 8735},
}


def _merge(base: dict, override: dict, ctx: str = "config") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in out:
            raise ConfigurationError(f"{ctx}: unknown key {k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, f"{ctx}.{k}")
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    """Fully resolved run configuration plus loaded scene/calibration."""

    values: dict
    scene: SceneSpec
    calibration: CalibrationSet
    scene_path: str
    calibration_path: str

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def control_rate_hz(self) -> float:
        return float(self.values["control_rate_hz"])

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate_hz

    @property
    def policy(self) -> dict:
        return self.values["policy"]

    @property
    def episode(self) -> dict:
        return self.values["episode"]

    def triggers(self) -> PhaseTriggers:
        t = self.values["triggers"]
        return PhaseTriggers(
            contact_quality_min=float(t["contact_quality_min"]),
            plane_quality_min=float(t["plane_quality_min"]),
            plane_hold_steps=int(t["plane_hold_steps"]),
            alignment_distance_max=float(t["alignment_distance_max"]),
        )

    def mask_schedule(self) -> MaskSchedule:
        raw = self.values["mask_schedule"]
        weights = {
            phase_from_label(label): {arm: float(w) for arm, w in per_arm.items()}
            for label, per_arm in raw.items()
        }
        return MaskSchedule(weights)

    def workspace(self, arm: str) -> WorkspaceLimits:
        w = self.values["workspace"][arm]
        return WorkspaceLimits(np.asarray(w["min"]), np.asarray(w["max"]))

    def resolved(self) -> dict:
        """Everything that determines a run, for artifact embedding."""
        out = copy.deepcopy(self.values)
        out["scene"] = self.scene_path
        out["calibration"] = self.calibration_path
        out["scene_content"] = self.scene.raw
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def dump_yaml(self, path):
        Path(path).write_text(yaml.safe_dump(self.resolved(), sort_keys=True))


def load_run_config(config_path=None, seed: int | None = None,
                    overrides: dict | None = None) -> RunConfig:
    """Load a run config file, apply defaults, resolve referenced files.

    Relative scene/calibration paths are taken relative to the config file's
    directory. ``seed`` and ``overrides`` take precedence over the file.
    """
    values = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if config_path is not None:
        config_path = Path(config_path)
        try:
            raw = yaml.safe_load(config_path.read_text()) or {}
        except OSError as e:
            raise ConfigurationError(f"cannot read config file {config_path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigurationError(f"invalid YAML in config {config_path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigurationError("config file must contain a mapping")
        values = _merge(values, raw)
        base_dir = config_path.parent
    if overrides:
        values = _merge(values, overrides)
    if seed is not None:
        values["seed"] = int(seed)

    if values["scene"] is None:
        raise ConfigurationError("config must name a scene file")
    if values["calibration"] is None:
        raise ConfigurationError("config must name a calibration file")
    scene_path = str((base_dir / values["scene"]).resolve())
    cal_path = str((base_dir / values["calibration"]).resolve())
    if not Path(scene_path).exists():
        raise ConfigurationError(f"scene file does not exist: {scene_path}")
    if not Path(cal_path).exists():
        raise ConfigurationError(f"calibration file does not exist: {cal_path}")

    if values["control_rate_hz"] <= 0:
        raise ConfigurationError("control_rate_hz must be positive")
    if values["speed_limits"]["linear"] <= 0 or values["speed_limits"]["angular"] <= 0:
        raise ConfigurationError("speed limits must be positive")
    if values["clearance"] < 0:
        raise ConfigurationError("clearance must be non-negative")

    return RunConfig(
        values=values,
        scene=load_scene(scene_path),
        calibration=load_calibration(cal_path),
        scene_path=scene_path,
        calibration_path=cal_path,
    )


def default_config_path() -> Path:
    """Repo-relative default used by the CLI when --config is omitted."""
    return Path(__file__).resolve().parents[2] / "configs" / "default_run.yaml"
