"""Policy observation assembly, shared by dataset building and rollout.

The external-feature vector stands in for camera encoders: both tool poses
expressed relative to the phantom landmarks, plus seeded noise. Proprioception
is the raw dual-arm pose state. The ultrasound feature vector comes straight
from the simulator's observation model.
"""

from __future__ import annotations

import numpy as np

from ..config import SceneSpec
from ..geometry import Pose
from ..phases import Phase

EXT_NOISE_STD = 0.002


def external_features(probe_pose: Pose, needle_pose_own: Pose, scene: SceneSpec,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    needle_unified = scene.needle_base.apply_pose(needle_pose_own)
    needle_tip = needle_unified.position + needle_unified.orientation.rotate(
        scene.needle_tool.tip_offset()
    )
    feats = np.concatenate([
        scene.target_plane.position - probe_pose.position,
        scene.lesion_point - needle_tip,
        probe_pose.orientation.rotate(scene.probe_tool.axis),
        needle_unified.orientation.rotate(scene.needle_tool.axis),
    ])
    if rng is not None:
        feats = feats + rng.normal(scale=EXT_NOISE_STD, size=feats.shape)
    return feats


def proprio_vector(probe_pose: Pose, needle_pose_own: Pose) -> np.ndarray:
    return np.concatenate([
        probe_pose.position, probe_pose.orientation.to_array(),
        needle_pose_own.position, needle_pose_own.orientation.to_array(),
    ])


def pose_to_action(pose: Pose) -> np.ndarray:
    return np.concatenate([pose.position, pose.orientation.to_array()])


def action_to_pose(action) -> Pose:
    from ..geometry import Quat

    a = np.asarray(action, dtype=np.float64)
    return Pose(a[:3], Quat.from_array(a[3:7]))


def phase_index(phase: Phase) -> int:
    return int(phase) - 1
