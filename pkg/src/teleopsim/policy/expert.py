"""Scripted expert controller standing in for teleoperated human data.

The expert plans in the unified frame with privileged scene knowledge and
feeds the pipeline through the leader interface, so demonstrations exercise
the same mapping/smoothing/gating path a human operator would. Behavior per
phase:

    I   straight-line probe transit to a jittered first-contact point
    II  deliberate survey sweep across the acoustic window, then damped
        homing onto it with fine settling
    III straight-line needle transit to a pre-insertion pose whose axis
        passes through the lesion
    IV  proportional tip guidance down the insertion axis

Per-episode jitter (contact offset, sweep extent, approach angle, per-tick
tremor) plays the role of natural operator variation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import Pose, Quat, geodesic_distance, invert, slerp
from ..loop import ControlLoop
from ..mapping import leader_pose_for_target
from ..phases import Phase


@dataclass
class ExpertParams:
    transit_speed: float = 0.12      # m/s, phases I and III
    scan_speed: float = 0.025        # m/s, survey sweep
    home_gain: float = 0.06          # damped homing fraction per tick
    insert_gain: float = 0.10        # proportional insertion fraction per tick
    insert_cap: float = 0.03         # m/s, tip advance cap
    rot_speed: float = 1.2           # rad/s orientation alignment
    contact_jitter: float = 0.004    # m, lateral jitter of the contact point
    sweep_extent: float = 0.025      # m, sweep half-extent
    angle_jitter: float = 0.02       # rad, insertion-axis jitter
    tremor: float = 0.0003           # m, per-tick waypoint noise while moving


def _rot_between(a, b) -> Quat:
    """Minimal rotation carrying unit vector a onto unit vector b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = float(np.dot(a, b))
    if c > 1.0 - 1e-12:
        return Quat.identity()
    if c < -1.0 + 1e-12:
        # pick any axis orthogonal to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-9:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        return Quat.from_axis_angle(axis / np.linalg.norm(axis), math.pi)
    axis = np.cross(a, b)
    return Quat.from_axis_angle(axis / np.linalg.norm(axis), math.acos(max(-1.0, min(1.0, c))))


def _step_toward(current: Pose, goal: Pose, max_dp: float, max_dang: float) -> Pose:
    """Advance a desired pose toward a goal at capped linear/angular rates."""
    delta = goal.position - current.position
    dist = float(np.linalg.norm(delta))
    new_p = goal.position if dist <= max_dp else current.position + delta * (max_dp / dist)
    ang = geodesic_distance(current.orientation, goal.orientation)
    if ang <= max_dang or ang < 1e-12:
        new_q = goal.orientation
    else:
        new_q = slerp(current.orientation,
                      goal.orientation if current.orientation.dot(goal.orientation) >= 0
                      else goal.orientation.negated(),
                      max_dang / ang)
    return Pose(new_p, new_q)


class ScriptedExpert:
    """Emits per-tick leader poses for both arms, given the live phase."""

    def __init__(self, loop: ControlLoop, seed: int, params: ExpertParams | None = None):
        if not loop.engaged:
            raise ValueError("engage the loop before constructing the expert")
        self.loop = loop
        self.params = params or ExpertParams()
        self.rng = np.random.default_rng(seed)
        scene = loop.config.scene
        self.scene = scene
        self.dt = loop.dt
        self.needle_base_inv = invert(scene.needle_base)

        # desired poses track the arms' (possibly jittered) actual starts
        self.desired_probe = loop.world.probe.pose
        self.desired_needle_unified = scene.needle_base.apply_pose(loop.world.needle.pose)

        p = self.params
        plane = scene.target_plane
        jx, jy = self.rng.normal(scale=p.contact_jitter, size=2)
        self.contact_goal = Pose(
            plane.position + np.array([jx, jy, 0.0]), plane.orientation
        )
        extent = p.sweep_extent + self.rng.normal(scale=0.004)
        extent = max(0.015, min(0.035, extent))
        self.sweep_goals = [
            Pose(plane.position + np.array([-extent, jy * 0.5, 0.0]), plane.orientation),
            Pose(plane.position + np.array([extent, -jy * 0.5, 0.0]), plane.orientation),
        ]
        self.sweep_stage = 0

        # insertion geometry: axis through the lesion, jittered slightly
        nominal_dir = np.array([0.0, -1.0, -1.0]) / math.sqrt(2.0)
        jitter = Quat.from_rotvec(self.rng.normal(scale=p.angle_jitter, size=3))
        self.insert_dir = jitter.rotate(nominal_dir)
        retract = 0.05 + self.rng.normal(scale=0.004)
        tip_goal = scene.lesion_point - retract * self.insert_dir
        # orientation such that the tool axis maps onto the insertion axis
        base_axis = self.desired_needle_unified.orientation.rotate(scene.needle_tool.axis)
        needle_q = _rot_between(base_axis, self.insert_dir) * self.desired_needle_unified.orientation
        self.prealign_goal = Pose(
            tip_goal - needle_q.rotate(scene.needle_tool.tip_offset()), needle_q
        )

    def _emit(self, arm: str, desired_unified: Pose) -> Pose:
        if arm == "probe":
            target_own = desired_unified
        else:
            target_own = self.needle_base_inv.apply_pose(desired_unified)
        return leader_pose_for_target(self.loop.refs[arm], target_own)

    def _tremor(self, pose: Pose) -> Pose:
        return Pose(pose.position + self.rng.normal(scale=self.params.tremor, size=3),
                    pose.orientation)

    def step(self, phase: Phase) -> dict[str, Pose]:
        """Advance the expert's intent one tick; returns leader poses."""
        p = self.params
        dp_transit = p.transit_speed * self.dt
        dp_scan = p.scan_speed * self.dt
        dang = p.rot_speed * self.dt

        if phase == Phase.PROBE_POSITIONING:
            self.desired_probe = self._tremor(
                _step_toward(self.desired_probe, self.contact_goal, dp_transit, dang)
            )
        elif phase == Phase.SCANNING:
            if self.sweep_stage < len(self.sweep_goals):
                goal = self.sweep_goals[self.sweep_stage]
                self.desired_probe = self._tremor(
                    _step_toward(self.desired_probe, goal, dp_scan, dang)
                )
                if np.linalg.norm(self.desired_probe.position - goal.position) < 1e-4:
                    self.sweep_stage += 1
            else:
                self._home_probe()
        else:
            # phases III and IV: keep the acoustic window held
            self._home_probe()

        if phase == Phase.NEEDLE_ALIGNMENT:
            self.desired_needle_unified = self._tremor(
                _step_toward(self.desired_needle_unified, self.prealign_goal, dp_transit, dang)
            )
        elif phase == Phase.INSERTION:
            self._advance_needle()

        return {
            "probe": self._emit("probe", self.desired_probe),
            "needle": self._emit("needle", self.desired_needle_unified),
        }

    def _home_probe(self):
        p = self.params
        plane = self.scene.target_plane
        pos = self.desired_probe.position + p.home_gain * (
            plane.position - self.desired_probe.position
        )
        q = slerp(
            self.desired_probe.orientation,
            plane.orientation if self.desired_probe.orientation.dot(plane.orientation) >= 0
            else plane.orientation.negated(),
            p.home_gain,
        )
        self.desired_probe = self._tremor(Pose(pos, q))

    def _advance_needle(self):
        p = self.params
        tool = self.scene.needle_tool
        tip = self.desired_needle_unified.position + \
            self.desired_needle_unified.orientation.rotate(tool.tip_offset())
        err = self.scene.lesion_point - tip
        dist = float(np.linalg.norm(err))
        if dist < 0.002:
            return
        step = p.insert_gain * err
        cap = p.insert_cap * self.dt
        n = float(np.linalg.norm(step))
        if n > cap:
            step = step * (cap / n)
        self.desired_needle_unified = Pose(
            self.desired_needle_unified.position + step,
            self.desired_needle_unified.orientation,
        )
