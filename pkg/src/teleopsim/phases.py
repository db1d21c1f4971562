"""Four-phase procedural state machine and the mask-weight scheduler.

The workflow progresses monotonically:

    1 probe gross positioning  -> contact with valid image features
    2 anatomical scanning      -> target plane held stable for N steps
    3 needle pre-alignment     -> needle axis converges on the target
    4 fine insertion

Transitions are pure functions of (state, tick inputs), advance at most one
phase per step, and never revert: once a phase is entered it is conditioned
on entry, not maintenance.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from .errors import ConfigurationError
from .simworld import TickSignals

ARMS = ("probe", "needle")


class Phase(IntEnum):
    PROBE_POSITIONING = 1
    SCANNING = 2
    NEEDLE_ALIGNMENT = 3
    INSERTION = 4

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    Phase.PROBE_POSITIONING: "I",
    Phase.SCANNING: "II",
    Phase.NEEDLE_ALIGNMENT: "III",
    Phase.INSERTION: "IV",
}
_BY_LABEL = {v: k for k, v in _LABELS.items()}


def phase_from_label(label: str) -> Phase:
    try:
        return _BY_LABEL[label]
    except KeyError:
        raise ConfigurationError(f"unknown phase label: {label!r}") from None


@dataclass(frozen=True)
class PhaseState:
    phase: Phase = Phase.PROBE_POSITIONING
    entered_at: int = 0
    stability_counter: int = 0


@dataclass(frozen=True)
class PhaseTriggers:
    contact_quality_min: float = 0.2   # I -> II: valid image features
    plane_quality_min: float = 0.8     # II -> III: plane acquired...
    plane_hold_steps: int = 15         # ...and held this many consecutive steps
    alignment_distance_max: float = 0.005  # III -> IV: needle axis near target (m)

    def __post_init__(self):
        if self.contact_quality_min <= 0 or self.plane_quality_min <= 0:
            raise ConfigurationError("quality thresholds must be positive")
        if self.plane_hold_steps < 1:
            raise ConfigurationError("plane_hold_steps must be >= 1")
        if self.alignment_distance_max <= 0:
            raise ConfigurationError("alignment_distance_max must be positive")


def transition(state: PhaseState, signals: TickSignals, triggers: PhaseTriggers,
               tick: int) -> PhaseState:
    """Advance the phase machine by one control tick.

    The scanning hold counter counts consecutive qualifying steps and fires
    on exactly the plane_hold_steps-th one; any dip resets it.
    """
    obs = signals.observation
    if state.phase == Phase.PROBE_POSITIONING:
        if obs.contact and obs.plane_quality >= triggers.contact_quality_min:
            return PhaseState(Phase.SCANNING, tick, 0)
        return state

    if state.phase == Phase.SCANNING:
        if obs.plane_quality >= triggers.plane_quality_min:
            count = state.stability_counter + 1
            if count >= triggers.plane_hold_steps:
                return PhaseState(Phase.NEEDLE_ALIGNMENT, tick, 0)
            return PhaseState(Phase.SCANNING, state.entered_at, count)
        if state.stability_counter:
            return PhaseState(Phase.SCANNING, state.entered_at, 0)
        return state

    if state.phase == Phase.NEEDLE_ALIGNMENT:
        if signals.needle_alignment_distance <= triggers.alignment_distance_max:
            return PhaseState(Phase.INSERTION, tick, 0)
        return state

    return state


class MaskSchedule:
    """Per-(phase, arm) loss weights for the mask scheduler.

    Transit phases default to 1.0 on both arms; the interactive phases carry
    the configured emphasis on their active arm (probe during scanning,
    needle during insertion) while the idle arm stays at the transit weight.
    """

    def __init__(self, weights: dict[Phase, dict[str, float]] | None = None,
                 scan_weight: float = 1.0, insertion_weight: float = 1.0):
        if weights is None:
            weights = {
                Phase.PROBE_POSITIONING: {"probe": 1.0, "needle": 1.0},
                Phase.SCANNING: {"probe": scan_weight, "needle": 1.0},
                Phase.NEEDLE_ALIGNMENT: {"probe": 1.0, "needle": 1.0},
                Phase.INSERTION: {"probe": 1.0, "needle": insertion_weight},
            }
        self._weights = {}
        for phase in Phase:
            if phase not in weights:
                raise ConfigurationError(f"mask schedule missing phase {phase.label}")
            per_arm = weights[phase]
            for arm in ARMS:
                if arm not in per_arm:
                    raise ConfigurationError(
                        f"mask schedule missing arm {arm!r} for phase {phase.label}"
                    )
                w = float(per_arm[arm])
                if w <= 0:
                    raise ConfigurationError("mask weights must be strictly positive")
                self._weights[(phase, arm)] = w

    def weight(self, phase: Phase, arm: str) -> float:
        return self._weights[(phase, arm)]

    def as_dict(self) -> dict:
        return {
            phase.label: {arm: self._weights[(phase, arm)] for arm in ARMS}
            for phase in Phase
        }


def mask_weights(phase: Phase, schedule: MaskSchedule, horizon: int):
    """Weight tensor (horizon x 2 arms) for a chunk predicted in ``phase``.

    Column order matches ARMS: [probe, needle]. Constant across the horizon;
    the chunk inherits the phase it was predicted in.
    """
    import numpy as np

    row = [schedule.weight(phase, arm) for arm in ARMS]
    return np.tile(np.asarray(row, dtype=np.float64), (horizon, 1))
