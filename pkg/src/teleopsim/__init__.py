"""Desk-scale bimanual teleoperation simulator with phase-aware imitation
learning: geometry kernel, absolute pose mapping, trajectory smoothing,
two-level safety gating, a deterministic dual-arm world, a four-phase
workflow machine, and a toy-scale chunked policy trained with a dynamic
mask loss."""

__version__ = "0.1.0"
