"""Mask-weighted behavior-cloning loss.

Per (timestep, arm) the raw error is the per-element L1 difference between
predicted and target action, with the quaternion part of the target flipped
into the prediction's hemisphere first so the double cover cannot poison the
regression. Errors are weighted by the scheduler's (timestep, arm) weights
and normalized by the total weight mass, which makes the loss invariant to
uniform weight rescaling while preserving relative emphasis across samples
inside a batch.
"""

from __future__ import annotations

import numpy as np

from .network import ACTION_DIM


def _hemisphere_signs(pred_q, target_q):
    """+1/-1 per (batch, step): flip target quats opposing the prediction."""
    dots = np.sum(pred_q * target_q, axis=-1)
    return np.where(dots < 0.0, -1.0, 1.0)


def masked_loss(pred_probe, pred_needle, target_probe, target_needle, weights,
                want_grads: bool = False):
    """Normalized mask-weighted L1 loss over a (batch of) action chunk(s).

    pred/target arrays are (B, H, 7) or (H, 7); weights is (B, H, 2) or
    (H, 2) with columns [probe, needle]. Returns the scalar loss, plus
    (d_pred_probe, d_pred_needle) when ``want_grads``.
    """
    pred_probe = _chunk3(pred_probe)
    pred_needle = _chunk3(pred_needle)
    target_probe = _chunk3(target_probe)
    target_needle = _chunk3(target_needle)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim == 2:
        weights = weights[None, :, :]

    total_weight = float(weights.sum())
    if total_weight <= 0.0:
        raise ValueError("weight mass must be positive")

    loss = 0.0
    grads = []
    for arm_idx, (pred, target) in enumerate(
        ((pred_probe, target_probe), (pred_needle, target_needle))
    ):
        signs = _hemisphere_signs(pred[..., 3:7], target[..., 3:7])
        adj = target.copy()
        adj[..., 3:7] *= signs[..., None]
        diff = pred - adj
        w = weights[:, :, arm_idx]
        per_step = np.abs(diff).sum(axis=-1) / ACTION_DIM
        loss += float((w * per_step).sum())
        if want_grads:
            g = np.sign(diff) * w[..., None] / (ACTION_DIM * total_weight)
            grads.append(g)
    loss /= total_weight
    if want_grads:
        return loss, grads[0], grads[1]
    return loss


def _chunk3(a):
    a = np.asarray(a, dtype=np.float64)
    return a[None, :, :] if a.ndim == 2 else a


def per_phase_errors(pred_probe, pred_needle, target_probe, target_needle,
                     phases) -> dict:
    """Unweighted per-phase mean errors for logging and trend metrics.

    Returns {phase_value: {"loss": mean L1 both arms, "needle_pos": mean
    needle position L1, "probe_pos": mean probe position L1}}.
    """
    pred_probe = _chunk3(pred_probe)
    pred_needle = _chunk3(pred_needle)
    target_probe = _chunk3(target_probe)
    target_needle = _chunk3(target_needle)
    phases = np.asarray(phases)

    out = {}
    for phase in sorted(set(int(p) for p in phases)):
        sel = phases == phase
        uniform = np.ones((int(sel.sum()), pred_probe.shape[1], 2))
        out[phase] = {
            "loss": masked_loss(
                pred_probe[sel], pred_needle[sel],
                target_probe[sel], target_needle[sel], uniform,
            ),
            "probe_pos": float(np.abs(
                pred_probe[sel][..., :3] - target_probe[sel][..., :3]
            ).mean()),
            "needle_pos": float(np.abs(
                pred_needle[sel][..., :3] - target_needle[sel][..., :3]
            ).mean()),
        }
    return out
