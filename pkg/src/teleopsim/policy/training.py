"""Mask-weighted behavior cloning with Adam on the toy network.

Fully deterministic given (dataset, seed, config): batch order, init, and
the optimizer state all flow from one generator. A NaN loss aborts with a
diagnostic parameter dump rather than silently continuing.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import TrainingDiverged
from ..phases import Phase, MaskSchedule, mask_weights
from .loss import masked_loss, per_phase_errors
from .network import backward, forward, init_params


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


def _weights_for(phases, schedule: MaskSchedule, horizon: int) -> np.ndarray:
    """Per-sample (H, 2) weight tensors selected by recorded phase."""
    table = {p: mask_weights(p, schedule, horizon) for p in Phase}
    return np.stack([table[Phase(int(p) + 1)] for p in phases])


def train(dataset: dict, schedule: MaskSchedule, config: dict, seed: int = 0,
          log_path=None, dump_dir=None):
    """Returns (params, training_log list of per-epoch dicts)."""
    horizon = int(config["horizon"])
    rng = np.random.default_rng(seed)
    params = init_params(horizon, int(config["d_model"]), int(config["ff_dim"]),
                         seed=seed)
    opt = Adam(params, lr=float(config["lr"]))

    n = dataset["us"].shape[0]
    order = rng.permutation(n)
    n_val = max(1, int(n * float(config["val_fraction"])))
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    batch_size = int(config["batch_size"])
    weights_all = _weights_for(dataset["phase"], schedule, horizon)

    # L1 + Adam stalls at a step-size-proportional floor; decay the rate
    # linearly down to this fraction of the initial value
    lr0 = float(config["lr"])
    final_frac = float(config.get("lr_final_fraction", 0.05))
    epochs = int(config["epochs"])

    def batch_arrays(idx):
        return (dataset["us"][idx], dataset["ext"][idx], dataset["prop"][idx],
                dataset["phase"][idx], dataset["target_probe"][idx],
                dataset["target_needle"][idx], weights_all[idx])

    log = []
    for epoch in range(epochs):
        if epochs > 1:
            frac = epoch / (epochs - 1)
            opt.lr = lr0 * (1.0 - (1.0 - final_frac) * frac)
        perm = rng.permutation(len(train_idx))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(train_idx), batch_size):
            idx = train_idx[perm[start:start + batch_size]]
            us, ext, prop, phase, tp, tn, w = batch_arrays(idx)
            probe, needle, cache = forward(params, us, ext, prop, phase, want_cache=True)
            loss, d_probe, d_needle = masked_loss(probe, needle, tp, tn, w, want_grads=True)
            if not np.isfinite(loss):
                dump = _dump_state(params, epoch, n_batches, dump_dir)
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}", dump_path=dump
                )
            grads = backward(params, cache, d_probe, d_needle)
            opt.step(params, grads)
            epoch_loss += loss
            n_batches += 1

        entry = {"epoch": epoch, "train_loss": epoch_loss / max(1, n_batches)}
        us, ext, prop, phase, tp, tn, w = batch_arrays(val_idx)
        probe, needle = forward(params, us, ext, prop, phase)
        entry["val_loss"] = masked_loss(probe, needle, tp, tn, w)
        entry["val_phase"] = {
            str(k + 1): v for k, v in per_phase_errors(probe, needle, tp, tn, phase).items()
        }
        log.append(entry)

    for k, v in params.items():
        if not np.all(np.isfinite(v)):
            dump = _dump_state(params, -1, -1, dump_dir)
            raise TrainingDiverged(f"non-finite parameter {k} after training", dump_path=dump)

    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    return params, log


def validation_phase_errors(params: dict, dataset: dict, horizon: int) -> dict:
    """Unweighted per-phase errors of a trained policy over a dataset."""
    probe, needle = forward(params, dataset["us"], dataset["ext"], dataset["prop"],
                            dataset["phase"])
    return per_phase_errors(probe, needle, dataset["target_probe"],
                            dataset["target_needle"], dataset["phase"])


def _dump_state(params: dict, epoch: int, batch: int, dump_dir) -> str | None:
    if dump_dir is None:
        return None
    path = Path(dump_dir) / f"diverged_epoch{epoch}_batch{batch}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **params)
    return str(path)
