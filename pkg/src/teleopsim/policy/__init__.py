from .network import (backward, forward, init_params, load_checkpoint,
                      save_checkpoint)
from .loss import masked_loss, per_phase_errors
from .training import train, validation_phase_errors
from .demos import build_dataset, generate_demos, run_oracle_episode
from .rollout import rollout

__all__ = [
    "backward", "forward", "init_params", "load_checkpoint", "save_checkpoint",
    "masked_loss", "per_phase_errors", "train", "validation_phase_errors",
    "build_dataset", "generate_demos", "run_oracle_episode", "rollout",
]
