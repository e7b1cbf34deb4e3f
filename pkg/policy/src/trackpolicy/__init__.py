"""Learned policies (conditional diffusion and behavior cloning) for the
active-tracking workbench, trained on its exported demonstration datasets and
served over its bridge protocol."""

from .data import ActionNormalizer, Episode, Window, build_windows, load_dataset
from .networks import (
    BCPolicy,
    DiffusionPolicy,
    NetworkConfig,
    ShapeError,
)
from .sampling import ddpm_sample
from .schedule import NoiseSchedule, forward_noise
from .training import (
    NonFiniteLoss,
    bc_train_step,
    ddpm_train_step,
    load_checkpoint,
    save_checkpoint,
    train_policy,
)

__version__ = "0.1.0"
