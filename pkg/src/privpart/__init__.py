"""Privacy-partitioned networks: split training against reconstruction defenders,
inference-time attacks, a DP pixelation baseline and a socket runtime."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, grad_check
from .data import Dataset, load_idx, load_mnist, stratified_split, synthetic_blobs
from .defense import (DefenderSpec, DefenderSuite, TrainingPlan, online_update_remote,
                      train_supervised, train_with_defenders)
from .attack import AttackReport, builtin_catalog, run_attack, train_attacker
from .dp import PixelationConfig, dp_pixelate, dp_sweep, pixelate, sensitivity
from .metrics import dissimilarity, mse, reprint_accuracy, ssim
from .nn import Adam, SGD, Network
from .partition import BipartiteNetwork, compose, load_partition, save_partition, split

__all__ = [
    "Adam", "AttackReport", "BipartiteNetwork", "Dataset", "DefenderSpec", "DefenderSuite",
    "Network", "PixelationConfig", "SGD", "Tensor", "TrainingPlan", "backward",
    "builtin_catalog", "compose", "dissimilarity", "dp_pixelate", "dp_sweep", "grad_check",
    "load_idx", "load_mnist", "load_partition", "mse", "online_update_remote", "pixelate",
    "reprint_accuracy", "run_attack", "save_partition", "sensitivity", "split", "ssim",
    "stratified_split", "synthetic_blobs", "train_attacker", "train_supervised",
    "train_with_defenders",
]
