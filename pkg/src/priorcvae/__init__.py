"""Prior encoding with a conditional VAE: hyperparameters stay explicit, so MCMC can infer them."""

from .cvae import CvaeModel, TrainConfig, build_cvae, decode, load_model, sample_prior, save_model, train
from .data import PriorDataset, read_dataset, write_dataset
from .gp import Grid, HyperPrior, KernelSpec, kernel_matrix, sample_gp, sample_gp_dataset

__version__ = "0.1.0"

__all__ = [
    "CvaeModel",
    "Grid",
    "HyperPrior",
    "KernelSpec",
    "PriorDataset",
    "TrainConfig",
    "build_cvae",
    "decode",
    "kernel_matrix",
    "load_model",
    "read_dataset",
    "sample_gp",
    "sample_gp_dataset",
    "sample_prior",
    "save_model",
    "train",
    "write_dataset",
]
