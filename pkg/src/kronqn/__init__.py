"""Kronecker-factored quasi-Newton optimizers for dense and convolutional nets."""

from .config import RunConfig, preset_config
from .curvature import LbfgsStore, bfgs_update, dp_dlm, dpi_dlm
from .data import Dataset, BatchSampler, load_mnist_idx, synthetic_dataset
from .harness import RunLog, run_grid, run_training
from .nn import ConvSpec, DenseSpec, Network, build_network
from .optim import KBFGS, KBFGSL, KFAC, SGDM, Adam, KBFGSLConvergence, OPTIMIZERS

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "preset_config", "LbfgsStore", "bfgs_update", "dp_dlm", "dpi_dlm",
    "Dataset", "BatchSampler", "load_mnist_idx", "synthetic_dataset", "RunLog", "run_grid",
    "run_training", "ConvSpec", "DenseSpec", "Network", "build_network", "KBFGS", "KBFGSL",
    "KFAC", "SGDM", "Adam", "KBFGSLConvergence", "OPTIMIZERS",
]
