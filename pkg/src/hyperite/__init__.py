"""Treatment-effect estimation on networked observational data.

A hyperbolic graph-convolutional encoder produces confounder representations
that feed two outcome heads, an edge-relation head and an optimal-transport
balancing term. Everything runs on numpy with a small reverse-mode autodiff
layer.
"""

__version__ = "0.1.0"

from .data import GeneratorConfig, NetworkedDataset, generate, load_dataset, save_dataset
from .evaluation import ate_error, pehe, run_benchmark, run_experiment
from .graph import Graph
from .trainer import VARIANTS, SinkhornConfig, TrainConfig, train

__all__ = [
    "GeneratorConfig",
    "Graph",
    "NetworkedDataset",
    "SinkhornConfig",
    "TrainConfig",
    "VARIANTS",
    "ate_error",
    "generate",
    "load_dataset",
    "pehe",
    "run_benchmark",
    "run_experiment",
    "save_dataset",
    "train",
]
