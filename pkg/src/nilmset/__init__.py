"""Appliance disaggregation experiments with dense and sparse-evolutionary
neural networks trained on synthetic aggregate power windows."""

__version__ = "0.1.0"

from .appliances import APPLIANCE_NAMES, write_channel_files
from .ingest import PowerSeries, parse_channel, resample_gaps, serialize_channel
from .models import ConvSpec, ModelSpec, Network, RnnSpec, build, grid_specs
from .sparse import EvolutionPolicy, SparseLayer, erdos_renyi_init, evolve, sgd_step
from .synthesis import (
    SyntheticDataset,
    WindowMatrix,
    build_window_matrix,
    extract_windows,
    is_valid_window,
    split,
    synthesize,
)
from .training import TrainConfig, TrainReport, evaluate, run_experiment_grid, train

__all__ = [
    "APPLIANCE_NAMES",
    "ConvSpec",
    "EvolutionPolicy",
    "ModelSpec",
    "Network",
    "PowerSeries",
    "RnnSpec",
    "SparseLayer",
    "SyntheticDataset",
    "TrainConfig",
    "TrainReport",
    "WindowMatrix",
    "build",
    "build_window_matrix",
    "erdos_renyi_init",
    "evaluate",
    "evolve",
    "extract_windows",
    "grid_specs",
    "is_valid_window",
    "parse_channel",
    "resample_gaps",
    "run_experiment_grid",
    "serialize_channel",
    "sgd_step",
    "split",
    "synthesize",
    "train",
    "write_channel_files",
    "__version__",
]
