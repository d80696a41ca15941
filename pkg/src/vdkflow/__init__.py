"""Gaussian-process learning of power-flow voltages with vertex-degree kernels."""

from .acpf import InjectionSample, PowerFlowSolution, label_matrix, sample_matrix, solve_acpf
from .al import AlHistory, LayerDecomposition, build_layers, run_al, swipe
from .bench import ExperimentConfig, TrialResult, metrics, run_trials
from .errors import VdkflowError
from .gp import GpModel, assemble, fit, information_gain, predict, update
from .grid import Network, load_case, parse_case
from .kernels import VdkStructure, build_vdk, full_kernel, reduce_vdk, truncate_vdk

__version__ = "0.1.0"

__all__ = [
    "AlHistory", "ExperimentConfig", "GpModel", "InjectionSample", "LayerDecomposition", "Network",
    "PowerFlowSolution", "TrialResult", "VdkStructure", "VdkflowError", "assemble", "build_layers",
    "build_vdk", "fit", "full_kernel", "information_gain", "label_matrix", "load_case", "metrics",
    "parse_case", "predict", "reduce_vdk", "run_al", "run_trials", "sample_matrix", "solve_acpf",
    "swipe", "truncate_vdk", "update",
]
