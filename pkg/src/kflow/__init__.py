"""Kernel learning for surrogate models of dynamical systems."""

from .dynamics import MapSystem, OdeSystem, TrajectoryRecord, make_system, simulate
from .embedding import DelayDataset, delay_embed, kmd_energies, select_tau_kmd
from .errors import KflowError
from .kernels import KernelSpec, cross_gram, evaluate, gram
from .metrics import LyapunovConfig, lyapunov_max, mmd2, rho, rho_L, rho_mmd, sample_batch
from .regress import SurrogateModel, error_interval, fit, one_step_errors, predict_mean, predict_variance, rollout
from .train import TrainConfig, kernel_flow, numerical_gradient

__version__ = "0.1.0"

__all__ = [
    "DelayDataset",
    "KernelSpec",
    "KflowError",
    "LyapunovConfig",
    "MapSystem",
    "OdeSystem",
    "SurrogateModel",
    "TrainConfig",
    "TrajectoryRecord",
    "cross_gram",
    "delay_embed",
    "error_interval",
    "evaluate",
    "fit",
    "gram",
    "kernel_flow",
    "kmd_energies",
    "lyapunov_max",
    "make_system",
    "mmd2",
    "numerical_gradient",
    "one_step_errors",
    "predict_mean",
    "predict_variance",
    "rho",
    "rho_L",
    "rho_mmd",
    "rollout",
    "sample_batch",
    "select_tau_kmd",
    "simulate",
]
