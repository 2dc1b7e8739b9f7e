"""Experiment configuration, orchestration, file formats and the command line."""

from .config import ExperimentConfig, load_config, default_config
from .experiment import run_experiment, run_ablation, build_task
from .metrics import MetricsRecord, psnr

__all__ = [
    "ExperimentConfig",
    "MetricsRecord",
    "build_task",
    "default_config",
    "load_config",
    "psnr",
    "run_ablation",
    "run_experiment",
]
