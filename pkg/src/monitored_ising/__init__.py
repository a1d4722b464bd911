"""Gaussian-state trajectory simulator for the continuously monitored Ising chain."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .model import ModelParams, imaginary_gap, quasiparticle_energy
from .dynamics import run_trajectory, split_seed
from .ensemble import EnsembleStats, run_ensemble
from .analysis import FitResult, bimodality_coefficient, fit_central_charge, locate_transition

__all__ = [
    "ModelParams",
    "imaginary_gap",
    "quasiparticle_energy",
    "run_trajectory",
    "split_seed",
    "EnsembleStats",
    "run_ensemble",
    "FitResult",
    "bimodality_coefficient",
    "fit_central_charge",
    "locate_transition",
]
