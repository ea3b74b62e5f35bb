"""Bernstein-polynomial maximum approximate likelihood for accelerated failure time models."""

from .basis import BernsteinModel, mixture_density, mixture_survival
from .data import Dataset, Observation, parse_csv, rescale, select_tau
from .optimizer import FitConfig, FitResult, mable_aft

__all__ = [
    "BernsteinModel",
    "Dataset",
    "FitConfig",
    "FitResult",
    "Observation",
    "mable_aft",
    "mixture_density",
    "mixture_survival",
    "parse_csv",
    "rescale",
    "select_tau",
]

__version__ = "0.1.0"
