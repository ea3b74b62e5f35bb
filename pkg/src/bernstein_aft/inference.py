"""Conditional density and survival curves from a fitted model."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .basis import density_basis, survival_basis
from .optimizer import FitResult, SingularityWarning


@dataclass(frozen=True)
class PredictionRequest:
    covariates: tuple[float, ...]
    times: tuple[float, ...]
    quantity: str = "survival"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if np.any(t < 0):
            raise ValueError("prediction times must be nonnegative")
        if np.any(np.diff(t) < 0):
            raise ValueError("prediction times must be sorted")
        if self.quantity not in ("survival", "density"):
            raise ValueError("quantity must be 'survival' or 'density'")


def _scaled_times(fit: FitResult, x, times) -> tuple[np.ndarray, float]:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != fit.gamma.size:
        raise ValueError(f"expected {fit.gamma.size} covariate values, got {x.size}")
    t = np.asarray(times, dtype=float).reshape(-1)
    if np.any(t < 0):
        raise ValueError("prediction times must be nonnegative")
    accel = float(np.exp(-fit.gamma @ (x - fit.baseline)))
    return t * accel / fit.tau, accel


def predict_survival(fit: FitResult, x, times) -> np.ndarray:
    """``S(t | x)``; zero beyond the support edge ``tau exp(gamma'(x - x0))``."""
    u, _ = _scaled_times(fit, x, times)
    inside = u < 1.0
    out = np.zeros(u.size)
    if inside.any():
        out[inside] = survival_basis(fit.degree, u[inside]) @ fit.p
    out[u == 0.0] = 1.0
    return np.clip(out, 0.0, 1.0)


def predict_density(fit: FitResult, x, times) -> np.ndarray:
    """``f(t | x) = exp(-gamma'x) f_m(t exp(-gamma'x))``; zero outside the support."""
    u, accel = _scaled_times(fit, x, times)
    inside = u <= 1.0
    out = np.zeros(u.size)
    if inside.any():
        out[inside] = density_basis(fit.degree, u[inside]) @ fit.p * (accel / fit.tau)
    return out


def predict(fit: FitResult, request: PredictionRequest) -> np.ndarray:
    fn = predict_survival if request.quantity == "survival" else predict_density
    return fn(fit, request.covariates, request.times)


def standard_errors(fit: FitResult) -> np.ndarray:
    sigma = np.asarray(fit.sigma_gamma, dtype=float)
    if sigma.size == 0:
        return np.zeros(0)
    w = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
    if w.min() <= 1e-12 * max(abs(w.max()), 1.0):
        warnings.warn("covariance of gamma is not positive definite; reporting |diagonal|",
                      SingularityWarning, stacklevel=2)
    return np.sqrt(np.abs(np.diag(sigma)))
