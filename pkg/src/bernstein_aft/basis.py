"""Beta-kernel (Bernstein) basis on the unit interval and mixtures of it.

The density basis is ``beta_mj(u) = (m+1) C(m,j) u^j (1-u)^(m-j)``, the
Beta(j+1, m-j+1) density, and the survival basis ``Bbar_mj(u)`` is one
minus its distribution function.  A :class:`BernsteinModel` mixes these
kernels with simplex weights on ``[0, tau]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

# Above this degree binomial coefficients are evaluated through log-gamma.
LOG_SPACE_DEGREE = 30

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAXIT = 10_000


def _check_index(m: int, j: int) -> None:
    if m < 0 or j < 0 or j > m:
        raise ValueError(f"basis index out of range: m={m}, j={j}")


def _check_unit(u: float) -> None:
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"argument {u!r} outside [0, 1]")


def _log_binom(m: int, j) -> np.ndarray:
    return gammaln(m + 1.0) - gammaln(np.asarray(j) + 1.0) - gammaln(m - np.asarray(j) + 1.0)


def beta_density(m: int, j: int, u: float) -> float:
    """Value of the ``j``-th degree-``m`` beta kernel at ``u``."""
    _check_index(m, j)
    _check_unit(u)
    if u == 0.0:
        return float(m + 1) if j == 0 else 0.0
    if u == 1.0:
        return float(m + 1) if j == m else 0.0
    if m > LOG_SPACE_DEGREE:
        logv = math.log(m + 1) + float(_log_binom(m, j)) + j * math.log(u) + (m - j) * math.log1p(-u)
        return math.exp(logv)
    return (m + 1) * math.comb(m, j) * u**j * (1.0 - u) ** (m - j)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for k in range(1, _CF_MAXIT + 1):
        k2 = 2 * k
        aa = k * (b - k) * x / ((qam + k2) * (a + k2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + k) * (qab + k) * x / ((a + k2) * (qap + k2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _cf_term(a: float, b: float, x: float) -> float:
    # x^a (1-x)^b / (a B(a,b)) times the continued fraction
    logfront = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    return math.exp(logfront) * _betacf(a, b, x) / a


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """``I_x(a, b)`` for ``a, b > 0`` and ``x`` in ``[0, 1]``."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    _check_unit(x)
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    if x < a / (a + b):
        return _cf_term(a, b, x)
    return 1.0 - _cf_term(b, a, 1.0 - x)


def beta_survival(m: int, j: int, u: float) -> float:
    """``1 - int_0^u beta_mj``, the upper tail of Beta(j+1, m-j+1)."""
    _check_index(m, j)
    _check_unit(u)
    if u == 0.0:
        return 1.0
    if u == 1.0:
        return 0.0
    a = j + 1.0
    b = m - j + 1.0
    # the tail is the lower tail of Beta(b, a) at 1-u; evaluate whichever
    # side of the mean keeps the continued fraction short
    if u < a / (a + b):
        return 1.0 - _cf_term(a, b, u)
    return _cf_term(b, a, 1.0 - u)


def binomial_pmf_matrix(m: int, u) -> np.ndarray:
    """Rows ``C(m,k) u^k (1-u)^(m-k)`` for ``k = 0..m``, one row per entry of ``u``.

    ``u`` must already lie in ``[0, 1]``.  Endpoints give exact unit vectors.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    k = np.arange(m + 1)
    if m <= LOG_SPACE_DEGREE:
        coef = np.array([math.comb(m, i) for i in range(m + 1)], dtype=float)
        # 0.0**0 == 1 supplies the exact endpoint limits
        return coef * u[:, None] ** k * (1.0 - u[:, None]) ** (m - k)
    out = np.zeros((u.size, m + 1))
    lo = u == 0.0
    hi = u == 1.0
    out[lo, 0] = 1.0
    out[hi, m] = 1.0
    mid = ~(lo | hi)
    if mid.any():
        um = u[mid][:, None]
        logv = _log_binom(m, k) + k * np.log(um) + (m - k) * np.log1p(-um)
        out[mid] = np.exp(logv)
    return out


def density_basis(m: int, u) -> np.ndarray:
    """Matrix of ``beta_mj(u_i)``; shape ``(len(u), m+1)``."""
    return (m + 1) * binomial_pmf_matrix(m, u)


def survival_basis(m: int, u) -> np.ndarray:
    """Matrix of ``Bbar_mj(u_i)``; shape ``(len(u), m+1)``.

    Uses ``Bbar_mj(u) = P{Binomial(m+1, u) <= j}``.
    """
    pmf = binomial_pmf_matrix(m + 1, u)
    return np.cumsum(pmf[:, : m + 1], axis=1)


def basis_vectors(m: int, u: float) -> tuple[np.ndarray, np.ndarray]:
    """All ``m+1`` density and survival basis values at a single ``u``."""
    _check_unit(u)
    if m < 0:
        raise ValueError("degree must be nonnegative")
    return density_basis(m, u)[0], survival_basis(m, u)[0]


def density_derivative_bases(m: int, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bases for the mixture density and its first two derivatives in ``u``.

    Returns matrices ``B0``, ``B1``, ``B2`` of shape ``(len(u), m+1)`` such
    that ``f = B0 @ p``, ``f' = B1 @ p`` and ``f'' = B2 @ p``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    b0 = density_basis(m, u)
    b1 = np.zeros_like(b0)
    b2 = np.zeros_like(b0)
    if m >= 1:
        # d/du b_{m,j} = m (b_{m-1,j-1} - b_{m-1,j})
        low = binomial_pmf_matrix(m - 1, u) * ((m + 1) * m)
        b1[:, 1:] += low
        b1[:, :-1] -= low
    if m >= 2:
        low2 = binomial_pmf_matrix(m - 2, u) * ((m + 1) * m * (m - 1))
        b2[:, 2:] += low2
        b2[:, 1:-1] -= 2.0 * low2
        b2[:, :-2] += low2
    return b0, b1, b2


@dataclass(frozen=True)
class BernsteinModel:
    """Beta mixture of degree ``degree`` on ``[0, tau]`` with simplex ``weights``."""

    degree: int
    tau: float
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if w.shape != (self.degree + 1,):
            raise ValueError(f"expected {self.degree + 1} weights, got shape {w.shape}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, degree: int, tau: float = 1.0) -> "BernsteinModel":
        return cls(degree, tau, np.full(degree + 1, 1.0 / (degree + 1)))


def _scaled_arg(model: BernsteinModel, t: float, *, allow_beyond: bool) -> float:
    if t < 0:
        raise ValueError(f"time {t!r} is negative")
    if t > model.tau and not allow_beyond:
        raise ValueError(f"time {t!r} beyond truncation time {model.tau!r}")
    return t / model.tau


def mixture_density(model: BernsteinModel, t: float) -> float:
    u = _scaled_arg(model, t, allow_beyond=False)
    return float(density_basis(model.degree, u)[0] @ model.weights) / model.tau


def mixture_survival(model: BernsteinModel, t: float) -> float:
    u = _scaled_arg(model, t, allow_beyond=True)
    if u >= 1.0:
        return 0.0
    if u == 0.0:
        return 1.0
    s = float(survival_basis(model.degree, u)[0] @ model.weights)
    return min(max(s, 0.0), 1.0)


def mixture_density_derivatives(model: BernsteinModel, t: float) -> tuple[float, float, float]:
    """Mixture density and its first and second derivatives in ``t``."""
    u = _scaled_arg(model, t, allow_beyond=False)
    b0, b1, b2 = density_derivative_bases(model.degree, u)
    tau = model.tau
    p = model.weights
    return (
        float(b0[0] @ p) / tau,
        float(b1[0] @ p) / tau**2,
        float(b2[0] @ p) / tau**3,
    )
