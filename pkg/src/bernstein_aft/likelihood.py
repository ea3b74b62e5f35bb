"""Approximate Bernstein loglikelihood of the AFT model and its derivatives.

For a subject with linear predictor ``eta = gamma'x`` the baseline is
evaluated at ``u = y exp(-eta) / tau``.  Exact observations contribute
``-eta + log f_m(u) - log tau`` and censored ones
``log{S_m(u1) - S_m(u2)}`` with ``S_m = 0`` for right-censored ``y2``.

The workspace caches basis matrices for one ``(gamma, degree)`` pair so that
repeated evaluations in the weights ``p`` reduce to matrix-vector products.
"""

from __future__ import annotations

import numpy as np

from .basis import BernsteinModel, density_basis, density_derivative_bases, survival_basis
from .data import Dataset

# slope of the log-density penalty for exact times beyond the support
SUPPORT_PENALTY = 1e10
# interval probabilities below this are treated as zero
MIN_PROB = 1e-300


def _scaled(y, scale):
    # y * scale with 0 * inf = 0 (a zero time stays at zero)
    with np.errstate(invalid="ignore"):
        return np.where(y == 0.0, 0.0, y * scale)


class LikelihoodWorkspace:
    """Basis values for fixed ``gamma`` and ``degree``.

    ``dataset`` times and ``tau`` must be in the same units; a rescaled
    dataset is used with ``tau=1``.
    """

    def __init__(self, gamma, degree: int, dataset: Dataset, tau: float = 1.0):
        gamma = np.asarray(gamma, dtype=float).reshape(-1)
        if gamma.size != dataset.dim:
            raise ValueError(f"gamma has {gamma.size} entries, covariates have {dataset.dim}")
        if not np.all(np.isfinite(gamma)):
            raise ValueError("gamma must be finite")
        self.gamma = gamma
        self.degree = degree
        self.tau = float(tau)
        self.n = dataset.n
        self.eta = dataset.x @ gamma if dataset.dim else np.zeros(dataset.n)
        with np.errstate(over="ignore"):
            scale = np.exp(-self.eta) / self.tau

        ex = dataset.delta == 0
        self.x_exact = dataset.x[ex]
        self.x_cens = dataset.x[~ex]
        self.eta_exact = self.eta[ex]

        u = _scaled(dataset.y1[ex], scale[ex])
        self.u = u
        self.over = u > 1.0
        self.uc = np.minimum(u, 1.0)
        self.B = density_basis(degree, self.uc)

        u1 = _scaled(dataset.y1[~ex], scale[~ex])
        u2 = _scaled(dataset.y2[~ex], scale[~ex])
        self.u1 = u1
        self.u2 = u2
        # right endpoint at or past the support edge: survival is zero there
        self.u2_out = ~(u2 < 1.0)
        self.u1c = np.minimum(u1, 1.0)
        self.u2c = np.where(self.u2_out, 1.0, u2)
        S1 = survival_basis(degree, self.u1c)
        S2 = survival_basis(degree, self.u2c)
        S2[self.u2_out] = 0.0
        S1[u1 >= 1.0] = 0.0
        self.D = S1 - S2
        self._deriv = None

    # -- p-side quantities -------------------------------------------------

    def mixtures(self, p):
        """Mixture densities at exact arguments and interval probabilities."""
        return self.B @ p, self.D @ p

    def loglik(self, p) -> float:
        p = np.asarray(p, dtype=float)
        f, P = self.mixtures(p)
        inside = ~self.over
        if np.any(f[inside] <= 0.0) or np.any(P < MIN_PROB):
            return -np.inf
        ll = -self.eta_exact.sum() - self.u.size * np.log(self.tau)
        ll += np.log(f[inside]).sum()
        if self.over.any():
            ll += np.sum(np.log(np.maximum(f[self.over], MIN_PROB)) - SUPPORT_PENALTY * (self.u[self.over] - 1.0))
        ll += np.log(P).sum()
        return float(ll)

    def _ratios(self, p):
        f, P = self.mixtures(p)
        if np.any(f[~self.over] <= 0.0) or np.any(P < MIN_PROB):
            raise FloatingPointError("zero density or interval probability; loglikelihood is -inf")
        return self.B / np.maximum(f, MIN_PROB)[:, None], self.D / P[:, None]

    def psi(self, p) -> np.ndarray:
        """Average gradient of the loglikelihood in ``p``."""
        rb, rd = self._ratios(np.asarray(p, dtype=float))
        return (rb.sum(axis=0) + rd.sum(axis=0)) / self.n

    def hessian_p(self, p) -> np.ndarray:
        rb, rd = self._ratios(np.asarray(p, dtype=float))
        return -(rb.T @ rb) - (rd.T @ rd)

    # -- gamma-side quantities ---------------------------------------------

    def _derivative_bases(self):
        if self._deriv is None:
            m = self.degree
            _, b1, b2 = density_derivative_bases(m, self.uc)
            # censored endpoints: density and slope of the baseline, zero
            # beyond the support edge and for right censoring
            f1b, d1b, _ = density_derivative_bases(m, self.u1c)
            f2b, d2b, _ = density_derivative_bases(m, self.u2c)
            out1 = self.u1 > 1.0
            f1b[out1] = 0.0
            d1b[out1] = 0.0
            out2 = ~(self.u2 <= 1.0)
            f2b[out2] = 0.0
            d2b[out2] = 0.0
            self._deriv = (b1, b2, f1b, d1b, f2b, d2b)
        return self._deriv

    def _eta_derivatives(self, p):
        """First and second derivatives of each subject's term in ``eta``."""
        p = np.asarray(p, dtype=float)
        b1, b2, f1b, d1b, f2b, d2b = self._derivative_bases()
        f, P = self.mixtures(p)
        if np.any(f[~self.over] <= 0.0) or np.any(P < MIN_PROB):
            raise FloatingPointError("zero density or interval probability; loglikelihood is -inf")

        u = self.uc
        fp = b1 @ p
        fpp = b2 @ p
        fs = np.maximum(f, MIN_PROB)
        r1 = u * fp / fs
        g_ex = -(1.0 + r1)
        h_ex = r1 + u**2 * (fs * fpp - fp**2) / fs**2
        if self.over.any():
            uo = self.u[self.over]
            g_ex[self.over] = -1.0 + SUPPORT_PENALTY * uo
            h_ex[self.over] = -SUPPORT_PENALTY * uo

        u1 = self.u1c
        u2 = np.where(np.isfinite(self.u2), self.u2c, 0.0)
        N = u1 * (f1b @ p) - u2 * (f2b @ p)
        M = u1**2 * (d1b @ p) - u2**2 * (d2b @ p)
        g_c = N / P
        h_c = -(g_c + g_c**2 + M / P)
        return g_ex, h_ex, g_c, h_c

    def grad_gamma(self, p) -> np.ndarray:
        g_ex, _, g_c, _ = self._eta_derivatives(p)
        return self.x_exact.T @ g_ex + self.x_cens.T @ g_c

    def hessian_gamma(self, p) -> np.ndarray:
        _, h_ex, _, h_c = self._eta_derivatives(p)
        H = (self.x_exact * h_ex[:, None]).T @ self.x_exact + (self.x_cens * h_c[:, None]).T @ self.x_cens
        return 0.5 * (H + H.T)


def _workspace(gamma, model: BernsteinModel, dataset: Dataset) -> LikelihoodWorkspace:
    return LikelihoodWorkspace(gamma, model.degree, dataset, model.tau)


def loglik(gamma, model: BernsteinModel, dataset: Dataset) -> float:
    """Approximate loglikelihood; ``-inf`` when some subject has zero likelihood."""
    return _workspace(gamma, model, dataset).loglik(model.weights)


def psi(gamma, model: BernsteinModel, dataset: Dataset) -> np.ndarray:
    return _workspace(gamma, model, dataset).psi(model.weights)


def hessian_p(gamma, model: BernsteinModel, dataset: Dataset) -> np.ndarray:
    return _workspace(gamma, model, dataset).hessian_p(model.weights)


def grad_gamma(gamma, model: BernsteinModel, dataset: Dataset) -> np.ndarray:
    return _workspace(gamma, model, dataset).grad_gamma(model.weights)


def hessian_gamma(gamma, model: BernsteinModel, dataset: Dataset) -> np.ndarray:
    return _workspace(gamma, model, dataset).hessian_gamma(model.weights)
