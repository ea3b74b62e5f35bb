"""Maximum approximate Bernstein likelihood fitting of the AFT model.

For a fixed degree ``m`` the weights ``p`` are updated by the multiplicative
fixed point ``p_j <- p_j Psi_j(gamma, p)`` and ``gamma`` by Newton-Raphson
with step halving; the two stages alternate until the loglikelihood stops
improving.  The degree is chosen over a grid by the change-point statistic
of the loglikelihood sequence.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, rescale, select_tau
from . import _kernels
from .likelihood import SUPPORT_PENALTY, LikelihoodWorkspace

SCHEMA_VERSION = 1
ACTIVE_WEIGHT = 1e-8


class FitError(RuntimeError):
    pass


class SingularityWarning(UserWarning):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class FitConfig:
    degree_min: int = 3
    degree_max: int = 25
    gamma_init: tuple[float, ...] | None = None
    tau: float | None = None
    fp_tol: float = 1e-8
    fp_maxit: int = 5000
    kkt_tol: float = 1e-6
    newton_tol: float = 1e-8
    newton_maxit: int = 50
    # Newton iterations per alternating cycle; None solves to convergence.
    # A single step keeps gamma from running ahead of stale weights.
    newton_steps: int | None = 1
    outer_tol: float = 1e-7
    outer_maxit: int = 200
    # restart each weight stage from the uniform vector unless warm_start
    warm_start: bool = False
    accelerate: bool = True
    # "observed": -H^{-1};  "scaled": -n H^{-1}
    covariance: str = "observed"
    # covariate value used as the baseline: "zero", "auto", a vector, or None
    # for "auto" when tau is not given and some subject is right censored
    baseline: tuple[float, ...] | str | None = None
    workers: int = 1

    def __post_init__(self):
        for name in ("fp_tol", "kkt_tol", "newton_tol", "outer_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("fp_maxit", "newton_maxit", "outer_maxit", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.newton_steps is not None and self.newton_steps < 1:
            raise ValueError("newton_steps must be at least 1 or None")
        if self.degree_min < 0:
            raise ValueError("degree_min must be nonnegative")
        if self.degree_max - self.degree_min < 2:
            raise ValueError("degree grid needs at least three degrees (k >= 2)")
        if self.covariance not in ("observed", "scaled"):
            raise ValueError("covariance must be 'observed' or 'scaled'")
        if isinstance(self.baseline, str) and self.baseline not in ("auto", "zero"):
            raise ValueError("baseline must be 'auto', 'zero' or a covariate vector")

    @property
    def degrees(self) -> list[int]:
        return list(range(self.degree_min, self.degree_max + 1))


@dataclass
class FixedPointResult:
    p: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    kkt_residual: float
    trace: list[float] | None = None


@dataclass
class NewtonResult:
    gamma: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    fallback_steps: int = 0
    singular_steps: int = 0
    grad_norm: float = math.nan


@dataclass
class AlternateResult:
    gamma: np.ndarray
    p: np.ndarray
    loglik: float
    outer_iterations: int
    converged: bool
    trace: list[float] = field(default_factory=list)
    fp_iterations: int = 0
    newton_iterations: int = 0
    fallback_steps: int = 0
    kkt_residual: float = math.nan


@dataclass
class FitResult:
    """Fitted model on the original time scale."""

    gamma: np.ndarray
    p: np.ndarray
    degree: int
    tau: float
    loglik: float
    sigma_gamma: np.ndarray
    n: int
    covariate_names: tuple[str, ...]
    degree_trace: list[dict] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    converged: bool = True
    baseline: np.ndarray | None = None

    def __post_init__(self):
        if self.baseline is None:
            self.baseline = np.zeros(np.asarray(self.gamma).size)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "gamma": [float(v) for v in self.gamma],
            "se": [float(v) for v in np.sqrt(np.abs(np.diag(self.sigma_gamma)))],
            "p": [float(v) for v in self.p],
            "degree": int(self.degree),
            "tau": float(self.tau),
            "loglik": float(self.loglik),
            "sigma_gamma": [[float(v) for v in row] for row in self.sigma_gamma],
            "n": int(self.n),
            "covariate_names": list(self.covariate_names),
            "baseline": [float(v) for v in self.baseline],
            "degree_trace": self.degree_trace,
            "diagnostics": self.diagnostics,
            "converged": bool(self.converged),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported fit schema {d.get('schema')!r}; expected {SCHEMA_VERSION}")
        gamma = np.array(d["gamma"], dtype=float)
        return cls(
            gamma=gamma,
            p=np.array(d["p"], dtype=float),
            degree=int(d["degree"]),
            tau=float(d["tau"]),
            loglik=float(d["loglik"]),
            sigma_gamma=np.array(d["sigma_gamma"], dtype=float).reshape(gamma.size, gamma.size),
            n=int(d["n"]),
            covariate_names=tuple(d["covariate_names"]),
            degree_trace=list(d.get("degree_trace", [])),
            diagnostics=dict(d.get("diagnostics", {})),
            converged=bool(d.get("converged", True)),
            baseline=np.array(d.get("baseline", np.zeros(gamma.size)), dtype=float),
        )


def kkt_residual(p: np.ndarray, psi: np.ndarray) -> float:
    """Largest violation of ``Psi_j <= 1`` with equality on active weights."""
    over = max(float(np.max(psi)) - 1.0, 0.0)
    active = p > ACTIVE_WEIGHT
    act = float(np.max(np.abs(psi[active] - 1.0))) if active.any() else 0.0
    return max(over, act)


def _kernel_inputs(ws: LikelihoodWorkspace):
    pen = np.where(ws.over, SUPPORT_PENALTY * (ws.u - 1.0), 0.0)
    const = float(-ws.eta_exact.sum() - ws.u.size * math.log(ws.tau))
    return (
        np.ascontiguousarray(ws.B),
        np.ascontiguousarray(ws.D),
        np.ascontiguousarray(ws.over),
        pen,
        const,
        float(ws.n),
    )


def fixed_point_p(
    gamma,
    m: int,
    dataset: Dataset,
    p0=None,
    fp_tol: float = 1e-8,
    fp_maxit: int = 5000,
    kkt_tol: float = 1e-6,
    *,
    accelerate: bool = False,
    workspace: LikelihoodWorkspace | None = None,
    keep_trace: bool = False,
) -> FixedPointResult:
    """Iterate ``p_j <- p_j Psi_j`` at fixed ``gamma``.

    Stops once the loglikelihood gain drops below ``fp_tol`` and the KKT
    residual is within ``kkt_tol``, or after ``fp_maxit`` updates.  With
    ``accelerate`` the map is applied in squared-extrapolation cycles
    (SQUAREM) that fall back to two plain updates whenever the extrapolated
    point does not improve the loglikelihood, so the sequence of accepted
    loglikelihoods is nondecreasing either way.
    """
    ws = workspace if workspace is not None else LikelihoodWorkspace(gamma, m, dataset)
    p = np.full(m + 1, 1.0 / (m + 1)) if p0 is None else np.array(p0, dtype=float)
    if p.shape != (m + 1,) or np.any(p < 0):
        raise ValueError("initial weights must be a nonnegative vector of length m+1")
    p /= p.sum()
    trace = np.empty(fp_maxit + 1 if keep_trace else 1)
    p, ll, it, converged, res, nt = _kernels.fixed_point(
        *_kernel_inputs(ws), p, fp_tol, kkt_tol, fp_maxit, accelerate, trace
    )
    if it == 0 and not np.isfinite(ll):
        raise FitError("loglikelihood is -inf at the initial weights")
    return FixedPointResult(p, float(ll), int(it), bool(converged), float(res),
                            trace[:nt].tolist() if keep_trace else None)


def _newton_direction(H: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, str]:
    negH = -H
    try:
        L = np.linalg.cholesky(negH)
        return np.linalg.solve(L.T, np.linalg.solve(L, g)), "newton"
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(negH)
    scale = max(float(np.max(np.abs(w))), 1.0)
    tol = 1e-10 * scale
    if np.all(w > -tol):
        keep = w > tol
        coef = (V.T @ g)[keep] / w[keep]
        return V[:, keep] @ coef, "singular"
    return g / scale, "ascent"


def newton_gamma(
    p,
    gamma0,
    m: int,
    dataset: Dataset,
    newton_tol: float = 1e-8,
    newton_maxit: int = 50,
    *,
    max_halvings: int = 30,
) -> NewtonResult:
    """Maximize the loglikelihood in ``gamma`` with the weights held at ``p``."""
    p = np.asarray(p, dtype=float)
    gamma = np.array(gamma0, dtype=float).reshape(-1)
    ws = LikelihoodWorkspace(gamma, m, dataset)
    ll = ws.loglik(p)
    if not np.isfinite(ll):
        raise FitError("loglikelihood is -inf at the initial gamma")
    fallback = singular = 0
    gnorm = math.nan
    for it in range(newton_maxit):
        g = ws.grad_gamma(p)
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < newton_tol:
            return NewtonResult(gamma, ll, it, True, fallback, singular, gnorm)
        step, kind = _newton_direction(ws.hessian_gamma(p), g)
        if kind == "ascent":
            fallback += 1
        elif kind == "singular":
            singular += 1
        # near the optimum the true gain is below loglik roundoff
        slack = 1e-13 * max(1.0, abs(ll))
        t = 1.0
        for _ in range(max_halvings + 1):
            cand = gamma + t * step
            cws = LikelihoodWorkspace(cand, m, dataset)
            cll = cws.loglik(p)
            if cll >= ll - slack:
                break
            t *= 0.5
        else:
            # no ascent along the direction at machine precision
            return NewtonResult(gamma, ll, it, False, fallback, singular, gnorm)
        if np.array_equal(cand, gamma):
            return NewtonResult(gamma, ll, it, False, fallback, singular, gnorm)
        gamma, ws, ll = cand, cws, cll
    g = ws.grad_gamma(p)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    return NewtonResult(gamma, ll, newton_maxit, gnorm < newton_tol, fallback, singular, gnorm)


def alternate_fit(m: int, dataset: Dataset, config: FitConfig | None = None, gamma0=None) -> AlternateResult:
    """Alternate Newton steps in ``gamma`` and fixed-point solves in ``p`` at degree ``m``.

    ``dataset`` must be rescaled to unit truncation time.
    """
    cfg = config or FitConfig()
    if gamma0 is None:
        gamma0 = cfg.gamma_init if cfg.gamma_init is not None else np.zeros(dataset.dim)
    gamma = np.array(gamma0, dtype=float).reshape(-1)
    fp_kw = dict(fp_tol=cfg.fp_tol, fp_maxit=cfg.fp_maxit, kkt_tol=cfg.kkt_tol, accelerate=cfg.accelerate)
    nr_maxit = cfg.newton_maxit if cfg.newton_steps is None else min(cfg.newton_steps, cfg.newton_maxit)

    fp = fixed_point_p(gamma, m, dataset, None, **fp_kw)
    ll = fp.loglik
    trace = [ll]
    fp_its, nr_its, fallback = fp.iterations, 0, 0
    stage_ok = fp.converged
    converged = False
    outer = 0
    for outer in range(1, cfg.outer_maxit + 1):
        nr = newton_gamma(fp.p, gamma, m, dataset, cfg.newton_tol, nr_maxit)
        nr_its += nr.iterations
        fallback += nr.fallback_steps
        if np.array_equal(nr.gamma, gamma):
            converged = True
            break
        ws = LikelihoodWorkspace(nr.gamma, m, dataset)
        start = fp.p if cfg.warm_start else None
        new = fixed_point_p(nr.gamma, m, dataset, start, workspace=ws, **fp_kw)
        fp_its += new.iterations
        if new.loglik < nr.loglik:
            # a truncated restart can land below the previous weights; resume from them
            new = fixed_point_p(nr.gamma, m, dataset, fp.p, workspace=ws, **fp_kw)
            fp_its += new.iterations
        gain = new.loglik - ll
        gamma, fp, ll = nr.gamma, new, new.loglik
        stage_ok = stage_ok and new.converged
        trace.append(ll)
        if gain < cfg.outer_tol:
            converged = True
            break
    return AlternateResult(
        gamma=gamma,
        p=fp.p,
        loglik=ll,
        outer_iterations=outer,
        converged=converged and fp.converged,
        trace=trace,
        fp_iterations=fp_its,
        newton_iterations=nr_its,
        fallback_steps=fallback,
        kkt_residual=fp.kkt_residual,
    )


def change_point_statistic(logliks) -> tuple[np.ndarray, int, list[str]]:
    """Change-point statistics ``R(m_1..m_k)`` and the chosen grid index.

    ``logliks`` holds ``l_0..l_k``.  Returns ``(R, i_hat, warnings)`` where
    ``R[i-1]`` is ``R(m_i)`` and ``i_hat`` is the smallest ``i`` maximizing it.
    """
    ell = np.asarray(logliks, dtype=float)
    k = ell.size - 1
    if k < 2:
        raise ValueError("need at least three loglikelihood values")
    notes = []
    eps = np.finfo(float).eps

    def _guard(v, what):
        if v <= 0:
            notes.append(f"nonpositive loglikelihood increment {what}={v:.3g}")
            return eps
        return v

    total = _guard(ell[k] - ell[0], "l_k-l_0")
    R = np.zeros(k)
    for i in range(1, k):
        a = _guard(ell[i] - ell[0], f"l_{i}-l_0")
        b = _guard(ell[k] - ell[i], f"l_k-l_{i}")
        R[i - 1] = k * math.log(total / k) - i * math.log(a / i) - (k - i) * math.log(b / (k - i))
    R[k - 1] = 0.0
    rounded = np.round(R, 10)
    i_hat = int(np.argmax(rounded)) + 1
    return R, i_hat, notes


def _fit_degree(args):
    m, data, cfg = args
    try:
        return alternate_fit(m, data, cfg)
    except (FitError, FloatingPointError) as exc:
        return exc


def degree_select(dataset: Dataset, config: FitConfig | None = None) -> tuple[AlternateResult, int, list[dict], list[str]]:
    """Fit every degree on the grid and pick one by the change-point rule.

    Returns the chosen fit, its degree, the per-degree trace and warnings.
    """
    cfg = config or FitConfig()
    degrees = cfg.degrees
    jobs = [(m, dataset, cfg) for m in degrees]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            fits = list(ex.map(_fit_degree, jobs))
    else:
        fits = [_fit_degree(j) for j in jobs]
    notes = []
    ok = []
    for m, fit in zip(degrees, fits):
        if isinstance(fit, Exception):
            notes.append(f"degree {m} failed: {fit}")
            warnings.warn(f"degree {m} fit failed: {fit}", ConvergenceWarning, stacklevel=2)
        else:
            ok.append((m, fit))
    if not ok:
        raise FitError("fits failed at every degree")
    if len(ok) < 3:
        if len(ok) < 2:
            raise FitError("fewer than two degrees could be fitted")
        m, fit = max(ok, key=lambda t: t[1].loglik)
        trace = [{"m": mm, "loglik": f.loglik, "R": None} for mm, f in ok]
        return fit, m, trace, notes
    R, i_hat, cp_notes = change_point_statistic([f.loglik for _, f in ok])
    notes.extend(cp_notes)
    for note in cp_notes:
        warnings.warn(note, ConvergenceWarning, stacklevel=2)
    Rfull = [math.nan, *R]
    trace = [
        {"m": mm, "loglik": f.loglik, "R": (None if i == 0 else float(Rfull[i])), "converged": f.converged}
        for i, (mm, f) in enumerate(ok)
    ]
    m_hat, fit = ok[i_hat]
    return fit, m_hat, trace, notes


def covariance_gamma(gamma, p, m: int, dataset: Dataset, kind: str = "observed") -> np.ndarray:
    """Covariance of ``gamma_hat`` from the loglikelihood Hessian in ``gamma``.

    ``kind="observed"`` gives ``-H^{-1}``; ``kind="scaled"`` gives
    ``-n H^{-1}``, the covariance of ``sqrt(n) (gamma_hat - gamma)``.
    """
    d = dataset.dim
    if d == 0:
        return np.zeros((0, 0))
    H = LikelihoodWorkspace(gamma, m, dataset).hessian_gamma(p)
    negH = -H
    w = np.linalg.eigvalsh(negH)
    if w.min() <= 1e-10 * max(abs(w.max()), 1.0):
        warnings.warn("Hessian in gamma is singular or not negative definite; covariance is a pseudo-inverse",
                      SingularityWarning, stacklevel=2)
        cov = np.linalg.pinv(negH)
    else:
        cov = np.linalg.inv(negH)
    cov = 0.5 * (cov + cov.T)
    return dataset.n * cov if kind == "scaled" else cov


def _resolve_baseline(dataset: Dataset, data: Dataset, cfg: FitConfig) -> np.ndarray:
    d = dataset.dim
    choice = cfg.baseline
    if choice is None:
        choice = "auto" if cfg.tau is None and np.any(np.isinf(dataset.y2)) else "zero"
    if choice == "zero" or d == 0:
        return np.zeros(d)
    if choice == "auto":
        # pilot fit at the smallest degree; the subject with the smallest
        # linear predictor becomes the baseline so that y exp(-gamma'(x - x0))
        # never exceeds the observed range
        try:
            pilot = alternate_fit(cfg.degree_min, data, cfg)
        except (FitError, FloatingPointError):
            warnings.warn("pilot fit for the automatic baseline failed; using zero", ConvergenceWarning, stacklevel=3)
            return np.zeros(d)
        return dataset.x[int(np.argmin(dataset.x @ pilot.gamma))].copy()
    x0 = np.asarray(cfg.baseline, dtype=float).reshape(-1)
    if x0.size != d:
        raise ValueError("baseline length does not match the covariate dimension")
    return x0


def mable_aft(dataset: Dataset, config: FitConfig | None = None) -> FitResult:
    """Full pipeline: truncation time, rescaling, degree selection and covariance."""
    cfg = config or FitConfig()
    if dataset.rescaled:
        raise ValueError("mable_aft expects data on the original time scale")
    if cfg.gamma_init is not None and len(cfg.gamma_init) != dataset.dim:
        raise ValueError("gamma_init length does not match the covariate dimension")
    if dataset.dim:
        zero_cols = np.all(dataset.x == 0, axis=0)
        if zero_cols.any():
            names = [dataset.covariate_names[i] for i in np.flatnonzero(zero_cols)]
            warnings.warn(f"covariate(s) {names} are identically zero; their effects are not identified",
                          SingularityWarning, stacklevel=2)
    data = rescale(select_tau(dataset, cfg.tau))
    x0 = _resolve_baseline(dataset, data, cfg)
    if np.any(x0 != 0):
        data = data.with_covariates(data.x - x0, data.covariate_names)
    fit, m_hat, trace, notes = degree_select(data, cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sigma = covariance_gamma(fit.gamma, fit.p, m_hat, data, cfg.covariance)
    for w in caught:
        notes.append(str(w.message))
        warnings.warn(w.message, w.category, stacklevel=2)
    tau = data.tau
    n_exact = int(np.sum(data.delta == 0))
    ws = LikelihoodWorkspace(fit.gamma, m_hat, data)
    psi = ws.psi(fit.p)
    if ws.u.size and ws.u.max() >= 1.0 - 1e-6:
        note = "an exact observation sits at the support edge; consider a larger tau or another baseline"
        notes.append(note)
        warnings.warn(note, ConvergenceWarning, stacklevel=2)
    offset = -n_exact * math.log(tau)
    for row in trace:
        row["loglik"] = row["loglik"] + offset
    diagnostics = {
        "outer_iterations": fit.outer_iterations,
        "fp_iterations": fit.fp_iterations,
        "newton_iterations": fit.newton_iterations,
        "ascent_fallback_steps": fit.fallback_steps,
        "kkt_residual": kkt_residual(fit.p, psi),
        "max_psi": float(psi.max()),
        "covariance": cfg.covariance,
        "warnings": notes,
    }
    return FitResult(
        gamma=fit.gamma,
        p=fit.p,
        degree=m_hat,
        tau=tau,
        loglik=fit.loglik + offset,
        sigma_gamma=sigma,
        n=data.n,
        covariate_names=data.covariate_names,
        degree_trace=trace,
        diagnostics=diagnostics,
        converged=fit.converged,
        baseline=x0,
    )
