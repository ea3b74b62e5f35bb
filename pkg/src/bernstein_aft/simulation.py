"""Monte Carlo designs for the Weibull AFT model and a parametric comparator.

Subjects get ``X1 ~ U(-1, 1)``, ``X2 = +-1`` with equal probability and
event times ``T = exp(gamma'x) W`` where ``W`` is Weibull with shape 2 and
scale 2.  Each replication draws from its own Philox substream keyed by
``(seed, replication)`` so results do not depend on execution order.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.integrate import quad, simpson

from .data import Dataset
from .inference import predict_density, predict_survival
from .optimizer import FitConfig, FitError, mable_aft

GAMMA_TRUE = (0.5, -0.5)
WEIBULL_SHAPE = 2.0
WEIBULL_SCALE = 2.0
DESIGN_TAU = 12.0
CASE1_U_MAX = 3.66
SIMPSON_PANELS = 512


@dataclass(frozen=True)
class Scheme:
    """Censoring mechanism.

    ``kind`` is ``"case0"`` (exact), ``"case1"`` (current status with
    ``U ~ U(0, u_max)``), ``"caseK"`` (``inspections`` visits with
    ``U(0, 2 inspect_len)`` gaps; with probability ``cen_prob`` the event is
    reported as the bracketing interval) or ``"right"`` (``C ~ U(0, c)``).
    """

    kind: str
    u_max: float = CASE1_U_MAX
    inspections: int = 2
    inspect_len: float = 1.25
    cen_prob: float = 0.7
    c: float | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.kind not in ("case0", "case1", "caseK", "right"):
            raise ValueError(f"unknown censoring scheme {self.kind!r}")
        if not 0.0 <= self.cen_prob <= 1.0:
            raise ValueError("cen_prob must lie in [0, 1]")
        if self.kind == "caseK" and (self.inspections < 1 or not self.inspect_len > 0):
            raise ValueError("caseK needs at least one inspection and a positive inspect_len")
        if self.kind == "case1" and not self.u_max > 0:
            raise ValueError("u_max must be positive")
        if self.kind == "right" and self.c is None and self.rate is None:
            raise ValueError("right censoring needs a bound c or a target rate")
        if self.rate is not None and not 0.0 < self.rate < 1.0:
            raise ValueError("target censoring rate must lie in (0, 1)")

    @property
    def label(self) -> str:
        if self.kind == "case0":
            return "0"
        if self.kind == "case1":
            return "1"
        if self.kind == "caseK":
            return str(self.inspections)
        return f"{round(100 * self.rate)}%" if self.rate is not None else f"c={self.c:g}"

    @classmethod
    def named(cls, name: str, **overrides) -> "Scheme":
        """Schemes of the published designs: ``case0``, ``case1``, ``case2``, ``case5``, ``right30``, ``right70``."""
        presets = {
            "case0": dict(kind="case0"),
            "case1": dict(kind="case1"),
            "case2": dict(kind="caseK", inspections=2, inspect_len=1.25, cen_prob=0.7),
            "case5": dict(kind="caseK", inspections=5, inspect_len=0.5, cen_prob=0.7),
            "right30": dict(kind="right", rate=0.3),
            "right70": dict(kind="right", rate=0.7),
        }
        if name not in presets:
            raise ValueError(f"unknown scheme {name!r}; choose from {', '.join(presets)}")
        return cls(**{**presets[name], **overrides})


@dataclass(frozen=True)
class SimDesign:
    n: int
    scheme: Scheme
    gamma_true: tuple[float, ...] = GAMMA_TRUE
    shape: float = WEIBULL_SHAPE
    scale: float = WEIBULL_SCALE
    replications: int = 1000
    seed: int = 0
    tau: float = DESIGN_TAU

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("Weibull shape and scale must be positive")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if len(self.gamma_true) != 2:
            raise ValueError("the design has two covariates")


@dataclass
class Score:
    rmse_gamma: list[float]
    rmise_f: float
    rmise_S: float
    replications: int = 0


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(replication,))))


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    x1 = rng.uniform(-1.0, 1.0, n)
    x2 = 2.0 * rng.integers(0, 2, n) - 1.0
    return np.column_stack([x1, x2])


def gen_event_times(x, gamma_true, shape: float, scale: float, rng: np.random.Generator) -> np.ndarray:
    u = 1.0 - rng.random(np.shape(x)[0])  # in (0, 1]
    return np.exp(np.asarray(x) @ np.asarray(gamma_true, dtype=float)) * scale * (-np.log(u)) ** (1.0 / shape)


def apply_censoring(times, x, scheme: Scheme, rng: np.random.Generator) -> Dataset:
    t = np.asarray(times, dtype=float)
    n = t.size
    if scheme.kind == "case0":
        return Dataset(t, t, np.zeros(n, dtype=int), x)
    if scheme.kind == "case1":
        u = rng.uniform(0.0, scheme.u_max, n)
        caught = t <= u
        y1 = np.where(caught, 0.0, u)
        y2 = np.where(caught, u, np.inf)
        return Dataset(y1, y2, np.ones(n, dtype=int), x)
    if scheme.kind == "caseK":
        gaps = rng.uniform(0.0, 2.0 * scheme.inspect_len, (n, scheme.inspections))
        visits = np.cumsum(gaps, axis=1)
        censor = rng.random(n) < scheme.cen_prob
        # index of the first visit at or after the event
        first = (visits < t[:, None]).sum(axis=1)
        y1 = np.where(first == 0, 0.0, visits[np.arange(n), np.maximum(first - 1, 0)])
        y2 = np.where(first == scheme.inspections, np.inf,
                      visits[np.arange(n), np.minimum(first, scheme.inspections - 1)])
        y1 = np.where(censor, y1, t)
        y2 = np.where(censor, y2, t)
        return Dataset(y1, y2, censor.astype(int), x)
    c = scheme.c
    if c is None:
        raise ValueError("right censoring bound c is not set; calibrate it first")
    cens = rng.uniform(0.0, c, n)
    exact = t <= cens
    return Dataset(np.where(exact, t, cens), np.where(exact, t, np.inf), (~exact).astype(int), x)


def calibrate_right_censoring(design: SimDesign, target_rate: float, draws: int = 10**6, seed: int = 0) -> float:
    """Bound ``c`` of ``C ~ U(0, c)`` giving ``P(C < T) = target_rate``.

    Bisection on a fixed Monte Carlo sample (common random numbers, so the
    estimated rate is monotone in ``c``).
    """
    if not 0.0 < target_rate < 1.0:
        raise ValueError("target_rate must lie strictly between 0 and 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(2**31,))))
    x = gen_covariates(draws, rng)
    t = gen_event_times(x, design.gamma_true, design.shape, design.scale, rng)
    v = rng.random(draws)

    def rate(c):
        return float(np.mean(c * v < t))

    lo, hi = 1e-8, float(t.max()) / max(float(v.min()), 1e-300) * 2.0
    if not rate(hi) < target_rate < rate(lo):
        raise ValueError(f"target rate {target_rate} cannot be bracketed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rate(mid) > target_rate:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10 * hi:
            break
    return 0.5 * (lo + hi)


# -- parametric comparator ---------------------------------------------------


@dataclass
class WeibullFit:
    gamma: np.ndarray
    shape: float
    scale: float
    loglik: float
    converged: bool
    grad_norm: float
    identifiable: bool = True
    iterations: int = 0


def _weibull_terms(theta, data: Dataset, want_hessian: bool = True):
    """Loglikelihood, gradient and Hessian in ``(gamma, log scale, log shape)``.

    Each subject enters through ``z = e^s (log y - gamma'x - mu)``; the
    loglikelihood is ``-inf`` (with meaningless derivatives) if any subject
    has zero probability.
    """
    d = data.dim
    gamma, mu, s = theta[:d], theta[d], theta[d + 1]
    npar = d + 2
    g = np.zeros(npar)
    H = np.zeros((npar, npar))
    if not (np.all(np.isfinite(theta)) and s < 700.0):
        return -np.inf, g, H
    k = math.exp(s)
    x = data.x
    eta = x @ gamma if d else np.zeros(data.n)

    def z_and_grad(y, mask):
        z = k * (np.log(y) - eta[mask] - mu)
        return z, np.column_stack([-k * x[mask], np.full(z.size, -k), z])

    ll = 0.0
    with np.errstate(all="ignore"):
        ex = data.delta == 0
        if ex.any():
            y = data.y1[ex]
            z, Gz = z_and_grad(y, ex)
            ez = np.exp(z)
            ll += np.sum(s - np.log(y) + z - ez)
            lz = 1.0 - ez
            g += Gz.T @ lz
            g[d + 1] += ex.sum()
            if want_hessian:
                H += (Gz * (-ez)[:, None]).T @ Gz + _zz_hessian(lz, z, x[ex], k, d)

        ce = ~ex
        if ce.any():
            y1, y2 = data.y1[ce], data.y2[ce]
            left = y1 <= 0
            right = np.isinf(y2)
            z1, G1 = z_and_grad(np.where(left, 1.0, y1), ce)
            z2, G2 = z_and_grad(np.where(right, 1.0, y2), ce)
            z1[left] = 0.0
            z2[right] = 0.0
            G1[left] = 0.0
            G2[right] = 0.0
            a = np.where(left, 0.0, np.exp(z1))
            b = np.where(right, np.inf, np.exp(z2))
            one_minus = -np.expm1(a - b)  # P / S1
            if not np.all(one_minus > 0):
                return -np.inf, g, H
            ll += np.sum(-a + np.log(one_minus))
            A = 1.0 / one_minus  # S1 / P
            Bq = np.where(right, 0.0, np.exp(a - b) * A)  # S2 / P
            bf = np.where(right, 0.0, b)
            w1 = -a * A  # dS1/dz1 / P
            w2 = -bf * Bq
            score = G1 * w1[:, None] - G2 * w2[:, None]
            g += score.sum(axis=0)
            if want_hessian:
                h1 = a * (a - 1.0) * A
                h2 = bf * (bf - 1.0) * Bq
                H += (G1 * h1[:, None]).T @ G1 - (G2 * h2[:, None]).T @ G2
                H += _zz_hessian(w1, z1, x[ce], k, d) - _zz_hessian(w2, z2, x[ce], k, d)
                H -= score.T @ score
    if not (np.isfinite(ll) and np.all(np.isfinite(g))):
        return -np.inf, g, H
    return float(ll), g, H


def _zz_hessian(w, z, x, k, d):
    """``sum_i w_i * d2 z_i / dtheta2`` for ``z = e^s (log y - gamma'x - mu)``."""
    npar = d + 2
    H = np.zeros((npar, npar))
    H[d + 1, d + 1] = np.sum(w * z)
    cross = np.concatenate([-k * (x.T @ w), [-k * np.sum(w)]])
    H[: d + 1, d + 1] += cross
    H[d + 1, : d + 1] += cross
    return H


def weibull_aft_mle(data: Dataset, tol: float = 1e-8, maxit: int = 200) -> WeibullFit:
    """Interval-censored Weibull AFT maximum likelihood by damped Newton.

    Parameters are ``(gamma, log scale, log shape)``.
    """
    d = data.dim
    informative = (data.delta == 0) | np.isfinite(data.y2)
    if not informative.any():
        return WeibullFit(np.full(d, np.nan), math.nan, math.nan, math.nan, False, math.nan, identifiable=False)
    mids = np.where(np.isfinite(data.y2), 0.5 * (data.y1 + data.y2), data.y1)
    mids = mids[mids > 0]
    theta = np.zeros(d + 2)
    theta[d] = math.log(float(np.mean(mids))) if mids.size else 0.0
    ll, g, H = _weibull_terms(theta, data)
    it = 0
    gnorm = float(np.max(np.abs(g)))
    for it in range(1, maxit + 1):
        if gnorm < tol:
            break
        negH = -H
        lam = 0.0
        while True:
            try:
                L = np.linalg.cholesky(negH + lam * np.eye(d + 2))
                break
            except np.linalg.LinAlgError:
                lam = max(2.0 * lam, 1e-6 * max(1.0, float(np.abs(np.diag(negH)).max())))
        step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        t = 1.0
        for _ in range(60):
            cand = theta + t * step
            cll, cg, cH = _weibull_terms(cand, data)
            if np.isfinite(cll) and cll >= ll:
                break
            t *= 0.5
        else:
            break
        if np.array_equal(cand, theta):
            break
        theta, ll, g, H = cand, cll, cg, cH
        gnorm = float(np.max(np.abs(g)))
    converged = gnorm < 1e-6
    return WeibullFit(theta[:d].copy(), math.exp(theta[d + 1]), math.exp(theta[d]), ll, converged, gnorm,
                      iterations=it)


def weibull_loglik(theta, data: Dataset) -> float:
    return _weibull_terms(np.asarray(theta, dtype=float), data, want_hessian=False)[0]


def weibull_density(t, shape: float, scale: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        lz = np.log(t / scale)
        a = shape * lz
        logf = math.log(shape / scale) + (shape - 1.0) * lz - np.exp(a)
        # far tail of a very peaked fit; avoids inf - inf
        logf = np.where(a > 700.0, -np.inf, logf)
        if shape == 1.0:
            logf = np.where(t == 0.0, math.log(1.0 / scale), logf)
        # infinite at t = 0 when shape < 1
        return np.exp(logf)


def weibull_survival(t, shape: float, scale: float) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.exp(-((np.asarray(t, dtype=float) / scale) ** shape))


# -- scoring and the replication harness ---------------------------------------


@dataclass
class Estimate:
    """One replicate's estimates: coefficients and baseline curves on the scoring grid."""

    gamma: np.ndarray
    density: np.ndarray
    survival: np.ndarray
    ise_f: float | None = None  # overrides the Simpson rule when the density is singular


def scoring_grid(tau: float) -> np.ndarray:
    return np.linspace(0.0, tau, SIMPSON_PANELS + 1)


def score(estimates: list[Estimate], design: SimDesign) -> Score:
    if not estimates:
        raise ValueError("no successful replications to score")
    grid = scoring_grid(design.tau)
    f0 = weibull_density(grid, design.shape, design.scale)
    s0 = weibull_survival(grid, design.shape, design.scale)
    truth = np.asarray(design.gamma_true, dtype=float)
    errs = np.array([e.gamma - truth for e in estimates])
    ise_f = [simpson((e.density - f0) ** 2, x=grid) if e.ise_f is None else e.ise_f for e in estimates]
    ise_s = [simpson((e.survival - s0) ** 2, x=grid) for e in estimates]
    return Score(
        rmse_gamma=[float(v) for v in np.sqrt(np.mean(errs**2, axis=0))],
        rmise_f=float(math.sqrt(np.mean(ise_f))),
        rmise_S=float(math.sqrt(np.mean(ise_s))),
        replications=len(estimates),
    )


def simulate_dataset(design: SimDesign, replication: int) -> Dataset:
    rng = replication_rng(design.seed, replication)
    x = gen_covariates(design.n, rng)
    t = gen_event_times(x, design.gamma_true, design.shape, design.scale, rng)
    return apply_censoring(t, x, design.scheme, rng)


def design_tau(design: SimDesign, data: Dataset) -> float:
    """The design truncation time, widened only if a sample exceeds it."""
    ymax = data.max_finite_endpoint()
    return design.tau if ymax < design.tau else 1.05 * ymax


def run_replicate(design: SimDesign, replication: int, config: FitConfig | None = None,
                  compare: bool = False) -> dict:
    data = simulate_dataset(design, replication)
    grid = scoring_grid(design.tau)
    zero = np.zeros(data.dim)
    out = {"replication": replication, "censored": float(np.mean(data.delta == 1))}
    cfg = replace(config or FitConfig(), tau=design_tau(design, data), workers=1)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = mable_aft(data, cfg)
        out["proposed"] = Estimate(fit.gamma, predict_density(fit, zero, grid), predict_survival(fit, zero, grid))
        out["degree"] = fit.degree
    except (FitError, FloatingPointError, np.linalg.LinAlgError) as exc:
        out["proposed_error"] = str(exc)
    if compare:
        wf = weibull_aft_mle(data)
        if wf.identifiable and np.all(np.isfinite(wf.gamma)):
            out["parametric"] = Estimate(wf.gamma, weibull_density(grid, wf.shape, wf.scale),
                                         weibull_survival(grid, wf.shape, wf.scale),
                                         ise_f=_weibull_ise(wf.shape, wf.scale, design))
            out["parametric_grad"] = wf.grad_norm
        else:
            out["parametric_error"] = "not identifiable"
    return out


def _weibull_ise(shape: float, scale: float, design: SimDesign) -> float:
    """Integrated squared error of a fitted Weibull density on ``[0, tau]``.

    Adaptive quadrature with breakpoints around the mode, since a fit with a
    very large shape is a spike narrower than the Simpson grid.  The error is
    infinite for ``shape <= 1/2`` (non-square-integrable pole at 0).
    """
    if shape <= 0.5:
        return math.inf

    def sq(t):
        return float((weibull_density(t, shape, scale) - weibull_density(t, design.shape, design.scale)) ** 2)

    mode = scale * ((shape - 1.0) / shape) ** (1.0 / shape) if shape > 1.0 else 0.0
    width = scale / shape
    points = [p for p in (mode - 5 * width, mode, mode + 5 * width) if 0.0 < p < design.tau]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val, _ = quad(sq, 0.0, design.tau, points=points or None, limit=500)
    return float(val)


def _replicate_job(args):
    return run_replicate(*args)


@dataclass
class SimResult:
    design: SimDesign
    proposed: Score
    parametric: Score | None = None
    degrees: list[int] = field(default_factory=list)
    failures: int = 0
    censoring_rate: float = 0.0
    c: float | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.design.n,
            "scheme": asdict(self.design.scheme),
            "replications": self.design.replications,
            "seed": self.design.seed,
            "tau": self.design.tau,
            "proposed": asdict(self.proposed),
            "parametric": asdict(self.parametric) if self.parametric else None,
            "degrees": self.degrees,
            "failures": self.failures,
            "censoring_rate": self.censoring_rate,
            "c": self.c,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def run_design(design: SimDesign, config: FitConfig | None = None, compare: bool = False,
               workers: int = 1) -> SimResult:
    """Run every replication of ``design`` and score the proposed (and parametric) fits."""
    c = None
    if design.scheme.kind == "right" and design.scheme.c is None:
        c = calibrate_right_censoring(design, design.scheme.rate, seed=design.seed)
        design = replace(design, scheme=replace(design.scheme, c=c))
    jobs = [(design, r, config, compare) for r in range(design.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reps = list(ex.map(_replicate_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        reps = [_replicate_job(j) for j in jobs]
    proposed = [r["proposed"] for r in reps if "proposed" in r]
    parametric = [r["parametric"] for r in reps if "parametric" in r]
    return SimResult(
        design=design,
        proposed=score(proposed, design),
        parametric=score(parametric, design) if compare and parametric else None,
        degrees=[r["degree"] for r in reps if "degree" in r],
        failures=sum("proposed" not in r for r in reps),
        censoring_rate=float(np.mean([r["censored"] for r in reps])),
        c=c if c is not None else design.scheme.c,
    )


def format_table(results: list[SimResult]) -> str:
    """Aligned rows ``k n gamma1 gamma2 f S``; parametric values in parentheses."""

    def cell(p, q):
        return f"{p:.3f}" if q is None else f"{p:.3f} ({q:.3f})"

    header = ["k", "n", "gamma1", "gamma2", "f", "S"]
    rows = []
    for res in results:
        pr, pa = res.proposed, res.parametric
        vals = [pr.rmse_gamma[0], pr.rmse_gamma[1], pr.rmise_f, pr.rmise_S]
        pvals = [None] * 4 if pa is None else [pa.rmse_gamma[0], pa.rmse_gamma[1], pa.rmise_f, pa.rmise_S]
        rows.append([res.design.scheme.label, str(res.design.n), *(cell(a, b) for a, b in zip(vals, pvals))])
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"
