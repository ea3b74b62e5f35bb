"""Compiled inner loop of the weight fixed point."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MIN_PROB = 1e-300
ACTIVE_WEIGHT = 1e-8


@njit(cache=True)
def stage_terms(B, D, over, u_over_pen, const, n, p, psi):
    """Loglikelihood at ``p``; fills ``psi``.  Returns ``-inf`` if infeasible."""
    k = p.size
    for j in range(k):
        psi[j] = 0.0
    ll = const
    for i in range(B.shape[0]):
        f = 0.0
        for j in range(k):
            f += B[i, j] * p[j]
        if over[i]:
            fs = max(f, MIN_PROB)
            ll += math.log(fs) - u_over_pen[i]
        else:
            if f <= 0.0:
                return -np.inf
            fs = f
            ll += math.log(f)
        inv = 1.0 / fs
        for j in range(k):
            psi[j] += B[i, j] * inv
    for i in range(D.shape[0]):
        P = 0.0
        for j in range(k):
            P += D[i, j] * p[j]
        if P < MIN_PROB:
            return -np.inf
        ll += math.log(P)
        inv = 1.0 / P
        for j in range(k):
            psi[j] += D[i, j] * inv
    for j in range(k):
        psi[j] /= n
    return ll


@njit(cache=True)
def kkt_residual(p, psi):
    over = 0.0
    act = 0.0
    for j in range(p.size):
        if psi[j] - 1.0 > over:
            over = psi[j] - 1.0
        if p[j] > ACTIVE_WEIGHT:
            a = abs(psi[j] - 1.0)
            if a > act:
                act = a
    return max(over, act)


@njit(cache=True)
def _em(p, psi, out):
    s = 0.0
    for j in range(p.size):
        out[j] = p[j] * psi[j]
        s += out[j]
    for j in range(p.size):
        out[j] /= s


@njit(cache=True)
def fixed_point(B, D, over, u_over_pen, const, n, p0, fp_tol, kkt_tol, maxit, accelerate, trace):
    """Run the fixed point from ``p0``.

    Returns ``(p, ll, iterations, converged, residual, n_trace)``; ``trace``
    receives the loglikelihood after every accepted point.
    """
    k = p0.size
    p = p0.copy()
    psi = np.empty(k)
    p1 = np.empty(k)
    psi1 = np.empty(k)
    p2 = np.empty(k)
    psi2 = np.empty(k)
    pa = np.empty(k)
    psia = np.empty(k)
    p3 = np.empty(k)
    psi3 = np.empty(k)
    r = np.empty(k)
    v = np.empty(k)

    ll = stage_terms(B, D, over, u_over_pen, const, n, p, psi)
    trace[0] = ll
    nt = 1
    if not np.isfinite(ll):
        return p, ll, 0, False, np.inf, nt
    ll_prev = -np.inf
    it = 0
    converged = False
    res = np.inf
    while True:
        res = kkt_residual(p, psi)
        if ll - ll_prev < fp_tol and res <= kkt_tol:
            converged = True
            break
        if it >= maxit:
            break
        ll_prev = ll
        if accelerate and it + 3 <= maxit:
            _em(p, psi, p1)
            ll1 = stage_terms(B, D, over, u_over_pen, const, n, p1, psi1)
            _em(p1, psi1, p2)
            ll2 = stage_terms(B, D, over, u_over_pen, const, n, p2, psi2)
            used = 2
            take3 = False
            vv = 0.0
            rr = 0.0
            for j in range(k):
                r[j] = p1[j] - p[j]
                v[j] = p2[j] - p1[j] - r[j]
                vv += v[j] * v[j]
                rr += r[j] * r[j]
            if vv > 0.0 and np.isfinite(ll2) and np.isfinite(ll1):
                alpha = min(-math.sqrt(rr / vv), -1.0)
                ok = False
                while alpha < -1.0:
                    pos = True
                    s = 0.0
                    for j in range(k):
                        pa[j] = p[j] - 2.0 * alpha * r[j] + alpha * alpha * v[j]
                        s += pa[j]
                        if pa[j] <= 0.0:
                            pos = False
                    if pos:
                        ok = True
                        break
                    alpha = 0.5 * (alpha - 1.0)
                if ok:
                    for j in range(k):
                        pa[j] /= s
                    lla = stage_terms(B, D, over, u_over_pen, const, n, pa, psia)
                    if np.isfinite(lla):
                        _em(pa, psia, p3)
                        ll3 = stage_terms(B, D, over, u_over_pen, const, n, p3, psi3)
                        used = 3
                        if np.isfinite(ll3) and ll3 >= ll2:
                            take3 = True
            if take3:
                p[:] = p3
                psi[:] = psi3
                ll = ll3
            else:
                p[:] = p2
                psi[:] = psi2
                ll = ll2
            it += used
        else:
            _em(p, psi, p1)
            ll = stage_terms(B, D, over, u_over_pen, const, n, p1, psi)
            p[:] = p1
            it += 1
        if nt < trace.size:
            trace[nt] = ll
            nt += 1
    return p, ll, it, converged, res, nt
