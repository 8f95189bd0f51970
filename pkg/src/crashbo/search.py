"""Derivative-free local searches for hyperparameter and acquisition optimization."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

_PENALTY = 1e300


def pattern_search(fun, x0, step=0.5, max_evals=200, min_step=1e-3,
                   lower=None, upper=None, f0=None):
    """Minimize ``fun`` by polling ``x +/- h * e_d`` along every coordinate.

    ``fun`` maps an array of candidate points with shape (m, D) to m values.
    The best improving poll is accepted; otherwise ``h`` is halved.  Polls are
    clipped into ``[lower, upper]`` when bounds are given.

    Returns ``(x_best, f_best, n_evals)``.
    """
    x = np.array(x0, dtype=float)
    dim = x.size
    lo = None if lower is None else np.broadcast_to(np.asarray(lower, dtype=float), (dim,))
    hi = None if upper is None else np.broadcast_to(np.asarray(upper, dtype=float), (dim,))
    n_evals = 0
    if f0 is None:
        f = float(fun(x[None, :])[0])
        n_evals += 1
    else:
        f = float(f0)
    h = float(step)
    eye = np.eye(dim)
    while h >= min_step and n_evals < max_evals:
        polls = np.vstack([x + h * eye, x - h * eye])
        if lo is not None:
            polls = np.maximum(polls, lo)
        if hi is not None:
            polls = np.minimum(polls, hi)
        polls = polls[np.any(polls != x, axis=1)][: max_evals - n_evals]
        if polls.shape[0] == 0:
            h *= 0.5
            continue
        vals = np.asarray(fun(polls), dtype=float)
        vals = np.where(np.isnan(vals), np.inf, vals)
        n_evals += polls.shape[0]
        k = int(np.argmin(vals))
        if vals[k] < f:
            x = polls[k].copy()
            f = float(vals[k])
        else:
            h *= 0.5
    return x, f, n_evals


def simplex_search(fun, x0, step=1.0, max_evals=200, xtol=1e-3, ftol=1e-4):
    """Nelder-Mead refinement of a scalar function from an axis-aligned initial simplex.

    Non-finite values are treated as a very large penalty.  Returns
    ``(x_best, f_best, n_evals)``.
    """
    x0 = np.asarray(x0, dtype=float)
    simplex = np.vstack([x0, x0 + step * np.eye(x0.size)])

    def safe(u):
        v = float(fun(u))
        return v if np.isfinite(v) else _PENALTY

    res = minimize(safe, x0, method="Nelder-Mead",
                   options={"maxfev": max_evals, "xatol": xtol, "fatol": ftol,
                            "initial_simplex": simplex})
    f = float(res.fun)
    return np.asarray(res.x), (f if f < _PENALTY else np.inf), int(res.nfev)


def scalar_batch(fun):
    """Adapt a scalar function of one point to the batched interface."""
    def batched(P):
        return np.array([fun(p) for p in P])
    return batched
