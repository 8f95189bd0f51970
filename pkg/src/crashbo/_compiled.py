"""Compiled inner loops for EP and for the hyperparameter objectives.

The MAP searches evaluate the evidence thousands of times on small matrices,
where interpreter overhead dominates the arithmetic; these routines run one
evaluation end to end without returning to Python.  Factorizations report
failure through a flag instead of raising.
"""

import math

import numpy as np
from numba import njit

from .core_math import DEFAULT_JITTER, MAX_JITTER, SQRT5, _TAIL_SWITCH, _TAIL_VAR_COEFFS

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_LOG_2PI = math.log(2.0 * math.pi)
_TAIL_COEFFS = np.array(_TAIL_VAR_COEFFS)

# status codes returned by the fused evidence routines
OK = 0
FACTOR_FAILED = 1
NOT_CONVERGED = 2
NON_FINITE = 3


@njit(cache=True, error_model="numpy")
def matern52_gram(X, ls, scale):
    n, d = X.shape
    K = np.empty((n, n))
    for i in range(n):
        K[i, i] = scale
        for j in range(i):
            r2 = 0.0
            for k in range(d):
                t = (X[i, k] - X[j, k]) / ls[k]
                r2 += t * t
            sr = SQRT5 * math.sqrt(r2)
            v = scale * (1.0 + sr + sr * sr / 3.0) * math.exp(-sr)
            K[i, j] = v
            K[j, i] = v
    return K


@njit(cache=True, error_model="numpy")
def cholesky_flag(A, L):
    """Lower factor of ``A`` written into ``L``; returns False if ``A`` is not positive definite."""
    n = A.shape[0]
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0 or not math.isfinite(s):
            return False
        d = math.sqrt(s)
        L[j, j] = d
        inv = 1.0 / d
        for i in range(j + 1, n):
            t = A[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t * inv
        for i in range(j):
            L[i, j] = 0.0
    return True


@njit(cache=True, error_model="numpy")
def robust_cholesky_flag(A, jitter):
    """Same escalation rule as ``core_math.robust_cholesky``; returns ``(L, ok)``."""
    n = A.shape[0]
    L = np.zeros((n, n))
    mean_diag = 0.0
    for i in range(n):
        mean_diag += A[i, i]
    mean_diag = max(mean_diag / max(n, 1), 1e-300)
    j = jitter
    M = A.copy()
    while True:
        if j > 0.0:
            for i in range(n):
                M[i, i] = A[i, i] + j * mean_diag
        if cholesky_flag(M, L):
            return L, True
        if j >= MAX_JITTER:
            return L, False
        j = min(max(10.0 * j, DEFAULT_JITTER), MAX_JITTER)


@njit(cache=True, error_model="numpy")
def forward_solve(L, B):
    """Solve ``L X = B`` for lower-triangular ``L`` (B has shape (n, m))."""
    n, m = B.shape
    X = B.copy()
    for i in range(n):
        for k in range(i):
            lik = L[i, k]
            if lik != 0.0:
                for j in range(m):
                    X[i, j] -= lik * X[k, j]
        inv = 1.0 / L[i, i]
        for j in range(m):
            X[i, j] *= inv
    return X


@njit(cache=True, error_model="numpy")
def _erfcx(t):
    if t < 25.0:
        return math.exp(t * t) * math.erfc(t)
    # asymptotic series; relative error below 1e-16 at t >= 25
    u = 1.0 / (2.0 * t * t)
    return (1.0 - u * (1.0 - 3.0 * u * (1.0 - 5.0 * u * (1.0 - 7.0 * u)))) / (t * math.sqrt(math.pi))


@njit(cache=True, error_model="numpy")
def log_ndtr(z):
    if z > -5.0:
        return math.log(0.5 * math.erfc(-z / _SQRT2))
    t = -z / _SQRT2
    return math.log(0.5 * _erfcx(t)) - t * t


@njit(cache=True, error_model="numpy")
def gp_log_marginal(X, y, ls, scale, noise, jitter):
    """Log marginal likelihood of a zero-mean Matérn-5/2 GP; NaN if factorization fails."""
    n = X.shape[0]
    A = matern52_gram(X, ls, scale)
    for i in range(n):
        A[i, i] += noise
    L, ok = robust_cholesky_flag(A, jitter)
    if not ok:
        return math.nan
    w = forward_solve(L, y.reshape(n, 1))[:, 0]
    val = -0.5 * n * _LOG_2PI
    for i in range(n):
        val -= 0.5 * w[i] * w[i] + math.log(L[i, i])
    return val
@njit(cache=True, error_model="numpy")
def tilted_scalar(m, v, bound, upper):
    """Moments of N(m, v) restricted to g <= bound (upper) or g >= bound."""
    sd = math.sqrt(v)
    if upper:
        z = (bound - m) / sd
    else:
        z = (m - bound) / sd
    if z != z or z == math.inf:
        return m, v
    if z < -_TAIL_SWITCH:
        e = -1.0 / z
        e2 = e * e
        r = -z + e * (1.0 + e2 * (-2.0 + e2 * (10.0 + e2 * (-74.0 + e2 * (706.0 - 8162.0 * e2)))))
        factor = 0.0
        for coef in _TAIL_COEFFS[::-1]:
            factor = factor * e2 + coef
        factor *= e2
    else:
        t = -z / _SQRT2
        # erfcx(t); t <= 30 / sqrt(2) keeps exp(t * t) finite
        r = _SQRT_2_OVER_PI / (math.exp(t * t) * math.erfc(t))
        factor = 1.0 - r * (z + r)
        if factor < 0.0:
            factor = 0.0
    if upper:
        return m - sd * r, v * factor
    return m + sd * r, v * factor


@njit(cache=True, error_model="numpy")
def ep_sweep(Sigma, mu, tau, nu, upper, c, order, damping, min_var, max_tau):
    """One sequential pass of site updates with rank-1 posterior refreshes (in place)."""
    n = mu.shape[0]
    s = np.empty(n)
    for k in range(n):
        i = order[k]
        s_ii = Sigma[i, i]
        if s_ii <= 0.0:
            continue
        prec_cav = 1.0 / s_ii - tau[i]
        if prec_cav <= 0.0:
            continue
        v_cav = 1.0 / prec_cav
        m_cav = v_cav * (mu[i] / s_ii - nu[i])
        m_hat, v_hat = tilted_scalar(m_cav, v_cav, c, upper[i])
        if v_hat < min_var:
            v_hat = min_var
        tau_new = 1.0 / v_hat - prec_cav
        if tau_new < 0.0:
            tau_new = 0.0
        elif tau_new > max_tau:
            tau_new = max_tau
        nu_new = m_hat / v_hat - m_cav * prec_cav
        if tau_new == 0.0 and v_hat >= v_cav:
            nu_new = 0.0
        tau_i = (1.0 - damping) * tau[i] + damping * tau_new
        nu_i = (1.0 - damping) * nu[i] + damping * nu_new
        dtau = tau_i - tau[i]
        dnu = nu_i - nu[i]
        if abs(dtau) * s_ii < 1e-14 and abs(dnu) * math.sqrt(s_ii) < 1e-14:
            continue
        denom = 1.0 + dtau * s_ii
        coef = (dnu - dtau * mu[i]) / denom
        beta = dtau / denom
        for a in range(n):
            s[a] = Sigma[a, i]
        for a in range(n):
            mu[a] += s[a] * coef
            sa = beta * s[a]
            for b in range(n):
                Sigma[a, b] -= sa * s[b]
        tau[i] = tau_i
        nu[i] = nu_i


@njit(cache=True, error_model="numpy")
def refresh(m_t, S_t, tau, nu, jitter):
    """Exact posterior of N(m_t, S_t) times the sites; also returns log|B| and a success flag."""
    n = m_t.shape[0]
    sq = np.sqrt(tau)
    B = np.eye(n) + np.outer(sq, sq) * S_t
    L, ok = robust_cholesky_flag(B, jitter)
    if not ok:
        return S_t.copy(), m_t.copy(), 0.0, False
    V = forward_solve(L, sq.reshape(n, 1) * S_t)
    Vt = np.ascontiguousarray(V.T)
    Sigma = S_t - Vt @ V
    w = m_t + S_t @ nu
    u = forward_solve(L, (sq * w).reshape(n, 1))
    mu = w - (Vt @ u)[:, 0]
    logdet = 0.0
    for i in range(n):
        logdet += 2.0 * math.log(L[i, i])
    return 0.5 * (Sigma + Sigma.T), mu, logdet, True


@njit(cache=True, error_model="numpy")
def ep_loop(m_t, S_t, tau, nu, upper, c, perms, damping, min_var, max_tau, tol,
            refresh_every, jitter):
    """Damped sequential EP sweeps until the relative site change drops below ``tol``.

    Sites are updated in place.  Returns ``(sweeps, converged, factor_ok)``.
    """
    n = m_t.shape[0]
    Sigma, mu, _, ok = refresh(m_t, S_t, tau, nu, jitter)
    if not ok:
        return 0, False, False
    tau_old = np.empty(n)
    nu_old = np.empty(n)
    max_sweeps = perms.shape[0]
    for sweep in range(max_sweeps):
        tau_old[:] = tau
        nu_old[:] = nu
        ep_sweep(Sigma, mu, tau, nu, upper, c, perms[sweep], damping, min_var, max_tau)
        if (sweep + 1) % refresh_every == 0:
            Sigma, mu, _, ok = refresh(m_t, S_t, tau, nu, jitter)
            if not ok:
                return sweep + 1, False, False
        change = 0.0
        for i in range(n):
            dt = abs(tau[i] - tau_old[i]) / max(1.0, abs(tau[i]))
            dn = abs(nu[i] - nu_old[i]) / max(1.0, abs(nu[i]))
            if dt > change:
                change = dt
            if dn > change:
                change = dn
        if change < tol:
            return sweep + 1, True, True
    return max_sweeps, False, True


@njit(cache=True, error_model="numpy")
def gaussian_product(K, ns, y, noise, jitter):
    """``N(y | g_s, noise I) N(g | 0, K) = exp(log_scale) N(g | m, S)``; returns ``(m, S, log_scale, ok)``."""
    n = K.shape[0]
    if ns == 0:
        return np.zeros(n), K.copy(), 0.0, True
    A = K[:ns, :ns].copy()
    for i in range(ns):
        A[i, i] += noise
    L, ok = robust_cholesky_flag(A, jitter)
    if not ok:
        return np.zeros(n), K.copy(), 0.0, False
    V = forward_solve(L, np.ascontiguousarray(K[:ns, :]))
    w = np.ascontiguousarray(forward_solve(L, y.reshape(ns, 1))[:, 0])
    Vt = np.ascontiguousarray(V.T)
    m = Vt @ w
    S = K - Vt @ V
    S = 0.5 * (S + S.T)
    log_scale = -0.5 * ns * _LOG_2PI
    for i in range(ns):
        log_scale -= 0.5 * w[i] * w[i] + math.log(L[i, i])
    return m, S, log_scale, True


@njit(cache=True, error_model="numpy")
def ep_log_evidence(m_t, tau, nu, Sigma, mu, logdet_b, upper, c, ns, y, noise):
    """EP approximation of the log normalizer of the truncated Gaussian product."""
    n = m_t.shape[0]
    total = 0.0
    quad = 0.0
    for i in range(n):
        s = Sigma[i, i]
        if not s > 0.0:
            return -math.inf
        prec_cav = 1.0 / s - tau[i]
        if not prec_cav > 0.0:
            return -math.inf
        v = 1.0 / prec_cav
        m = v * (mu[i] / s - nu[i])
        sd = math.sqrt(v)
        if upper[i]:
            log_zhat = log_ndtr((c - m) / sd)
        else:
            log_zhat = log_ndtr((m - c) / sd)
        tv = tau[i] * v
        log_cav_site = (-0.5 * math.log1p(tv)
                        + 0.5 * (2.0 * m * nu[i] + nu[i] * nu[i] * v - m * m * tau[i]) / (1.0 + tv))
        total += log_zhat - log_cav_site
        b = y[i] / noise if i < ns else 0.0
        quad += (mu[i] - m_t[i]) * b + mu[i] * nu[i]
    return total + 0.5 * quad - 0.5 * logdet_b


@njit(cache=True, error_model="numpy")
def gpcr_log_evidence(X, ns, y, ls, scale, noise, c, tau, nu, perms, damping, min_var,
                      max_tau, tol, refresh_every, jitter):
    """Full GPCR log evidence (Gaussian-product scale plus EP) in one call.

    ``tau`` and ``nu`` hold the initial sites and receive the final ones.
    Returns ``(log_evidence, sweeps, status)``.
    """
    n = X.shape[0]
    K = matern52_gram(X, ls, scale)
    m_t, S_t, log_scale, ok = gaussian_product(K, ns, y, noise, jitter)
    if not ok:
        return -math.inf, 0, FACTOR_FAILED
    upper = np.zeros(n, dtype=np.bool_)
    upper[:ns] = True
    sweeps, converged, ok = ep_loop(m_t, S_t, tau, nu, upper, c, perms, damping, min_var,
                                    max_tau, tol, refresh_every, jitter)
    if not ok:
        return -math.inf, sweeps, FACTOR_FAILED
    if not converged:
        return -math.inf, sweeps, NOT_CONVERGED
    Sigma, mu, logdet_b, ok = refresh(m_t, S_t, tau, nu, jitter)
    if not ok:
        return -math.inf, sweeps, FACTOR_FAILED
    log_z = ep_log_evidence(m_t, tau, nu, Sigma, mu, logdet_b, upper, c, ns, y, noise)
    if not math.isfinite(log_z):
        return -math.inf, sweeps, NON_FINITE
    return log_scale + log_z, sweeps, OK
