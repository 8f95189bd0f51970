import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from crashbo.core_math import (
    KernelHyper,
    NumericalError,
    UnivariateGaussian,
    gram,
    kernel_matrix,
    log_normal_cdf,
    matern52,
    robust_cholesky,
    truncated_moments,
    truncated_moments_array,
)

mpmath.mp.dps = 50


def mp_matern(r, ls, scale):
    r = mpmath.mpf(r) / mpmath.mpf(ls)
    s5 = mpmath.sqrt(5) * r
    return mpmath.mpf(scale) * (1 + s5 + 5 * r**2 / 3) * mpmath.exp(-s5)


def mp_log_ndtr(z):
    z = mpmath.mpf(z)
    if z > 0:
        # 1 - Phi(-z) is not representable at 50 digits for large z
        return mpmath.log1p(-mpmath.erfc(z / mpmath.sqrt(2)) / 2)
    return mpmath.log(mpmath.erfc(-z / mpmath.sqrt(2)) / 2)


def quad_truncated(m, v, bound, side):
    """Mass, mean and variance of N(m, v) on one side of ``bound`` by adaptive quadrature."""
    sd = math.sqrt(v)
    pdf = lambda g: math.exp(-0.5 * ((g - m) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    lo, hi = (-np.inf, bound) if side == "below" else (bound, np.inf)
    opts = dict(epsabs=0, epsrel=1e-13, limit=200)
    z0 = integrate.quad(pdf, lo, hi, **opts)[0]
    z1 = integrate.quad(lambda g: g * pdf(g), lo, hi, **opts)[0] / z0
    z2 = integrate.quad(lambda g: (g - z1) ** 2 * pdf(g), lo, hi, **opts)[0] / z0
    return z0, z1, z2


def mp_truncated_below(z):
    """Mean and variance of a standard normal truncated to g <= z, in high precision."""
    z = mpmath.mpf(z)
    phi = mpmath.npdf(z)
    Phi = mpmath.ncdf(z)
    r = phi / Phi
    return -r, 1 - z * r - r**2


class TestKernelHyper:
    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            KernelHyper(0.0, 1.0)
        with pytest.raises(ValueError):
            KernelHyper(0.5, -1.0)

    def test_lengthscale_broadcast_and_mismatch(self):
        assert np.array_equal(KernelHyper(0.2, 1.0).lengthscales_for(3), [0.2, 0.2, 0.2])
        with pytest.raises(ValueError):
            KernelHyper([0.2, 0.3], 1.0).lengthscales_for(3)


class TestMatern:
    def test_zero_distance_gives_scale(self):
        h = KernelHyper(0.4, 2.0)
        assert matern52([0.3, 0.7], [0.3, 0.7], h) == 2.0

    def test_infinite_lengthscale_limit(self):
        h = KernelHyper(1e12, 1.7)
        assert matern52(np.zeros(4), np.ones(4), h) == pytest.approx(1.7, rel=1e-12)

    def test_high_precision_reference(self):
        h = KernelHyper(0.5, 1.0)
        expected = float(mp_matern(1.0, 0.5, 1.0))
        assert matern52([0.0], [1.0], h) == pytest.approx(expected, rel=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            matern52([0.1, 0.2], [0.1], KernelHyper(0.3, 1.0))

    def test_matrix_matches_pairwise(self, rng):
        h = KernelHyper([0.2, 0.5, 0.9], 1.3)
        A, B = rng.random((4, 3)), rng.random((5, 3))
        K = kernel_matrix(A, B, h)
        ref = np.array([[matern52(a, b, h) for b in B] for a in A])
        np.testing.assert_allclose(K, ref, rtol=1e-12, atol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 4), st.floats(0.01, 2.0), st.floats(0.1, 10.0),
           st.integers(0, 2**31 - 1))
    def test_symmetric_and_stationary(self, dim, ls, scale, seed):
        r = np.random.default_rng(seed)
        h = KernelHyper(ls, scale)
        x, y = r.random(dim), r.random(dim)
        shift = r.normal(size=dim)
        assert matern52(x, y, h) == pytest.approx(matern52(y, x, h), rel=1e-14)
        assert matern52(x + shift, y + shift, h) == pytest.approx(matern52(x, y, h), rel=1e-10)


class TestGram:
    def test_single_point(self):
        K = gram([[0.2, 0.4]], KernelHyper(0.3, 1.5), jitter=1e-6)
        np.testing.assert_array_equal(K, [[1.5 + 1e-6]])

    def test_duplicate_points_rank_one(self):
        K = gram([[0.5], [0.5]], KernelHyper(0.3, 2.0))
        np.testing.assert_array_equal(K, np.full((2, 2), 2.0))
        assert np.linalg.matrix_rank(K) == 1

    def test_eigenvalues_non_negative(self, rng):
        K = gram(rng.random((5, 2)), KernelHyper(0.3, 1.0))
        assert np.linalg.eigvalsh(K).min() >= -1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            gram(np.zeros((0, 2)), KernelHyper(0.3, 1.0))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 3), st.floats(0.01, 1.0), st.floats(0.05, 20.0),
           st.integers(0, 2**31 - 1))
    def test_positive_semidefinite(self, n, dim, ls, scale, seed):
        X = np.random.default_rng(seed).random((n, dim))
        K = gram(X, KernelHyper(ls, scale), jitter=1e-8)
        assert np.linalg.eigvalsh(K).min() >= -1e-10


class TestRobustCholesky:
    def test_exact_factor_without_jitter(self, rng):
        A = gram(rng.random((6, 2)), KernelHyper(0.3, 1.0)) + 1e-3 * np.eye(6)
        L, j = robust_cholesky(A)
        assert j == 0.0
        np.testing.assert_allclose(L @ L.T, A, atol=1e-12)

    def test_escalates_on_singular_matrix(self):
        A = np.full((3, 3), 1.0)
        L, j = robust_cholesky(A)
        assert 0.0 < j <= 1e-4
        np.testing.assert_allclose(L @ L.T, A + j * np.eye(3), atol=1e-12)

    def test_raises_when_hopeless(self):
        with pytest.raises(NumericalError):
            robust_cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))


class TestLogNormalCdf:
    def test_reference_points(self):
        assert log_normal_cdf(0.0) == pytest.approx(math.log(0.5), rel=1e-15)
        assert log_normal_cdf(40.0) == 0.0
        assert log_normal_cdf(-8.0) == pytest.approx(float(mp_log_ndtr(-8)), rel=1e-12)

    def test_relative_accuracy_grid(self):
        z = np.linspace(-30, 30, 241)
        got = log_normal_cdf(z)
        ref = np.array([float(mp_log_ndtr(v)) for v in z])
        big = np.abs(ref) > 1e-300
        rel = np.abs(got[big] - ref[big]) / np.abs(ref[big])
        assert rel.max() <= 1e-10
        assert np.all(np.diff(got) >= 0)
        assert np.all(np.isfinite(got))

    def test_complement_sums_to_one(self):
        z = np.linspace(-6, 6, 121)
        np.testing.assert_allclose(np.exp(log_normal_cdf(z)) + np.exp(log_normal_cdf(-z)), 1.0,
                                   atol=1e-12)


class TestTruncatedMoments:
    def test_half_normal(self):
        logz, mean, var = truncated_moments(UnivariateGaussian(0.0, 1.0), 0.0, "below")
        z0, m_ref, v_ref = quad_truncated(0.0, 1.0, 0.0, "below")
        assert logz == pytest.approx(math.log(z0), abs=1e-12)
        assert mean == pytest.approx(m_ref, abs=1e-10)
        assert var == pytest.approx(v_ref, abs=1e-10)
        assert mean == pytest.approx(-0.7978845608, abs=1e-9)
        assert var == pytest.approx(0.3633802276, abs=1e-9)

    def test_infinite_bound_is_identity(self):
        assert truncated_moments(UnivariateGaussian(0.3, 2.0), math.inf, "below") == (0.0, 0.3, 2.0)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.05, 4.0), st.floats(-3, 3))
    def test_reflection_symmetry(self, m, v, b):
        above = truncated_moments(UnivariateGaussian(m, v), b, "above")
        below = truncated_moments(UnivariateGaussian(-m, v), -b, "below")
        assert above[0] == pytest.approx(below[0], rel=1e-12, abs=1e-14)
        assert above[1] == pytest.approx(-below[1], rel=1e-12, abs=1e-14)
        assert above[2] == pytest.approx(below[2], rel=1e-12, abs=1e-14)

    def test_quadrature_oracle_moderate_z(self, rng):
        for _ in range(60):
            m, v = rng.normal(), rng.uniform(0.1, 3.0)
            z = rng.uniform(-8, 8)
            side = "below" if rng.random() < 0.5 else "above"
            b = m + z * math.sqrt(v) if side == "below" else m - z * math.sqrt(v)
            _, mean, var = truncated_moments(UnivariateGaussian(m, v), b, side)
            _, m_ref, v_ref = quad_truncated(m, v, b, side)
            assert abs(mean - m_ref) <= 1e-8
            assert abs(var - v_ref) <= 1e-8

    @pytest.mark.parametrize("z", [-10.0, -25.0, -29.9, -30.1, -40.0, -100.0, -1e4])
    def test_deep_tail_against_high_precision(self, z):
        logz, mean, var = truncated_moments_array(0.0, 1.0, z, "below")
        m_ref, v_ref = mp_truncated_below(z)
        assert float(logz) == pytest.approx(float(mp_log_ndtr(z)), rel=1e-12)
        assert float(mean) == pytest.approx(float(m_ref), rel=1e-12)
        assert float(var) == pytest.approx(float(v_ref), rel=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-1e3, 1e3), st.floats(1e-6, 1e3), st.floats(-1e3, 1e3),
           st.sampled_from(["below", "above"]))
    def test_never_nan_and_variance_shrinks(self, m, v, b, side):
        logz, mean, var = truncated_moments(UnivariateGaussian(m, v), b, side)
        assert np.isfinite(mean) and np.isfinite(var) and not np.isnan(logz)
        assert 0.0 <= var <= v * (1 + 1e-12)
        if side == "below":
            assert mean <= m + 1e-12 * max(1.0, abs(m))
        else:
            assert mean >= m - 1e-12 * max(1.0, abs(m))
