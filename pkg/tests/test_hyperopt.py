import math

import numpy as np
import pytest
from scipy import stats

from crashbo import gp_regression, gpcr, hyperopt
from crashbo.core_math import KernelHyper, gram
from crashbo.gpcr import GPCRHyper, HybridDataset
from crashbo.hyperopt import BetaPrior, GammaPrior, MapOptions, PriorSpec

GPCR_PRIORS = PriorSpec(threshold_prior=GammaPrior(2.0, 1.0), noise_variance=1e-4)


class TestPriors:
    def test_beta_density_matches_reference(self):
        for x in (0.01, 0.0345, 0.5, 0.9):
            assert BetaPrior(1.5, 15.0).logpdf(x) == pytest.approx(stats.beta(1.5, 15.0).logpdf(x),
                                                                   rel=1e-12)

    def test_gamma_shape_rate(self):
        for x in (0.1, 1.0, 4.0):
            ref = stats.gamma(2.0, scale=1 / 0.5).logpdf(x)
            assert GammaPrior(2.0, 0.5).logpdf(x) == pytest.approx(ref, rel=1e-12)
        assert GammaPrior(2.0, 2.0).mode == pytest.approx(0.5)

    def test_supports(self):
        assert BetaPrior(1.5, 15.0).logpdf(1.0) == -math.inf
        assert GammaPrior(2.0, 1.0).logpdf(0.0) == -math.inf

    def test_threshold_at_y_max_is_excluded(self):
        h = GPCRHyper(KernelHyper(0.1, 1.0), 1e-4, 0.7)
        assert hyperopt.log_prior(h, GPCR_PRIORS, y_max=0.7) == -math.inf
        assert math.isfinite(hyperopt.log_prior(h, GPCR_PRIORS, y_max=0.2))

    def test_scale_mode_maximizes_prior(self):
        p = PriorSpec(scale_prior=GammaPrior(2.0, 1.0))
        at_mode = hyperopt.log_prior(KernelHyper(0.1, 1.0), p)
        for s in (0.5, 0.9, 1.1, 3.0):
            assert hyperopt.log_prior(KernelHyper(0.1, s), p) < at_mode


class TestObjectiveMap:
    def test_empty_dataset_returns_modes(self):
        res = hyperopt.map_fit_objective(gp_regression.GPDataset.empty(2), PriorSpec())
        assert res.hyper.lengthscale[0] == pytest.approx(0.5 / 14.5)
        assert res.hyper.scale == pytest.approx(1.0)

    def test_recovers_generating_lengthscale(self):
        hits = 0
        for seed in range(10):
            r = np.random.default_rng(seed)
            X = r.random((40, 1))
            K = gram(X, KernelHyper(0.2, 1.0)) + 1e-4 * np.eye(40)
            y = np.linalg.cholesky(K) @ r.standard_normal(40)
            res = hyperopt.map_fit_objective(gp_regression.GPDataset(X, y), PriorSpec(),
                                             MapOptions(seed=seed))
            hits += 0.1 <= res.hyper.lengthscale[0] <= 0.4
        assert hits >= 8

    def test_permutation_invariance(self, rng):
        X, y = rng.random((12, 2)), rng.normal(size=12)
        perm = rng.permutation(12)
        a = hyperopt.map_fit_objective(gp_regression.GPDataset(X, y), PriorSpec())
        b = hyperopt.map_fit_objective(gp_regression.GPDataset(X[perm], y[perm]), PriorSpec())
        assert a.objective_value == pytest.approx(b.objective_value, abs=1e-6)
        np.testing.assert_allclose(a.hyper.lengthscale, b.hyper.lengthscale, rtol=1e-3)
        assert a.hyper.scale == pytest.approx(b.hyper.scale, rel=1e-3)

    def test_deterministic_given_seed(self, rng):
        ds = gp_regression.GPDataset(rng.random((8, 1)), rng.normal(size=8))
        a = hyperopt.map_fit_objective(ds, PriorSpec(), MapOptions(seed=3))
        b = hyperopt.map_fit_objective(ds, PriorSpec(), MapOptions(seed=3))
        assert a == b

    def test_ard_gives_one_lengthscale_per_dimension(self, rng):
        ds = gp_regression.GPDataset(rng.random((10, 3)), rng.normal(size=10))
        res = hyperopt.map_fit_objective(ds, PriorSpec(ard=True), MapOptions(restarts=2))
        assert res.hyper.lengthscale.shape == (3,)


def grid_best(ds, priors, n=50):
    """Exhaustive search of the log posterior over (lengthscale, scale, threshold offset)."""
    y_max = ds.y_max
    best = -math.inf
    for ls in np.linspace(0.005, 0.6, n):
        for scale in np.geomspace(0.05, 10.0, n):
            for off in np.geomspace(1e-3, 6.0, n):
                h = GPCRHyper(KernelHyper(ls, scale), priors.noise_variance, y_max + off)
                value, _, status = gpcr.fast_log_evidence(ds, h, gpcr.EPOptions())
                if status == 0:
                    best = max(best, value + hyperopt.log_prior(h, priors, y_max))
    return best


class TestGPCRMap:
    def test_threshold_stays_above_safe_values(self, rng):
        for _ in range(5):
            ds = HybridDataset(rng.random((4, 1)), rng.normal(size=4), rng.random((2, 1)))
            res = hyperopt.map_fit_gpcr(ds, GPCR_PRIORS, MapOptions(restarts=3))
            assert res.hyper.threshold > ds.y_max

    def test_uninformative_data_gives_prior_mode_offset(self):
        ds = HybridDataset([[0.1], [0.15], [0.2]], [-0.3, -0.25, -0.35], np.zeros((0, 1)))
        res = hyperopt.map_fit_gpcr(ds, GPCR_PRIORS)
        # without failures the likelihood is flat in c once it clears the safe values
        assert res.hyper.threshold - ds.y_max == pytest.approx(1.0, abs=0.1)

    def test_adjacent_failures_pull_threshold_towards_zero(self):
        Xs = np.array([[0.1], [0.2], [0.3], [0.4]])
        ys = np.array([-0.5, -0.45, -0.5, -0.4])
        Xu = np.array([[0.5], [0.6], [0.7]])
        ds = HybridDataset(Xs, ys, Xu)
        res = hyperopt.map_fit_gpcr(ds, GPCR_PRIORS)
        c = res.hyper.threshold
        assert ds.y_max < c < ds.y_max + 1.0
        assert abs(c) < abs(ds.y_max + 1.0)
        assert res.objective_value >= grid_best(ds, GPCR_PRIORS, n=25) - 1e-2

    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_dense_grid(self, seed):
        r = np.random.default_rng(seed)
        n = 6
        X = np.sort(r.random((n, 1)), axis=0)
        K = gram(X, KernelHyper(0.2, 1.0)) + 1e-8 * np.eye(n)
        g = np.linalg.cholesky(K) @ r.standard_normal(n)
        safe = g <= 0
        if safe.sum() == 0:
            safe[np.argmin(g)] = True
        y = g[safe] + 1e-2 * r.standard_normal(safe.sum())
        ds = HybridDataset(X[safe], y, X[~safe])
        res = hyperopt.map_fit_gpcr(ds, GPCR_PRIORS)
        assert res.objective_value >= grid_best(ds, GPCR_PRIORS) - 1e-2

    def test_deterministic_given_seed(self, rng):
        ds = HybridDataset(rng.random((3, 2)), rng.normal(size=3), rng.random((2, 2)))
        a = hyperopt.map_fit_gpcr(ds, GPCR_PRIORS, MapOptions(seed=5, restarts=3))
        b = hyperopt.map_fit_gpcr(ds, GPCR_PRIORS, MapOptions(seed=5, restarts=3))
        assert a == b

    def test_failures_only_use_configured_origin(self):
        ds = HybridDataset(np.zeros((0, 1)), np.zeros(0), [[0.3], [0.6]])
        res = hyperopt.map_fit_gpcr(ds, GPCR_PRIORS, MapOptions(restarts=3))
        assert res.hyper.threshold > 0.0

    def test_needs_threshold_prior(self):
        ds = HybridDataset([[0.3]], [0.0], np.zeros((0, 1)))
        with pytest.raises(ValueError):
            hyperopt.map_fit_gpcr(ds, PriorSpec())
