"""End-to-end acceptance checks, one test per criterion.

The heavy comparison runs (criteria 5 to 7) go through the CLI and are cached
under ``runs/acceptance`` together with a digest of the package sources; any
source change, or ``CRASHBO_ACCEPTANCE_REFRESH=1``, triggers a fresh run.
Set ``CRASHBO_WORKERS`` to spread repetitions over processes.
"""

import hashlib
import json
import math
import os
import shutil
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from crashbo import cli, gp_regression, gpcr
from crashbo.acquisition import expected_improvement_array
from crashbo.benchmarks import sin_constraint
from crashbo.core_math import KernelHyper, gram
from crashbo.hyperopt import BetaPrior, GammaPrior

SEED = 20261014
CACHE = Path(__file__).resolve().parents[1] / "runs" / "acceptance"
REFRESH_ENV = "CRASHBO_ACCEPTANCE_REFRESH"
METHODS = ("eic2", "hc", "mc", "ac")
ITERATIONS, REPETITIONS, MASTER_SEED = 100, 20, 0


def detail(record_property, text):
    record_property("detail", text)


# -- criterion 1 -------------------------------------------------------------

@pytest.mark.criterion(1, "GPCR without failures reduces to GP regression")
def test_gpcr_reduces_to_gp(record_property):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(50):
        dim = int(rng.integers(1, 3))
        n = int(rng.integers(1, 15))
        X = rng.random((n, dim))
        k = KernelHyper(rng.uniform(0.05, 0.5), rng.uniform(0.2, 3.0))
        noise = 10.0 ** rng.uniform(-4, -1)
        y = np.linalg.cholesky(gram(X, k) + noise * np.eye(n)) @ rng.standard_normal(n)
        c = y.max() + 10.0 * math.sqrt(k.scale)
        model = gpcr.fit(gpcr.HybridDataset(X, y, np.zeros((0, dim))), gpcr.GPCRHyper(k, noise, c))
        gp = gp_regression.fit(gp_regression.GPDataset(X, y), k, noise)
        if dim == 1:
            grid = np.linspace(0, 1, 100)[:, None]
        else:
            g = np.linspace(0, 1, 10)
            grid = np.column_stack([a.ravel() for a in np.meshgrid(g, g)])
        for a, b in zip(model.predict_many(grid), gp.predict_many(grid)):
            worst = max(worst, float(np.max(np.abs(a - b))))
    detail(record_property, f"max |difference| {worst:.2e} over 50 datasets")
    assert worst <= 1e-4


# -- criterion 2 -------------------------------------------------------------

def random_hybrid_problem(rng):
    """Hyperparameters from the default priors, labels from a GP draw thresholded at 0."""
    dim = int(rng.integers(1, 3))
    n = int(rng.integers(1, 7))
    X = rng.random((n, dim))
    k = KernelHyper(float(BetaPrior(1.5, 15.0).sample(rng)), float(GammaPrior(2.0, 1.0).sample(rng)))
    noise = 1e-4
    g = np.linalg.cholesky(gram(X, k) + 1e-10 * np.eye(n)) @ rng.standard_normal(n)
    safe = g <= 0.0
    y = g[safe] + math.sqrt(noise) * rng.standard_normal(int(safe.sum()))
    c = max(0.0, float(y.max()) + 0.01) if safe.any() else 0.0
    return gpcr.HybridDataset(X[safe], y, X[~safe]), gpcr.GPCRHyper(k, noise, c)


def restricted_samples(ds, hyper, rng, n_accept=100_000, batch=100_000):
    """Exact draws from the Gaussian product restricted to the labelled half-lines."""
    m, S, _ = gpcr.gaussian_product(ds, hyper)
    L = np.linalg.cholesky(S + 1e-12 * np.eye(len(m)))
    ns = ds.n_safe
    kept, total = [], 0
    while total < n_accept:
        G = m + rng.standard_normal((batch, len(m))) @ L.T
        ok = np.all(G[:, :ns] <= hyper.threshold, axis=1) & np.all(G[:, ns:] >= hyper.threshold,
                                                                     axis=1)
        kept.append(G[ok])
        total += int(ok.sum())
    return np.vstack(kept)


@pytest.mark.criterion(2, "EP marginals agree with rejection sampling within 3 SE")
def test_ep_against_rejection_sampling(record_property):
    rng = np.random.default_rng(SEED)
    scores = []
    for _ in range(30):
        ds, hyper = random_hybrid_problem(rng)
        state = gpcr.ep_fit(ds, hyper)
        G = restricted_samples(ds, hyper, rng)
        n = len(G)
        mean, var = G.mean(axis=0), G.var(axis=0)
        se_mean = G.std(axis=0) / math.sqrt(n)
        se_var = ((G - mean) ** 2).std(axis=0) / math.sqrt(n)
        z_mean = np.abs(state.posterior_mean - mean) / se_mean
        z_var = np.abs(np.diag(state.posterior_cov) - var) / se_var
        scores.append(float(max(z_mean.max(), z_var.max())))
    bad = [(i, round(s, 1)) for i, s in enumerate(scores) if s > 3.0]
    detail(record_property, f"{30 - len(bad)}/30 within 3 SE; outside (index, SE): {bad}")
    assert not bad


# -- criterion 3 -------------------------------------------------------------

@pytest.mark.criterion(3, "success probability matches thresholded-Gaussian Monte Carlo")
def test_prob_success_monte_carlo(record_property):
    rng = np.random.default_rng(SEED)
    Xs = rng.random((6, 2))
    Xu = rng.random((4, 2))
    ds = gpcr.HybridDataset(Xs, -np.abs(rng.normal(size=6)), Xu)
    model = gpcr.fit(ds, gpcr.GPCRHyper(KernelHyper(0.3, 1.0), 1e-4, 0.05))
    Q = rng.random((100, 2))
    mean, var = model.predict_many(Q)
    p = model.prob_success_many(Q)
    n = 200_000
    worst = 0.0
    for i in range(100):
        draws = mean[i] + math.sqrt(var[i]) * rng.standard_normal(n)
        p_hat = np.mean(draws <= model.threshold)
        se = math.sqrt(max(p[i] * (1 - p[i]), 1e-300) / n)
        worst = max(worst, abs(p_hat - p[i]) / se)
    detail(record_property, f"largest deviation {worst:.2f} SE over 100 points")
    assert worst <= 3.0


# -- criterion 4 -------------------------------------------------------------

@pytest.mark.criterion(4, "EI matches Monte Carlo within 3 SE")
def test_ei_monte_carlo(record_property):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(100):
        mu, sd = rng.normal(), rng.uniform(0.05, 3.0)
        eta = mu + sd * rng.uniform(-3.0, 3.0)
        s = np.maximum(eta - (mu + sd * rng.standard_normal(1_000_000)), 0.0)
        se = s.std() / math.sqrt(s.size)
        worst = max(worst, abs(float(expected_improvement_array(mu, sd * sd, eta)) - s.mean()) / se)
    detail(record_property, f"largest deviation {worst:.2f} SE over 100 triples")
    assert worst <= 3.0


# -- criteria 5 to 7: Egg crate comparison -----------------------------------

def source_digest() -> str:
    h = hashlib.sha256()
    pkg = resources.files("crashbo")
    for name in sorted(p.name for p in pkg.iterdir() if p.name.endswith((".py", ".json"))):
        h.update(name.encode())
        h.update(pkg.joinpath(name).read_bytes())
    return h.hexdigest()


def run_dir(method):
    return CACHE / f"eggcrate2-{method}-seed{MASTER_SEED}-M{ITERATIONS}-R{REPETITIONS}"


@pytest.fixture(scope="module")
def comparison():
    stamp = CACHE / "source_digest.txt"
    digest = source_digest()
    fresh = stamp.exists() and stamp.read_text().strip() == digest
    if not fresh or os.environ.get(REFRESH_ENV):
        shutil.rmtree(CACHE, ignore_errors=True)
        CACHE.mkdir(parents=True)
        for method in METHODS:
            code = cli.main(["run", "--benchmark", "eggcrate2", "--method", method,
                             "--iters", str(ITERATIONS), "--reps", str(REPETITIONS),
                             "--seed", str(MASTER_SEED), "--out", str(CACHE)])
            assert code in (0, 1)
        stamp.write_text(digest + "\n")
    out = {}
    for method in METHODS:
        d = run_dir(method)
        summary = json.loads((d / "summary.json").read_text())
        traces = [cli.read_trace_csv(d / run["trace"]) for run in summary["runs"]]
        out[method] = (summary, traces)
    return out


@pytest.mark.slow
@pytest.mark.criterion(5, "mean final threshold estimate in (0, 0.5] and above y_max")
def test_threshold_recovery(comparison, record_property):
    summary, traces = comparison["eic2"]
    c_hats = [run["c_hat"] for run in summary["runs"]]
    below = []
    for r, rows in enumerate(traces):
        y_safe = [row["y_g"] for row in rows if row["label"] == 1]
        if not c_hats[r] > max(y_safe):
            below.append(r)
    mean_c = math.fsum(c_hats) / len(c_hats)
    detail(record_property, f"mean c_hat {mean_c:.4f}; runs with c_hat <= y_max: {below}")
    assert len(c_hats) == REPETITIONS
    assert 0.0 < mean_c <= 0.5
    assert not below


@pytest.mark.slow
@pytest.mark.criterion(6, "EIC2 mean final regret below each penalty baseline")
def test_method_comparison(comparison, record_property):
    means = {m: comparison[m][0]["aggregate"]["final_regret"]["mean"] for m in METHODS}
    detail(record_property, ", ".join(f"{m} {v:.3f}" for m, v in means.items()))
    for m in METHODS:
        assert comparison[m][0]["aggregate"]["n_runs"] == REPETITIONS
    assert all(means["eic2"] < means[b] for b in ("hc", "mc", "ac"))


@pytest.mark.slow
@pytest.mark.criterion(7, "structural invariants hold over every comparison trace")
def test_structural_invariants(comparison, record_property):
    n_traces = 0
    for method, (summary, traces) in comparison.items():
        for rows in traces:
            n_traces += 1
            assert len(rows) == ITERATIONS
            x1 = np.array([rows[0][f"x_{d + 1}"] for d in range(2)])
            assert sin_constraint(x1) <= 0.0
            best = math.inf
            prev_eta = None
            y_max = -math.inf
            for row in rows:
                if row["label"] == 1:
                    assert row["y_f"] is not None and row["y_g"] is not None
                    best = min(best, row["y_f"])
                    y_max = max(y_max, row["y_g"])
                else:
                    assert row["label"] == 0
                    assert row["y_f"] is None and row["y_g"] is None
                # the reference value is the minimum over exactly the successful points
                eta = row["eta_cons"]
                assert eta == (best if math.isfinite(best) else None)
                if prev_eta is not None:
                    assert eta <= prev_eta
                prev_eta = eta
                if method == "eic2":
                    assert row["c_hat"] > y_max
                else:
                    assert row["c_hat"] is None
    detail(record_property, f"{n_traces} traces checked")


# -- criterion 8 -------------------------------------------------------------

@pytest.mark.criterion(8, "repeated CLI runs give byte-identical trace CSVs")
def test_cli_determinism(tmp_path, record_property):
    cfg = tmp_path / "fast.json"
    cfg.write_text(json.dumps({"acquisition": {"probes_per_dim": 500}}))
    files = 0
    for method in METHODS:
        args = ["run", "--benchmark", "eggcrate2", "--method", method, "--iters", "6",
                "--reps", "2", "--seed", "11", "--config", str(cfg)]
        for out in ("a", "b"):
            assert cli.main(args + ["--out", str(tmp_path / out)]) == 0
        name = f"eggcrate2-{method}-seed11-M6-R2"
        for rep in ("000", "001"):
            a = (tmp_path / "a" / name / f"trace_rep{rep}.csv").read_bytes()
            b = (tmp_path / "b" / name / f"trace_rep{rep}.csv").read_bytes()
            assert a == b
            files += 1
    detail(record_property, f"{files} trace pairs identical")
