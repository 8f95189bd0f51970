# %% [markdown]
# # EIC² against failure penalties on Egg crate
#
# A short version of the benchmark comparison: every method gets the same
# safe random start per repetition, and failures either feed the GPCR
# constraint model (EIC²) or are replaced by a cost before plain EI runs.
# Increase ``REPS`` and ``ITERS`` for a meaningful comparison; the CLI does
# the same thing with ``crashbo run`` and ``crashbo compare``.

# %%
from crashbo import harness
from crashbo.config import ExperimentConfig

REPS, ITERS = 2, 20
summaries = {}
for method in ("eic2", "hc", "mc", "ac"):
    cfg = ExperimentConfig(benchmark="eggcrate2", method=method, iterations=ITERS,
                           repetitions=REPS, seed=0)
    traces = harness.run_experiment(cfg)
    summaries[method] = harness.aggregate(traces)[method]
    print(method, "failures per run:", [t.n_failures for t in traces])

# %%
print("method  mean regret   mean c_hat")
for method, s in summaries.items():
    c = s["c_hat"]["mean"] if s["c_hat"] else float("nan")
    print(f"{method:6s}  {s['final_regret']['mean']:10.3f}   {c:8.4f}")
