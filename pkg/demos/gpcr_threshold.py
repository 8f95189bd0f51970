# %% [markdown]
# # Learning a crash threshold in one dimension
#
# A constraint ``g(x) = sin(2 pi x)`` is observed only where it is safe
# (``g <= 0``, i.e. ``x`` in ``[0.5, 1]``).  Points in ``(0, 0.5)`` crash and
# return nothing but a label.  We fit GPCR with a MAP threshold and look at
# the posterior and the success probability.

# %%
import numpy as np

from crashbo import gpcr, hyperopt
from crashbo.hyperopt import GammaPrior, MapOptions, PriorSpec

rng = np.random.default_rng(3)
X = np.sort(rng.random(12))[:, None]
g = np.sin(2 * np.pi * X[:, 0])
safe = g <= 0
data = gpcr.HybridDataset(X[safe], g[safe] + 0.01 * rng.standard_normal(safe.sum()), X[~safe])
print(f"{data.n_safe} safe points, {data.n_fail} failures, largest safe value {data.y_max:.3f}")

# %% [markdown]
# The threshold prior is a Gamma on the offset above the largest safe value, so
# every candidate ``c`` explains all the safe observations.

# %%
priors = PriorSpec(threshold_prior=GammaPrior(2.0, 1.0), noise_variance=1e-4)
fit = hyperopt.map_fit_gpcr(data, priors, MapOptions(seed=0))
h = fit.hyper
print(f"lengthscale {h.kernel.lengthscale[0]:.3f}  scale {h.kernel.scale:.3f}  c_hat {h.threshold:.4f}")

# %%
model = gpcr.fit(data, h)
grid = np.linspace(0, 1, 11)[:, None]
mean, var = model.predict_many(grid)
p = model.prob_success_many(grid)
print(" x     mean    sd      P(safe)  true g")
for x, m, v, q in zip(grid[:, 0], mean, var, p):
    print(f"{x:4.1f}  {m:7.3f} {np.sqrt(v):6.3f}  {q:6.3f}  {np.sin(2 * np.pi * x):7.3f}")

# %% [markdown]
# Failures push the posterior mean above ``c_hat`` between 0 and 0.5, and the
# success probability drops there even though no value was ever measured.
