"""
NED as a kernel density posterior
=================================

With every support point as a neighbor, NED is exactly the class
posterior of a Gaussian kernel density estimate with bandwidth
``alpha = T / 2``. As the support set grows, that estimate approaches the
true posterior of the data. This demo checks both facts on a mixture whose
posterior is known in closed form.

Run::

    python3 demos/plot_kernel_density_link.py
"""

import numpy as np

from nedcal import (
    Index,
    KernelSpec,
    TuneConfig,
    class_scores_batch,
    generate_mixture,
    kde_posterior,
    true_posterior,
    tune_temperature,
)
from nedcal.benchmarks import benchmark_spec

spec = benchmark_spec("overlapping")
test = generate_mixture(spec, spec.counts_for(200), seed=99).vectors
bayes = true_posterior(spec, test)

# %%
# Identity: NED over all N points equals the shared-bandwidth KDE.
s = generate_mixture(spec, 10)
T = 0.5
idx, dist = Index(s).query_batch(test, len(s))
ned = class_scores_batch("ned", dist, s.labels[idx], s.n_classes, T)
kde = np.array([kde_posterior(s, z, KernelSpec.from_temperature(T)) for z in test])
print(f"max |NED - KDE| = {np.abs(ned - kde).max():.2e}")

# %%
# Consistency: the distance to the Bayes posterior shrinks with N when T
# is retuned at each size.
for n in (10, 40, 160):
    s = generate_mixture(spec, n, seed=spec.seed + n)
    t = tune_temperature(s, TuneConfig(k=len(s) - 1, max_scored=800)).t_star
    idx, dist = Index(s).query_batch(test, len(s))
    p = class_scores_batch("ned", dist, s.labels[idx], s.n_classes, t)
    err = np.abs(p - bayes).sum(axis=1).mean() / 2
    print(f"{n:4d} per class  T* = {t:.3f}  mean half-L1 to Bayes = {err:.4f}")
