"""
Choosing the temperature
========================

NED weights each neighbor by ``exp(-(d - d_min) / T)``. A tiny ``T``
reduces it to the nearest neighbor's label with confidence 1; a huge ``T``
reduces it to plain vote fractions. Between the two lies a value that
makes the scores honest probabilities on the support set.

Run::

    python3 demos/plot_temperature_curve.py
"""

import numpy as np

from nedcal import Index, TuneConfig, class_scores_batch, load_benchmark, tune_temperature

_, support, queries = load_benchmark("imbalanced", n_support=1000, n_query=500)

# %%
# The tuner scans a log-spaced grid and then refines the best cell with a
# golden-section search. Its curve is the leave-one-out NLL.
res = tune_temperature(support, TuneConfig(k=64))
for T, nll in res.nll_curve[::4]:
    marker = "  <- near T*" if abs(np.log(T / res.t_star)) < 2 * res.grid_step else ""
    print(f"T = {T:10.4g}   NLL = {nll:.4f}{marker}")
print(f"refined T* = {res.t_star:.4g}, NLL {res.nll_at_t_star:.4f}, interior: {res.interior}")

# %%
# The two limits, checked on the query set.
idx, dist = Index(support).query_batch(queries.vectors, 64)
labels = support.labels[idx]
dbar = dist.mean()
tiny = class_scores_batch("ned", dist, labels, support.n_classes, 1e-6 * dbar)
huge = class_scores_batch("ned", dist, labels, support.n_classes, 1e6 * dbar)
votes = class_scores_batch("knn", dist, labels, support.n_classes)
print("tiny T picks the nearest label:", bool((tiny.argmax(1) == labels[:, 0]).all()))
print("huge T matches vote fractions to", f"{np.abs(huge - votes).max():.1e}")
