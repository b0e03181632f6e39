"""Checked-in synthetic benchmarks with known Bayes posteriors.

Each benchmark is a :class:`~nedcal.kde_oracle.MixtureSpec` stored as JSON
under ``nedcal/data/benchmarks``. Class means and most of each class's
variance live in a shared low-dimensional subspace, with a small isotropic
floor in the remaining coordinates. Metric-learning embeddings look like
this: high ambient dimension, tight classes, low intrinsic dimension.

``separable``
    20 classes, well apart (Bayes accuracy about 0.98).
``overlapping``
    20 classes with neighboring classes overlapping (Bayes accuracy about 0.93).
``imbalanced``
    Same geometry family as ``overlapping`` with priors decaying as ``0.85**j``.

Support and query sets are drawn with ``spec.seed`` and ``spec.seed + 1``.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .kde_oracle import MixtureSpec, generate_mixture, load_mixture_spec

__all__ = ["BENCHMARKS", "subspace_mixture", "benchmark_spec", "load_benchmark", "write_spec"]

BENCHMARKS = ("separable", "overlapping", "imbalanced")

_RECIPES = {
    "separable": dict(separation=20.0),
    "overlapping": dict(separation=10.0),
    "imbalanced": dict(separation=10.0, prior_decay=0.85),
}


def subspace_mixture(n_classes: int = 20, dim: int = 16, rank: int = 3, separation: float = 10.0,
                     noise_var: float = 0.01, var_range=(0.3, 1.0), prior_decay: float | None = None,
                     construction_seed: int = 30, seed: int = 1, name: str = "mixture") -> MixtureSpec:
    """Gaussian classes concentrated in a shared ``rank``-dimensional subspace.

    Means are Gaussian in the subspace with expected pairwise distance about
    ``separation``. Each class covariance is a random rotation of variances
    drawn from ``var_range`` inside the subspace, plus ``noise_var * I``.
    """
    rng = np.random.default_rng(construction_seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, rank)))
    means = (rng.standard_normal((n_classes, rank)) * separation / np.sqrt(2 * rank)) @ basis.T
    covs = []
    for _ in range(n_classes):
        rot, _ = np.linalg.qr(rng.standard_normal((rank, rank)))
        var = rng.uniform(*var_range, rank)
        c = basis @ ((rot * var) @ rot.T) @ basis.T + noise_var * np.eye(dim)
        covs.append((c + c.T) / 2)
    if prior_decay is None:
        priors = np.full(n_classes, 1.0 / n_classes)
    else:
        w = prior_decay ** np.arange(n_classes)
        priors = w / w.sum()
    return MixtureSpec(means, np.array(covs), priors, seed, name)


def write_spec(spec: MixtureSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1) + "\n")


def _data_dir():
    return resources.files("nedcal") / "data" / "benchmarks"


def benchmark_spec(name: str) -> MixtureSpec:
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {BENCHMARKS}")
    with resources.as_file(_data_dir() / f"{name}.json") as p:
        return load_mixture_spec(p)


def load_benchmark(name: str, n_support: int = 2000, n_query: int = 2000):
    """Return ``(spec, support, queries)`` for a checked-in benchmark.

    Class sizes follow the priors (largest-remainder rounding).
    """
    spec = benchmark_spec(name)
    support = generate_mixture(spec, spec.counts_for(n_support), seed=spec.seed, id_prefix="s")
    queries = generate_mixture(spec, spec.counts_for(n_query), seed=spec.seed + 1, id_prefix="q")
    return spec, support, queries


def _rebuild(out_dir) -> None:
    for name, recipe in _RECIPES.items():
        write_spec(subspace_mixture(name=name, **recipe), Path(out_dir) / f"{name}.json")


if __name__ == "__main__":
    import sys

    _rebuild(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "data" / "benchmarks")
