"""Brute-force Gaussian-kernel class posteriors and synthetic Gaussian mixtures.

This module is the reference the NED scorer is checked against. The kernel
posterior sums a Gaussian kernel over *every* support point, with class
priors estimated by class frequencies:

    P(c_j | z)  ~  sum_{i in c_j} N(z - z_i; 0, Sigma_j)

With ``Sigma_j = alpha * I`` shared by all classes this is exactly NED over
all ``N`` support points at ``T = 2 * alpha``. No index, no truncation; it is
``O(N * M)`` per query by design.

:class:`MixtureSpec` describes a Gaussian mixture whose Bayes posterior is
known in closed form, used to generate benchmarks with ground truth.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .embedding_store import EmbeddingError, LabelSpace, LabelSpaceError, SupportSet

__all__ = [
    "KernelMode",
    "KernelSpec",
    "MixtureSpec",
    "kde_posterior",
    "true_posterior",
    "generate_mixture",
    "load_mixture_spec",
]


class KernelMode(str, enum.Enum):
    SHARED_ALPHA = "shared-alpha"
    PER_CLASS_ALPHA = "per-class-alpha"
    FULL_COVARIANCE = "per-class-full-covariance"


def _cholesky(cov: np.ndarray, what: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise EmbeddingError(f"{what}: covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
        raise EmbeddingError(f"{what}: covariance is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise EmbeddingError(f"{what}: covariance is not positive definite") from None


@dataclass(frozen=True)
class KernelSpec:
    """Kernel bandwidths for :func:`kde_posterior`.

    ``alphas`` holds one value in shared-alpha mode and one per class in
    per-class-alpha mode. ``covariances`` holds one ``(m, m)`` matrix per
    class in full-covariance mode.
    """

    mode: KernelMode
    alphas: tuple = ()
    covariances: tuple = ()

    def __post_init__(self):
        mode = KernelMode(self.mode)
        object.__setattr__(self, "mode", mode)
        alphas = tuple(float(a) for a in np.atleast_1d(self.alphas)) if len(np.atleast_1d(self.alphas)) else ()
        object.__setattr__(self, "alphas", alphas)
        if mode is not KernelMode.FULL_COVARIANCE:
            if not alphas or any(not a > 0 for a in alphas):
                raise ValueError("alphas must be positive")
            if mode is KernelMode.SHARED_ALPHA and len(alphas) != 1:
                raise ValueError("shared-alpha mode takes exactly one alpha")
        else:
            covs = tuple(np.array(c, dtype=np.float64) for c in self.covariances)
            if not covs:
                raise ValueError("full-covariance mode needs one covariance per class")
            factors = tuple(_cholesky(c, f"class {j}") for j, c in enumerate(covs))
            object.__setattr__(self, "covariances", covs)
            object.__setattr__(self, "_factors", factors)

    @classmethod
    def shared(cls, alpha: float) -> "KernelSpec":
        return cls(KernelMode.SHARED_ALPHA, (alpha,))

    @classmethod
    def from_temperature(cls, T: float) -> "KernelSpec":
        return cls.shared(T / 2.0)

    @classmethod
    def per_class(cls, alphas: Sequence[float]) -> "KernelSpec":
        return cls(KernelMode.PER_CLASS_ALPHA, tuple(alphas))

    @classmethod
    def full(cls, covariances) -> "KernelSpec":
        return cls(KernelMode.FULL_COVARIANCE, (), tuple(covariances))


def _sq_dists(z: np.ndarray, points: np.ndarray) -> np.ndarray:
    diff = points - z
    return np.sum(diff * diff, axis=1)


def _log_kernels(support: SupportSet, z: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Log kernel value of each support point at ``z`` under its class kernel.

    The ``(2 pi)^(m/2)`` factor is common to all classes and omitted.
    """
    m = support.dim
    labels = support.labels
    if spec.mode is KernelMode.SHARED_ALPHA:
        return -_sq_dists(z, support.vectors) / (2.0 * spec.alphas[0])
    if spec.mode is KernelMode.PER_CLASS_ALPHA:
        if len(spec.alphas) != support.n_classes:
            raise ValueError(f"{len(spec.alphas)} alphas for {support.n_classes} classes")
        a = np.asarray(spec.alphas)[labels]
        return -_sq_dists(z, support.vectors) / (2.0 * a) - 0.5 * m * np.log(a)
    factors = spec._factors
    if len(factors) != support.n_classes:
        raise ValueError(f"{len(factors)} covariances for {support.n_classes} classes")
    out = np.empty(len(support))
    for j, L in enumerate(factors):
        if L.shape[0] != m:
            raise ValueError(f"class {j}: covariance dimension {L.shape[0]} != {m}")
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            continue
        # solve L y = (z - z_i) for all members at once; quad = |y|^2
        y = np.linalg.solve(L, (z - support.vectors[members]).T)
        quad = np.sum(y * y, axis=0)
        half_logdet = np.sum(np.log(np.diag(L)))
        out[members] = -0.5 * quad - half_logdet
    return out


def kde_posterior(support: SupportSet, z, spec: KernelSpec) -> np.ndarray:
    """Kernel-smoothed class posterior at ``z`` over the whole support set.

    Accumulated in log space and normalized with log-sum-exp, so every
    class with at least one support point gets a strictly positive value.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (support.dim,):
        raise EmbeddingError(f"query dimension {z.shape} != ({support.dim},)")
    logk = _log_kernels(support, z, spec)
    per_class = np.full(support.n_classes, -np.inf)
    for j in range(support.n_classes):
        sel = logk[support.labels == j]
        if sel.size:
            per_class[j] = logsumexp(sel)
    return np.exp(per_class - logsumexp(per_class))


# ------------------------------------------------------------ mixtures


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian class-conditional densities with class priors.

    Parameters
    ----------
    means : array_like, shape (M, m)
    covariances : array_like, shape (M, m, m)
    priors : array_like, shape (M,)
        Positive, summing to one.
    seed : int
        Base seed for data generated from this spec.
    name : str
    """

    means: np.ndarray
    covariances: np.ndarray
    priors: np.ndarray
    seed: int = 0
    name: str = "mixture"

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64)
        covs = np.array(self.covariances, dtype=np.float64)
        priors = np.array(self.priors, dtype=np.float64)
        if means.ndim != 2:
            raise ValueError("means must be (M, m)")
        M, m = means.shape
        if covs.shape != (M, m, m):
            raise ValueError(f"covariances must be ({M}, {m}, {m}), got {covs.shape}")
        if priors.shape != (M,) or (priors <= 0).any() or not math.isclose(priors.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("priors must be positive and sum to 1")
        factors = tuple(_cholesky(c, f"class {j}") for j, c in enumerate(covs))
        for a in (means, covs, priors):
            a.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "_factors", factors)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def label_names(self) -> tuple[str, ...]:
        width = len(str(self.n_classes - 1))
        return tuple(f"c{str(j).zfill(width)}" for j in range(self.n_classes))

    def counts_for(self, n_total: int) -> np.ndarray:
        """Per-class sizes proportional to the priors (largest remainder)."""
        raw = self.priors * n_total
        counts = np.floor(raw).astype(np.int64)
        rest = n_total - counts.sum()
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:rest]] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "priors": self.priors.tolist(),
        }


def load_mixture_spec(path) -> MixtureSpec:
    """Read a :class:`MixtureSpec` from JSON.

    Keys: ``means``, ``covariances``, ``priors``, ``seed`` and optional
    ``name``. A covariance may be given as a scalar (isotropic) or a list of
    per-axis variances instead of a full matrix.
    """
    doc = json.loads(Path(path).read_text())
    means = np.asarray(doc["means"], dtype=np.float64)
    M, m = means.shape
    covs = []
    for c in doc["covariances"]:
        c = np.asarray(c, dtype=np.float64)
        if c.ndim == 0:
            c = float(c) * np.eye(m)
        elif c.ndim == 1:
            c = np.diag(c)
        covs.append(c)
    return MixtureSpec(means, np.array(covs), doc["priors"], int(doc.get("seed", 0)),
                       doc.get("name", Path(path).stem))


def true_posterior(spec: MixtureSpec, z) -> np.ndarray:
    """Bayes posterior ``p(c_j) N(z; mu_j, Sigma_j)``, normalized, in log space.

    ``z`` may be a single point ``(m,)`` or a batch ``(Q, m)``.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    logp = np.empty((Z.shape[0], spec.n_classes))
    for j, L in enumerate(spec._factors):
        y = np.linalg.solve(L, (Z - spec.means[j]).T)
        logp[:, j] = (np.log(spec.priors[j]) - 0.5 * np.sum(y * y, axis=0)
                      - np.sum(np.log(np.diag(L))))
    post = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    return post[0] if single else post


def _sample(spec: MixtureSpec, counts, rng) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for j, n in enumerate(counts):
        eps = rng.standard_normal((int(n), spec.dim))
        xs.append(spec.means[j] + eps @ spec._factors[j].T)
        ys.append(np.full(int(n), j, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def generate_mixture(spec: MixtureSpec, n_per_class, seed: int | None = None,
                     id_prefix: str = "s") -> SupportSet:
    """Sample a labeled set from ``spec``.

    Parameters
    ----------
    n_per_class : int or sequence of int
        Records per class. A single int gives a balanced set.
    seed : int, optional
        Defaults to ``spec.seed``.

    Records are grouped by class in label order. A class with zero records
    fails support-set validation.
    """
    counts = np.broadcast_to(np.asarray(n_per_class, dtype=np.int64), (spec.n_classes,))
    if (counts == 0).any():
        j = int(np.argmin(counts))
        raise LabelSpaceError(f"class {spec.label_names[j]!r} has no records in the support set")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    x, y = _sample(spec, counts, rng)
    ids = tuple(f"{id_prefix}{i:06d}" for i in range(len(y)))
    return SupportSet(ids, x, y, LabelSpace(spec.label_names), spec.dim)
