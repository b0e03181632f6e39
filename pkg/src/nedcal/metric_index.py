"""Exact k-nearest-neighbor retrieval over a support set.

The exhaustive scan is the reference backend. The ``"kdtree"`` backend uses
a k-d tree only to generate candidates; every candidate distance is then
recomputed with the exhaustive-scan formula and ranked with the same
tie-break, so both backends return identical neighbor lists.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .embedding_store import EmbeddingError, EmbeddingSet

__all__ = [
    "DistanceMetric",
    "NeighborList",
    "Index",
    "build_index",
    "query_knn",
    "pairwise_distances",
    "separation_diagnostic",
]

# memory budget for one block of the query-by-support distance matrix
_BLOCK_BYTES = 32 * 2**20


class DistanceMetric(str, enum.Enum):
    SQEUCLIDEAN = "sqeuclidean"
    COSINE = "cosine"

    @classmethod
    def parse(cls, value) -> "DistanceMetric":
        if isinstance(value, cls):
            return value
        aliases = {
            "sqeuclidean": cls.SQEUCLIDEAN,
            "squared-euclidean": cls.SQEUCLIDEAN,
            "cosine": cls.COSINE,
            "cosine-distance": cls.COSINE,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown metric {value!r}") from None


@dataclass(frozen=True)
class NeighborList:
    """Neighbors of one query, nearest first.

    ``distances`` are in the units of the index metric: squared Euclidean
    distance or cosine distance.
    """

    indices: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return zip(self.indices.tolist(), self.distances.tolist())


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def pairwise_distances(queries: np.ndarray, points: np.ndarray, metric=DistanceMetric.SQEUCLIDEAN):
    """Dense ``(Q, N)`` distance matrix, computed row by row from differences.

    Squared Euclidean distances are summed from explicit differences rather
    than expanded through inner products, which would lose relative accuracy
    for near-duplicate points.
    """
    metric = DistanceMetric.parse(metric)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    points = np.asarray(points, dtype=np.float64)
    q, n = queries.shape[0], points.shape[0]
    out = np.empty((q, n))
    if metric is DistanceMetric.COSINE:
        qn = _unit_rows(queries)
        pn = _unit_rows(points)
        for i in range(q):
            out[i] = 1.0 - np.sum(pn * qn[i], axis=1)
        np.clip(out, 0.0, 2.0, out=out)
        return out
    for i in range(q):
        diff = points - queries[i]
        out[i] = np.sum(diff * diff, axis=1)
    return out


def _select_k(dist: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k smallest entries per row; equal distances resolved by lower index."""
    n = dist.shape[1]
    k = min(k, n)
    if k < n:
        part = np.argpartition(dist, k - 1, axis=1)[:, :k]
        kth = np.take_along_axis(dist, part, axis=1).max(axis=1, keepdims=True)
        # argpartition picks ties at the boundary arbitrarily; rebuild the
        # candidate set from every entry not farther than the k-th distance.
        rows = []
        for r in range(dist.shape[0]):
            cand = np.flatnonzero(dist[r] <= kth[r, 0])
            order = np.lexsort((cand, dist[r, cand]))[:k]
            rows.append(cand[order])
        idx = np.array(rows, dtype=np.int64).reshape(dist.shape[0], k)
    else:
        idx = np.lexsort((np.broadcast_to(np.arange(n), dist.shape), dist), axis=1)
    return idx, np.take_along_axis(dist, idx, axis=1)


class Index:
    """Immutable exact k-NN index.

    Parameters
    ----------
    support : EmbeddingSet
    metric : DistanceMetric or str
    backend : {"exhaustive", "kdtree"}
    """

    def __init__(self, support: EmbeddingSet, metric=DistanceMetric.SQEUCLIDEAN,
                 backend: str = "exhaustive"):
        self.metric = DistanceMetric.parse(metric)
        if len(support) == 0:
            raise EmbeddingError("cannot index an empty set")
        pts = support.vectors
        if self.metric is DistanceMetric.COSINE:
            zero = np.linalg.norm(pts, axis=1) == 0
            if zero.any():
                raise EmbeddingError(
                    f"record {support.ids[int(np.argmax(zero))]!r}: zero vector under cosine distance"
                )
        if backend not in ("exhaustive", "kdtree"):
            raise ValueError(f"unknown backend {backend!r}")
        self.support = support
        self.backend = backend
        self._tree = None
        if backend == "kdtree":
            from scipy.spatial import cKDTree

            self._tree = cKDTree(_unit_rows(pts) if self.metric is DistanceMetric.COSINE else pts)

    def __len__(self) -> int:
        return len(self.support)

    @property
    def dim(self) -> int:
        return self.support.dim

    def _check(self, queries) -> np.ndarray:
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim == 1:
            q = q[None, :]
        if q.ndim != 2 or q.shape[1] != self.dim:
            raise EmbeddingError(f"query dimension {q.shape[-1]} != index dimension {self.dim}")
        if self.metric is DistanceMetric.COSINE:
            zero = np.linalg.norm(q, axis=1) == 0
            if zero.any():
                raise EmbeddingError(f"query {int(np.argmax(zero))}: zero vector under cosine distance")
        return q

    def distances(self, queries) -> np.ndarray:
        """Exhaustive distance matrix from each query to every support point."""
        return pairwise_distances(self._check(queries), self.support.vectors, self.metric)

    def query(self, z, k: int) -> NeighborList:
        idx, dist = self.query_batch(np.asarray(z)[None, :] if np.ndim(z) == 1 else z, k)
        return NeighborList(idx[0], dist[0])

    def query_batch(self, queries, k: int, exclude=None) -> tuple[np.ndarray, np.ndarray]:
        """Neighbor indices and distances for many queries.

        Parameters
        ----------
        queries : array_like, shape (Q, m)
        k : int
            Clipped to the number of eligible support points.
        exclude : array_like of int, shape (Q,), optional
            Support index to leave out for each query (leave-one-out).

        Returns
        -------
        indices, distances : ndarray, shape (Q, k')
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        q = self._check(queries)
        n = len(self.support)
        k = min(k, n - (exclude is not None))
        if exclude is not None:
            exclude = np.asarray(exclude, dtype=np.int64).reshape(-1)
            if exclude.shape[0] != q.shape[0]:
                raise ValueError("exclude must have one entry per query")
        if self._tree is not None:
            return self._query_tree(q, k, exclude)
        block = max(1, _BLOCK_BYTES // (8 * n))
        out_i = np.empty((q.shape[0], k), dtype=np.int64)
        out_d = np.empty((q.shape[0], k))
        for s in range(0, q.shape[0], block):
            d = pairwise_distances(q[s:s + block], self.support.vectors, self.metric)
            if exclude is not None:
                d[np.arange(d.shape[0]), exclude[s:s + block]] = np.inf
            out_i[s:s + block], out_d[s:s + block] = _select_k(d, k)
        return out_i, out_d

    def _query_tree(self, q, k, exclude):
        pts = self.support.vectors
        cosine = self.metric is DistanceMetric.COSINE
        tq = _unit_rows(q) if cosine else q
        extra = 0 if exclude is None else 1
        kk = min(k + extra, len(pts))
        d_tree, _ = self._tree.query(tq, k=kk)
        d_tree = np.asarray(d_tree).reshape(len(q), kk)
        out_i = np.empty((len(q), k), dtype=np.int64)
        out_d = np.empty((len(q), k))
        for r in range(len(q)):
            # cosine distances carry absolute rounding error near zero
            radius = d_tree[r, -1] * (1 + 1e-9) + (1e-7 if cosine else 1e-12)
            cand = np.asarray(self._tree.query_ball_point(tq[r], radius), dtype=np.int64)
            if exclude is not None:
                cand = cand[cand != exclude[r]]
            d = pairwise_distances(q[r:r + 1], pts[cand], self.metric)[0]
            order = np.lexsort((cand, d))[:k]
            out_i[r] = cand[order]
            out_d[r] = d[order]
        return out_i, out_d


def build_index(support: EmbeddingSet, metric=DistanceMetric.SQEUCLIDEAN,
                backend: str = "exhaustive") -> Index:
    return Index(support, metric, backend)


def query_knn(index: Index, z, k: int) -> NeighborList:
    return index.query(z, k)


def separation_diagnostic(s: EmbeddingSet, metric=DistanceMetric.SQEUCLIDEAN,
                          sample: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo mean intra-class and inter-class distances.

    A well-trained embedding has the first much smaller than the second.
    The numbers are reported, never enforced.
    """
    present = np.flatnonzero(s.class_counts > 0)
    if present.size < 2:
        raise EmbeddingError("separation diagnostic needs at least two classes")
    if sample < 1:
        raise ValueError("sample must be positive")
    rng = np.random.default_rng(seed)
    labels = s.labels
    by_class = [np.flatnonzero(labels == j) for j in range(s.n_classes)]
    multi = [m for m in by_class if m.size >= 2]
    intra = np.empty(sample)
    inter = np.empty(sample)
    a_i = np.empty(sample, dtype=np.int64)
    b_i = np.empty(sample, dtype=np.int64)
    for t in range(sample):
        if multi:
            members = multi[rng.integers(len(multi))]
            a, b = rng.choice(members, size=2, replace=False)
            a_i[t], b_i[t] = a, b
    if multi:
        intra = _paired(s.vectors[a_i], s.vectors[b_i], metric)
    else:
        intra = np.full(sample, np.nan)
    for t in range(sample):
        a = rng.integers(len(s))
        others = np.flatnonzero(labels != labels[a])
        a_i[t], b_i[t] = a, others[rng.integers(others.size)]
    inter = _paired(s.vectors[a_i], s.vectors[b_i], metric)
    return float(np.mean(intra)), float(np.mean(inter))


def _paired(a, b, metric) -> np.ndarray:
    if DistanceMetric.parse(metric) is DistanceMetric.COSINE:
        return 1.0 - np.sum(_unit_rows(a) * _unit_rows(b), axis=1)
    diff = a - b
    return np.sum(diff * diff, axis=1)
