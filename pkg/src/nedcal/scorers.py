"""Per-class confidence rules over a query's nearest neighbors.

All rules share one retrieval step (:meth:`Index.query_batch`) and differ
only in how neighbor distances become class weights:

========  ====================================================
NED       ``exp(-d_i / T)`` on squared distances
KNN       uniform vote
WKNN_A    linear in distance, 1 at the nearest, 0 at the k-th
WKNN_B    WKNN_A blended with a uniform floor of ``1/k``
ONE_NN    label of the nearest neighbor (uncalibrated)
========  ====================================================
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .embedding_store import EmbeddingError, EmbeddingSet
from .metric_index import DistanceMetric, Index

__all__ = [
    "Rule",
    "ScorerConfig",
    "Prediction",
    "ned_scores",
    "knn_scores",
    "wknn_scores",
    "class_scores_batch",
    "predict",
    "predict_batch",
]


class Rule(str, enum.Enum):
    NED = "ned"
    KNN = "knn"
    WKNN_A = "wknn-a"
    WKNN_B = "wknn-b"
    ONE_NN = "1nn"

    @classmethod
    def parse(cls, value) -> "Rule":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("_", "-")
        for r in cls:
            if v in (r.value, r.name.lower().replace("_", "-")):
                return r
        raise ValueError(f"unknown rule {value!r}")


@dataclass(frozen=True)
class ScorerConfig:
    rule: Rule = Rule.NED
    k: int = 10
    temperature: float = 1.0
    metric: DistanceMetric = DistanceMetric.SQEUCLIDEAN

    def __post_init__(self):
        rule = Rule.parse(self.rule)
        object.__setattr__(self, "rule", rule)
        object.__setattr__(self, "metric", DistanceMetric.parse(self.metric))
        if rule is Rule.ONE_NN:
            object.__setattr__(self, "k", 1)
        if int(self.k) < 1:
            raise ValueError("k must be >= 1")
        object.__setattr__(self, "k", int(self.k))
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")


@dataclass(frozen=True)
class Prediction:
    label: int
    confidence: float
    class_scores: np.ndarray = field(repr=False)
    calibrated: bool = True


def ned_scores(distances, labels, T: float, n_classes: int) -> np.ndarray:
    """NED class scores from one neighbor list.

    Parameters
    ----------
    distances : array_like, shape (k,)
        Squared distances to the neighbors.
    labels : array_like of int, shape (k,)
    T : float
        Temperature, > 0.
    n_classes : int

    The smallest distance is subtracted before exponentiation, so the
    nearest neighbor always has weight 1 and the normalizer never underflows.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("need at least one neighbor")
    return _ned(d[None, :], np.asarray(labels)[None, :], T, n_classes)[0]


def knn_scores(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return np.bincount(labels, minlength=n_classes) / labels.size


def wknn_weights(d: np.ndarray, variant: str) -> np.ndarray:
    """Linear-in-distance neighbor weights for rows of ascending distances."""
    d = np.atleast_2d(d)
    if variant not in ("A", "B"):
        raise ValueError(f"unknown WkNN variant {variant!r}")
    span = d[:, -1:] - d[:, :1]
    flat = span <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        if variant == "A":
            w = (d[:, -1:] - d) / span
        else:
            eps = 1.0 / d.shape[1]
            w = ((d[:, -1:] - d) + eps * span) / ((1.0 + eps) * span)
    # the B form can round a hair above 1
    return np.where(flat, 1.0, np.clip(w, 0.0, 1.0))


def wknn_scores(distances, labels, variant: str, n_classes: int) -> np.ndarray:
    """Weighted vote with weights linear in the (unsquared) neighbor distance.

    ``distances`` must be ascending and already in the units the weights are
    linear in; :func:`predict` passes Euclidean distances for the
    squared-Euclidean metric.
    """
    d = np.asarray(distances, dtype=np.float64)[None, :]
    w = wknn_weights(d, variant)
    return _vote(w, np.asarray(labels)[None, :], n_classes)[0]


def _vote(w: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    q, k = labels.shape
    flat = (labels + n_classes * np.arange(q)[:, None]).ravel()
    sums = np.bincount(flat, weights=np.broadcast_to(w, labels.shape).ravel(),
                       minlength=q * n_classes).reshape(q, n_classes)
    return sums / sums.sum(axis=1, keepdims=True)


def _ned(d: np.ndarray, labels: np.ndarray, T: float, n_classes: int) -> np.ndarray:
    w = np.exp(-(d - d.min(axis=1, keepdims=True)) / T)
    return _vote(w, labels, n_classes)


def class_scores_batch(rule, dist: np.ndarray, labels: np.ndarray, n_classes: int,
                       temperature: float = 1.0, metric=DistanceMetric.SQEUCLIDEAN) -> np.ndarray:
    """Vectorized score rule over ``(Q, k)`` neighbor distances and labels."""
    rule = Rule.parse(rule)
    if rule is Rule.NED:
        return _ned(dist, labels, temperature, n_classes)
    if rule is Rule.KNN:
        return _vote(np.ones(labels.shape), labels, n_classes)
    if rule is Rule.ONE_NN:
        return _vote(np.ones((labels.shape[0], 1)), labels[:, :1], n_classes)
    raw = np.sqrt(dist) if DistanceMetric.parse(metric) is DistanceMetric.SQEUCLIDEAN else dist
    return _vote(wknn_weights(raw, "A" if rule is Rule.WKNN_A else "B"), labels, n_classes)


def _to_predictions(scores: np.ndarray, rule: Rule) -> list[Prediction]:
    top = np.argmax(scores, axis=1)  # first maximum: lowest class index wins ties
    calibrated = rule is not Rule.ONE_NN
    out = []
    for i, j in enumerate(top):
        s = scores[i]
        s.setflags(write=False)
        out.append(Prediction(int(j), float(s[j]), s, calibrated))
    return out


def _check_index(index: Index, config: ScorerConfig):
    if index.metric is not config.metric:
        raise ValueError(f"index metric {index.metric.value} != config metric {config.metric.value}")


def predict(index: Index, query, config: ScorerConfig, support: EmbeddingSet | None = None) -> Prediction:
    """Predicted class and confidence for one query embedding.

    For ``ONE_NN`` the confidence is reported as 1.0 and the prediction is
    flagged ``calibrated=False``.
    """
    return predict_batch(index, np.asarray(query, dtype=np.float64)[None, :], config, support)[0]


def _score_block(index, queries, config, n_classes):
    idx, dist = index.query_batch(queries, config.k)
    labels = index.support.labels[idx]
    return class_scores_batch(config.rule, dist, labels, n_classes, config.temperature, config.metric)


def predict_batch(index: Index, queries, config: ScorerConfig, support: EmbeddingSet | None = None,
                  threads: int = 1, block: int = 256) -> list[Prediction]:
    """Predictions for each row of ``queries``, in order.

    ``threads > 1`` scores blocks of queries concurrently; results are
    identical to the serial run because every block is a pure function of
    its rows.
    """
    _check_index(index, config)
    support = index.support if support is None else support
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2:
        queries = queries.reshape(len(queries), -1)
    if queries.shape[1] != index.dim:
        raise EmbeddingError(
            f"query 0: dimension {queries.shape[1]} != support dimension {index.dim}"
        )
    n_classes = support.n_classes
    starts = range(0, len(queries), block)
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda s: _score_block(index, queries[s:s + block], config, n_classes), starts))
    else:
        parts = [_score_block(index, queries[s:s + block], config, n_classes) for s in starts]
    if not parts:
        return []
    return _to_predictions(np.concatenate(parts, axis=0), config.rule)
