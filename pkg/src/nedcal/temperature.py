"""Temperature selection for NED by negative log-likelihood.

The neighbor lists are retrieved once; every candidate temperature is then
scored against the same lists, so the search never changes which neighbors
are used.

In support-set mode each point is scored against the support set without
itself. Scoring a point against a set that contains it puts a zero distance
in its own neighbor list, and the likelihood would then be maximized by
``T -> 0`` regardless of the data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .embedding_store import EmbeddingError, EmbeddingSet, LabelSpaceError, split_holdout
from .metric_index import DistanceMetric, Index
from .scorers import class_scores_batch

__all__ = [
    "TuningError",
    "TuneConfig",
    "TuneResult",
    "NeighborCache",
    "loo_nll",
    "holdout_nll",
    "tune_temperature",
    "golden_section",
    "write_nll_curve",
    "PROB_FLOOR",
]

PROB_FLOOR = 1e-12
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class TuningError(EmbeddingError):
    """Tuning preconditions do not hold (e.g. a single-record class in LOO mode)."""


@dataclass(frozen=True)
class TuneConfig:
    """Search settings.

    ``t_min``/``t_max`` left as ``None`` are filled from the data: the grid
    spans ``[1e-3, 1e3]`` times the mean nearest-neighbor squared distance.

    ``max_scored`` caps how many points are scored in leave-one-out mode
    (a seeded subset; every support point still acts as a neighbor). With
    ``k`` near ``N`` this bounds the cache at ``max_scored * k`` entries.
    """

    mode: str = "loo"
    k: int = 10
    t_min: float | None = None
    t_max: float | None = None
    grid_points: int = 32
    refine_iters: int = 24
    fraction: float = 0.2
    seed: int = 0
    max_scored: int | None = None

    def __post_init__(self):
        mode = {"loo": "loo", "leave-one-out-support": "loo",
                "holdout": "holdout", "holdout-validation": "holdout"}.get(self.mode)
        if mode is None:
            raise ValueError(f"unknown tuning mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.grid_points < 8:
            raise ValueError("grid_points must be >= 8")
        if self.max_scored is not None and self.max_scored < 1:
            raise ValueError("max_scored must be >= 1")
        if self.refine_iters < 0:
            raise ValueError("refine_iters must be >= 0")
        if self.t_min is not None and not self.t_min > 0:
            raise ValueError("t_min must be > 0")
        if self.t_min is not None and self.t_max is not None and not self.t_max > self.t_min:
            raise ValueError("t_max must exceed t_min")


@dataclass(frozen=True)
class TuneResult:
    t_star: float
    nll_at_t_star: float
    nll_curve: list = field(repr=False)
    refine_path: list = field(default_factory=list, repr=False)
    t_min: float = float("nan")
    t_max: float = float("nan")
    grid_step: float = float("nan")

    @property
    def interior(self) -> bool:
        """True when the grid minimum is not at either end of the grid."""
        ts = [t for t, _ in self.nll_curve]
        nll = [v for _, v in self.nll_curve]
        i = int(np.argmin(nll))
        return 0 < i < len(ts) - 1

    @property
    def refine_tolerance(self) -> float:
        """Final log-space bracket width of the refinement."""
        if len(self.refine_path) == 0:
            return self.grid_step
        return 2 * self.grid_step * INV_PHI ** max(len(self.refine_path) - 2, 0)

    def to_dict(self) -> dict:
        return {
            "t_star": self.t_star,
            "nll_at_t_star": self.nll_at_t_star,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "interior": self.interior,
            "grid_step": self.grid_step,
            "refine_tolerance": self.refine_tolerance,
        }


class NeighborCache:
    """Fixed neighbor lists for a set of scored points.

    Parameters
    ----------
    dist, labels : ndarray, shape (n, k)
        Neighbor distances (ascending) and neighbor class indices.
    truth : ndarray, shape (n,)
        Class of each scored point.
    n_classes : int
    """

    def __init__(self, dist, labels, truth, n_classes):
        self.dist = dist
        self.labels = np.asarray(labels, dtype=np.int32)
        self.truth = np.asarray(truth, dtype=np.int64)
        self.n_classes = n_classes

    @classmethod
    def leave_one_out(cls, support: EmbeddingSet, k: int, metric=DistanceMetric.SQEUCLIDEAN,
                      max_scored: int | None = None, seed: int = 0):
        _check_loo(support, k)
        index = Index(support, metric)
        scored = np.arange(len(support))
        if max_scored is not None and max_scored < len(support):
            rng = np.random.default_rng(seed)
            scored = np.sort(rng.choice(len(support), size=max_scored, replace=False))
        idx, dist = index.query_batch(support.vectors[scored], k, exclude=scored)
        return cls(dist, support.labels[idx], support.labels[scored], support.n_classes)

    @classmethod
    def against(cls, support: EmbeddingSet, scored: EmbeddingSet, k: int,
                metric=DistanceMetric.SQEUCLIDEAN):
        index = Index(support, metric)
        idx, dist = index.query_batch(scored.vectors, k)
        return cls(dist, support.labels[idx], scored.labels, support.n_classes)

    @property
    def mean_nn_distance(self) -> float:
        return float(np.mean(self.dist[:, 0]))

    def true_class_prob(self, T: float) -> np.ndarray:
        n = len(self.truth)
        if n == 0:
            return np.zeros(0)
        # chunked to bound memory when k is close to N
        step = max(1, (8 * 2**20) // max(self.dist.shape[1], 1))
        out = np.empty(n)
        for s in range(0, n, step):
            scores = class_scores_batch("ned", self.dist[s:s + step], self.labels[s:s + step],
                                        self.n_classes, T)
            out[s:s + step] = scores[np.arange(scores.shape[0]), self.truth[s:s + step]]
        return out

    def nll(self, T: float) -> float:
        p = self.true_class_prob(T)
        return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def _check_loo(support: EmbeddingSet, k: int):
    counts = support.class_counts
    lonely = [support.label_space.name(j) for j, c in enumerate(counts) if c == 1]
    if lonely:
        raise TuningError(
            f"class {lonely[0]!r} has a single record; leave-one-out cannot score it "
            "(use holdout mode or drop the class)"
        )
    if k > len(support) - 1:
        raise TuningError(f"k={k} exceeds N_support - 1 = {len(support) - 1}")


def loo_nll(support: EmbeddingSet, k: int, T: float, metric=DistanceMetric.SQEUCLIDEAN) -> float:
    """Mean leave-one-out negative log-likelihood of the true class under NED."""
    if not T > 0:
        raise ValueError("T must be > 0")
    return NeighborCache.leave_one_out(support, k, metric).nll(T)


def holdout_nll(support: EmbeddingSet, validation: EmbeddingSet, k: int, T: float,
                metric=DistanceMetric.SQEUCLIDEAN) -> float:
    return NeighborCache.against(support, validation, k, metric).nll(T)


def golden_section(f, lo: float, hi: float, iters: int):
    """Minimize ``f`` on ``[lo, hi]`` with ``iters`` golden-section steps.

    Returns the list of ``(x, f(x))`` evaluations in order.
    """
    path = []
    if iters <= 0:
        return path
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    path += [(c, fc), (d, fd)]
    for _ in range(iters - 1):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
            path.append((c, fc))
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
            path.append((d, fd))
    return path


def tune_from_cache(cache: NeighborCache, config: TuneConfig) -> TuneResult:
    d2 = cache.mean_nn_distance
    if not d2 > 0:
        d2 = 1.0
    t_min = config.t_min if config.t_min is not None else 1e-3 * d2
    t_max = config.t_max if config.t_max is not None else 1e3 * d2
    if not t_max > t_min:
        raise ValueError("t_max must exceed t_min")
    log_grid = np.linspace(math.log(t_min), math.log(t_max), config.grid_points)
    grid = np.exp(log_grid)
    grid[0], grid[-1] = t_min, t_max
    nll = np.array([cache.nll(float(t)) for t in grid])
    i = int(np.argmin(nll))  # first minimum: lowest T wins ties
    best_t, best_v = float(grid[i]), float(nll[i])
    lo = log_grid[max(i - 1, 0)]
    hi = log_grid[min(i + 1, len(grid) - 1)]
    path = golden_section(lambda u: cache.nll(math.exp(u)), lo, hi, config.refine_iters)
    refine = []
    for u, v in path:
        t = min(max(math.exp(u), t_min), t_max)
        refine.append((t, v))
        if v < best_v:
            best_t, best_v = t, v
    return TuneResult(best_t, best_v, list(zip(grid.tolist(), nll.tolist())), refine,
                      t_min, t_max, float(log_grid[1] - log_grid[0]))


def tune_temperature(support: EmbeddingSet, config: TuneConfig = TuneConfig(),
                     metric=DistanceMetric.SQEUCLIDEAN, validation: EmbeddingSet | None = None) -> TuneResult:
    """Select NED's temperature on a log grid, then refine by golden section.

    Parameters
    ----------
    support : EmbeddingSet
    config : TuneConfig
        ``mode="loo"`` scores each support point against the others.
        ``mode="holdout"`` scores ``validation`` against ``support``; when no
        validation set is given, a stratified split of ``support`` with
        ``config.fraction`` and ``config.seed`` is used.
    metric : DistanceMetric

    Returns
    -------
    TuneResult
        The best temperature seen on the grid or along the refinement path.
        Refinement runs on the log-T interval between the grid neighbors of
        the grid minimum.
    """
    if config.mode == "loo":
        cache = NeighborCache.leave_one_out(support, config.k, metric, config.max_scored, config.seed)
    else:
        if validation is None:
            try:
                support, validation = split_holdout(support, config.fraction, config.seed)
            except LabelSpaceError as exc:
                raise TuningError(str(exc)) from None
        if len(validation) == 0:
            raise TuningError("empty validation set")
        cache = NeighborCache.against(support, validation, config.k, metric)
    return tune_from_cache(cache, config)


def write_nll_curve(result: TuneResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "NLL"])
        for t, v in result.nll_curve:
            w.writerow([repr(t), repr(v)])
