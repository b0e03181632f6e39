"""Evaluation runs, k sweeps and perturbation sweeps over embedding sets.

Perturbations act on query embeddings only; the support set is never
modified. They stand in for input-space corruptions at embedding level:

``gaussian-noise``
    i.i.d. ``N(0, s^2)`` added to every coordinate.
``uniform-noise``
    i.i.d. ``U(-s*sqrt(3), s*sqrt(3))`` (same per-coordinate variance).
``coordinate-dropout``
    A fraction ``f`` of coordinates, chosen per query, set to zero.

Severity ``1..5`` maps to a factor ``f`` in ``(0.05, 0.1, 0.2, 0.4, 0.8)``.
Noise scales are ``s = f * d``, where ``d`` is the mean leave-one-out
nearest-neighbor (Euclidean) distance within the clean query set.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import calibration_report
from .embedding_store import EmbeddingError, EmbeddingSet
from .metric_index import DistanceMetric, Index
from .scorers import Rule, ScorerConfig, class_scores_batch, predict_batch
from .temperature import TuneConfig, tune_temperature

__all__ = [
    "SEVERITY_FACTORS",
    "PERTURBATIONS",
    "PerturbSpec",
    "SweepRow",
    "SweepReport",
    "mean_nn_distance",
    "perturb",
    "evaluate_run",
    "sweep_k",
    "sweep_severity",
]

SEVERITY_FACTORS = (0.05, 0.1, 0.2, 0.4, 0.8)
PERTURBATIONS = ("gaussian-noise", "uniform-noise", "coordinate-dropout")
_KIND_CODE = {k: i for i, k in enumerate(PERTURBATIONS)}


@dataclass(frozen=True)
class PerturbSpec:
    kind: str = "gaussian-noise"
    severity: int = 1
    seed: int = 0

    def __post_init__(self):
        kind = {"gaussian": "gaussian-noise", "uniform": "uniform-noise",
                "dropout": "coordinate-dropout"}.get(self.kind, self.kind)
        if kind not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.severity not in (1, 2, 3, 4, 5):
            raise ValueError("severity must be an integer in 1..5")

    @property
    def factor(self) -> float:
        return SEVERITY_FACTORS[self.severity - 1]


def mean_nn_distance(vectors) -> float:
    """Mean Euclidean distance from each row to its nearest other row."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) < 2:
        raise EmbeddingError("need at least two vectors")
    s = EmbeddingSet.from_arrays(vectors, np.zeros(len(vectors), dtype=np.int64))
    _, d = Index(s).query_batch(vectors, 1, exclude=np.arange(len(vectors)))
    return float(np.mean(np.sqrt(d[:, 0])))


def perturb(queries, spec: PerturbSpec, scale: float | None = None) -> np.ndarray:
    """Perturbed copy of ``queries``; the input is left untouched.

    Parameters
    ----------
    queries : array_like, shape (Q, m)
    spec : PerturbSpec
    scale : float, optional
        Noise scale ``s``. Defaults to ``spec.factor * mean_nn_distance(queries)``.
        Ignored by coordinate dropout, which uses ``spec.factor`` as the fraction.

    Each query draws from its own stream keyed by ``(seed, kind, severity, i)``,
    so results do not depend on batch order or partitioning.
    """
    q = np.array(queries, dtype=np.float64, copy=True)
    if q.ndim != 2:
        raise EmbeddingError("queries must be a 2-D array")
    n, m = q.shape
    if spec.kind != "coordinate-dropout" and scale is None:
        scale = spec.factor * mean_nn_distance(q)
    code = _KIND_CODE[spec.kind]
    for i in range(n):
        rng = np.random.default_rng([spec.seed, code, spec.severity, i])
        if spec.kind == "gaussian-noise":
            q[i] += scale * rng.standard_normal(m)
        elif spec.kind == "uniform-noise":
            a = scale * math.sqrt(3.0)
            q[i] += rng.uniform(-a, a, m)
        else:
            n_drop = int(round(spec.factor * m))
            q[i, rng.permutation(m)[:n_drop]] = 0.0
    return q


# ------------------------------------------------------------- reports

_COLUMNS = ("rule", "k", "severity", "accuracy", "ece", "t_used", "seed")


@dataclass(frozen=True)
class SweepRow:
    rule: str
    k: int
    severity: int | None
    accuracy: float
    ece: float | None  # None for 1NN, whose confidence is not calibrated
    t_used: float | None
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy outside [0, 1]")
        if self.ece is not None and not 0.0 <= self.ece <= 1.0:
            raise ValueError("ECE outside [0, 1]")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def select(self, rule=None, k=None, severity=None) -> list:
        rule = None if rule is None else Rule.parse(rule).value
        return [r for r in self.rows
                if (rule is None or r.rule == rule)
                and (k is None or r.k == k)
                and (severity is None or r.severity == severity)]

    def averaged(self) -> dict:
        """Mean accuracy and ECE per rule over all of its rows."""
        out = {}
        for rule in dict.fromkeys(r.rule for r in self.rows):
            rows = self.select(rule)
            eces = [r.ece for r in rows if r.ece is not None]
            out[rule] = {
                "accuracy": float(np.mean([r.accuracy for r in rows])),
                "ece": float(np.mean(eces)) if eces else None,
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in _COLUMNS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @staticmethod
    def read_csv(path) -> "SweepReport":
        rows = []
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                rows.append(SweepRow(
                    r["rule"], int(r["k"]),
                    int(r["severity"]) if r["severity"] else None,
                    float(r["accuracy"]),
                    float(r["ece"]) if r["ece"] else None,
                    float(r["t_used"]) if r["t_used"] else None,
                    int(r["seed"]),
                ))
        return SweepReport(rows)

    def to_text(self) -> str:
        header = ["rule", "k", "severity", "accuracy", "ECE", "T"]
        body = [[r.rule, str(r.k), "-" if r.severity is None else str(r.severity),
                 f"{r.accuracy:.4f}", "-" if r.ece is None else f"{r.ece:.4f}",
                 "-" if r.t_used is None else f"{r.t_used:.4g}"] for r in self.rows]
        widths = [max(len(x) for x in col) for col in zip(header, *body)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(row, widths)) for row in [header] + body]
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------- runs


def _truth(queries: EmbeddingSet, truth) -> np.ndarray:
    if truth is None:
        return np.asarray(queries.labels)
    truth = np.asarray(truth, dtype=np.int64)
    if truth.shape != (len(queries),):
        raise EmbeddingError("truth must have one label per query")
    return truth


def _check_spaces(support: EmbeddingSet, queries: EmbeddingSet):
    if queries.dim != support.dim:
        raise EmbeddingError(f"query dimension {queries.dim} != support dimension {support.dim}")
    if tuple(queries.label_space) != tuple(support.label_space):
        raise EmbeddingError("query and support label spaces differ")


def evaluate_run(support: EmbeddingSet, queries: EmbeddingSet, truth=None,
                 config: ScorerConfig = ScorerConfig(), n_bins: int = 10,
                 threads: int = 1, index: Index | None = None):
    """Score every query and summarize calibration.

    Returns
    -------
    report : CalibrationReport
    predictions : list of Prediction
    """
    _check_spaces(support, queries)
    truth = _truth(queries, truth)
    index = Index(support, config.metric) if index is None else index
    preds = predict_batch(index, queries.vectors, config, support, threads=threads)
    conf = np.array([p.confidence for p in preds])
    pred = np.array([p.label for p in preds])
    return calibration_report((conf, pred, truth), n_bins), preds


def _rule_rows(dist, labels, truth, n_classes, rules, k, temps, n_bins, metric, seed, severity=None):
    rows = []
    for rule in rules:
        rule = Rule.parse(rule)
        kk = 1 if rule is Rule.ONE_NN else k
        T = temps.get(k) if rule is Rule.NED else None
        scores = class_scores_batch(rule, dist[:, :kk], labels[:, :kk], n_classes,
                                    1.0 if T is None else T, metric)
        pred = scores.argmax(axis=1)
        conf = scores[np.arange(len(pred)), pred]
        rep = calibration_report((conf, pred, truth), n_bins)
        rows.append(SweepRow(rule.value, kk, severity, rep.accuracy,
                             None if rule is Rule.ONE_NN else rep.ece, T, seed))
    return rows


def _tuned(support, k, tune: TuneConfig | None, metric, fixed_T):
    if fixed_T is not None:
        return float(fixed_T)
    tune = TuneConfig() if tune is None else tune
    return tune_temperature(support, replace(tune, k=min(k, len(support) - 1)), metric).t_star


def sweep_k(support: EmbeddingSet, queries: EmbeddingSet, truth=None,
            rules=(Rule.NED, Rule.KNN, Rule.WKNN_A, Rule.WKNN_B),
            k_values=(1, 2, 4, 8, 16, 32, 64), metric=DistanceMetric.SQEUCLIDEAN,
            tune: TuneConfig | None = None, fixed_T: float | None = None,
            n_bins: int = 10, seed: int = 0) -> SweepReport:
    """Accuracy and ECE for each rule at each ``k``.

    NED's temperature is retuned at every ``k`` with ``tune`` (its ``k`` is
    overridden) unless ``fixed_T`` is given. Neighbors are retrieved once at
    ``max(k_values)`` and truncated per ``k``.
    """
    _check_spaces(support, queries)
    truth = _truth(queries, truth)
    k_values = [int(k) for k in k_values]
    if max(k_values) > len(support):
        raise ValueError(f"k={max(k_values)} exceeds N_support={len(support)}")
    metric = DistanceMetric.parse(metric)
    idx, dist = Index(support, metric).query_batch(queries.vectors, max(k_values))
    labels = support.labels[idx]
    needs_t = any(Rule.parse(r) is Rule.NED for r in rules)
    temps = {k: _tuned(support, k, tune, metric, fixed_T) for k in k_values} if needs_t else {}
    report = SweepReport(metadata={"sweep": "k", "seed": seed, "fixed_T": fixed_T})
    for k in k_values:
        report.rows += _rule_rows(dist, labels, truth, support.n_classes, rules, k, temps,
                                  n_bins, metric, seed)
    return report


def sweep_severity(support: EmbeddingSet, queries: EmbeddingSet, truth=None,
                   rules=(Rule.NED, Rule.KNN, Rule.WKNN_A, Rule.WKNN_B, Rule.ONE_NN),
                   k: int = 10, kind: str = "gaussian-noise", severities=(1, 2, 3, 4, 5),
                   metric=DistanceMetric.SQEUCLIDEAN, temperature: float | None = None,
                   tune: TuneConfig | None = None, n_bins: int = 10, seed: int = 0) -> SweepReport:
    """Evaluate each rule on perturbed copies of the queries.

    The temperature is fixed across severities: ``temperature`` if given,
    otherwise tuned once on the clean support set.
    """
    _check_spaces(support, queries)
    truth = _truth(queries, truth)
    metric = DistanceMetric.parse(metric)
    index = Index(support, metric)
    T = _tuned(support, k, tune, metric, temperature)
    scale_ref = mean_nn_distance(queries.vectors)
    report = SweepReport(metadata={"sweep": "severity", "perturbation": kind, "seed": seed,
                                   "T": T, "reference_distance": scale_ref})
    for sev in severities:
        spec = PerturbSpec(kind, sev, seed)
        noisy = perturb(queries.vectors, spec, spec.factor * scale_ref)
        idx, dist = index.query_batch(noisy, k)
        report.rows += _rule_rows(dist, support.labels[idx], truth, support.n_classes, rules,
                                  k, {k: T}, n_bins, metric, seed, sev)
    return report
