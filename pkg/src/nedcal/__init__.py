"""Calibrated confidence scores for nearest-neighbor classification in embedding spaces.

The main scorer, NED, normalizes a sum of ``exp(-d^2 / T)`` over the ``k``
nearest support points per class. The package also holds the kNN and
distance-weighted kNN baselines, a temperature tuner, calibration metrics,
a brute-force kernel-density oracle and a perturbation harness.
"""

from .benchmarks import BENCHMARKS, load_benchmark, subspace_mixture
from .calibration import (
    CalibrationReport,
    EvalOutcome,
    ReliabilityBin,
    accuracy,
    calibration_report,
    ece,
    reliability_bins,
)
from .embedding_store import (
    EmbeddingError,
    EmbeddingFormatError,
    EmbeddingRecord,
    EmbeddingSet,
    LabelSpace,
    LabelSpaceError,
    SupportSet,
    load_records,
    split_holdout,
    write_records,
)
from .harness import PerturbSpec, SweepReport, SweepRow, evaluate_run, perturb, sweep_k, sweep_severity
from .kde_oracle import KernelSpec, MixtureSpec, generate_mixture, kde_posterior, true_posterior
from .metric_index import DistanceMetric, Index, NeighborList, build_index, query_knn
from .scorers import Prediction, Rule, ScorerConfig, class_scores_batch, predict, predict_batch
from .temperature import TuneConfig, TuneResult, TuningError, tune_temperature

__all__ = [
    "accuracy",
    "BENCHMARKS",
    "build_index",
    "calibration_report",
    "CalibrationReport",
    "class_scores_batch",
    "DistanceMetric",
    "ece",
    "EmbeddingError",
    "EmbeddingFormatError",
    "EmbeddingRecord",
    "EmbeddingSet",
    "EvalOutcome",
    "evaluate_run",
    "generate_mixture",
    "Index",
    "kde_posterior",
    "KernelSpec",
    "LabelSpace",
    "LabelSpaceError",
    "load_benchmark",
    "load_records",
    "MixtureSpec",
    "NeighborList",
    "perturb",
    "PerturbSpec",
    "predict",
    "predict_batch",
    "Prediction",
    "query_knn",
    "reliability_bins",
    "ReliabilityBin",
    "Rule",
    "ScorerConfig",
    "split_holdout",
    "subspace_mixture",
    "SupportSet",
    "sweep_k",
    "sweep_severity",
    "SweepReport",
    "SweepRow",
    "true_posterior",
    "tune_temperature",
    "TuneConfig",
    "TuneResult",
    "TuningError",
    "write_records",
]

__version__ = "0.1.0"
