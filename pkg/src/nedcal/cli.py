"""Command-line front end: ``nedcal {ingest,tune,evaluate,sweep,synth,replay}``.

Every command that writes an output directory also writes ``manifest.json``
there. ``nedcal replay DIR/manifest.json`` re-runs it; outputs are pure
functions of the manifest, so the rerun reproduces them byte for byte.

Exit codes: 0 success, 1 unexpected internal error, 2 input validation,
3 tuning precondition, 4 label-space mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .benchmarks import BENCHMARKS, benchmark_spec
from .calibration import reliability_svg, report_json, write_reliability_csv
from .embedding_store import (
    FORMATS,
    EmbeddingError,
    EmbeddingFormatError,
    LabelSpaceError,
    load_records,
    write_records,
)
from .harness import PERTURBATIONS, evaluate_run, sweep_k, sweep_severity
from .kde_oracle import generate_mixture, load_mixture_spec
from .metric_index import DistanceMetric, separation_diagnostic
from .scorers import Rule, ScorerConfig
from .temperature import TuneConfig, TuningError, tune_temperature, write_nll_curve

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_TUNING, EXIT_LABELS = 0, 1, 2, 3, 4

COSINE_NOTE = ("note: the NED/kernel-posterior correspondence assumes squared Euclidean distance; "
               "with --metric cosine the scores are a heuristic")

# arguments that name input files; stored as absolute paths in the manifest
_PATH_ARGS = ("input", "support", "queries", "truth", "spec")


def sub_seed(seed: int, name: str) -> int:
    """Independent 32-bit seed for the named stream derived from ``seed``."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


# ------------------------------------------------------------- helpers


def _k_list(text: str) -> list[int]:
    try:
        ks = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be positive")
    return ks


def _load_support(args):
    return load_records(args.support, args.format)


def _load_queries(args, support):
    return load_records(args.queries, args.query_format or args.format,
                        label_space=support.label_space, support=False)


def _load_truth(path, queries, label_space) -> np.ndarray:
    """Truth labels from a CSV with ``id`` and ``label`` columns, aligned to ``queries``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"id", "label"} <= set(reader.fieldnames):
            raise EmbeddingFormatError("truth file needs 'id' and 'label' columns")
        table = {}
        for lineno, row in enumerate(reader, start=2):
            name = row["label"]
            if name not in label_space:
                raise LabelSpaceError(f"truth line {lineno}: label {name!r} not in the support label space")
            table[row["id"]] = label_space.index(name)
    missing = [q for q in queries.ids if q not in table]
    if missing:
        raise EmbeddingFormatError("no truth label", record_id=missing[0])
    return np.array([table[q] for q in queries.ids], dtype=np.int64)


def _tune_config(args, k: int) -> TuneConfig:
    return TuneConfig(mode=args.mode, k=k, fraction=args.fraction,
                      seed=sub_seed(args.seed, "tune"), max_scored=args.max_scored)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_manifest(args, out: Path, **extra) -> None:
    doc = {
        "subcommand": args.command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "command")},
        "output_dir": str(out),
    }
    if hasattr(args, "mode"):
        # sweeps retune per k; record the config with k left at 1
        k = args.k if isinstance(args.k, int) else 1
        doc["tune"] = asdict(_tune_config(args, k))
    doc.update(extra)
    _write_json(out / "manifest.json", doc)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metric(args) -> DistanceMetric:
    metric = DistanceMetric.parse(args.metric)
    if metric is DistanceMetric.COSINE:
        print(COSINE_NOTE, file=sys.stderr)
    return metric


# ------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    s = load_records(args.input, args.format)
    print(f"N = {len(s)}")
    print(f"m = {s.dim}")
    print(f"M = {s.n_classes}")
    width = max(len(n) for n in s.label_space)
    for name, c in zip(s.label_space, s.class_counts):
        print(f"  {name.ljust(width)}  {int(c)}")
    if s.n_classes >= 2:
        metric = _metric(args)
        intra, inter = separation_diagnostic(s, metric, seed=sub_seed(args.seed, "separation"))
        print(f"separation: mean intra-class {intra:.6g}, mean inter-class {inter:.6g}, "
              f"ratio {intra / inter:.4f}")
    if args.out:
        write_records(s, args.out, args.out_format)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_tune(args) -> int:
    metric = _metric(args)
    support = _load_support(args)
    out = _out_dir(args)
    result = tune_temperature(support, _tune_config(args, args.k), metric)
    _write_json(out / "tune.json", dict(result.to_dict(), k=args.k, mode=args.mode, metric=metric.value))
    write_nll_curve(result, out / "nll_curve.csv")
    _write_manifest(args, out)
    print(f"t_star = {result.t_star!r}")
    print(f"nll_at_t_star = {result.nll_at_t_star!r}")
    if not result.interior:
        print("warning: minimum on the edge of the search grid", file=sys.stderr)
    return EXIT_OK


def _resolve_temperature(args, support, metric, out: Path) -> float | None:
    if Rule.parse(args.rule) is not Rule.NED:
        return None
    if args.temperature is not None:
        return args.temperature
    result = tune_temperature(support, _tune_config(args, min(args.k, len(support) - 1)), metric)
    _write_json(out / "tune.json", result.to_dict())
    write_nll_curve(result, out / "nll_curve.csv")
    return result.t_star


def _write_predictions(path: Path, queries, preds, names, with_scores: bool) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["id", "predicted", "confidence"]
        if with_scores:
            head += [f"score_{n}" for n in names]
        w.writerow(head)
        for qid, p in zip(queries.ids, preds):
            row = [qid, names[p.label], repr(p.confidence)]
            if with_scores:
                row += [repr(float(v)) for v in p.class_scores]
            w.writerow(row)


def cmd_evaluate(args) -> int:
    metric = _metric(args)
    support = _load_support(args)
    queries = _load_queries(args, support)
    truth = _load_truth(args.truth, queries, support.label_space) if args.truth else None
    out = _out_dir(args)
    sparse = support.sparse_classes(args.k) if Rule.parse(args.rule) is not Rule.ONE_NN else []
    if sparse:
        names = ", ".join(sparse[:5]) + (f" and {len(sparse) - 5} more" if len(sparse) > 5 else "")
        print(f"warning: {len(sparse)} classes with fewer than k={args.k} support records: {names}",
              file=sys.stderr)
    T = _resolve_temperature(args, support, metric, out)
    config = ScorerConfig(args.rule, args.k, 1.0 if T is None else T, metric)
    report, preds = evaluate_run(support, queries, truth, config, args.bins, threads=args.threads)
    _write_predictions(out / "predictions.csv", queries, preds, list(support.label_space), args.scores)
    calibrated = config.rule is not Rule.ONE_NN
    (out / "report.json").write_text(report_json(
        report, rule=config.rule.value, k=config.k, temperature=T, metric=metric.value,
        calibrated=calibrated, **({} if calibrated else {"ece": None})))
    write_reliability_csv(report, out / "reliability.csv")
    (out / "reliability.svg").write_text(reliability_svg(report, f"{config.rule.value}, k={config.k}"))
    _write_manifest(args, out, scorer=dict(asdict(config), rule=config.rule.value,
                                           metric=metric.value, temperature=T))
    ece = f"{report.ece:.4f}" if calibrated else "n/a (uncalibrated)"
    print(f"accuracy = {report.accuracy:.4f}  ECE = {ece}  n = {report.n}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    metric = _metric(args)
    support = _load_support(args)
    queries = _load_queries(args, support)
    truth = _load_truth(args.truth, queries, support.label_space) if args.truth else None
    out = _out_dir(args)
    rules = [Rule.parse(r) for r in args.rules.split(",")]
    tune = _tune_config(args, 1)
    if args.sweep == "k":
        report = sweep_k(support, queries, truth, rules, args.k, metric, tune=tune,
                         fixed_T=args.fixed_T, n_bins=args.bins, seed=args.seed)
    else:
        if len(args.k) != 1:
            raise EmbeddingError("--sweep severity takes a single --k")
        report = sweep_severity(support, queries, truth, rules, args.k[0], args.perturb,
                                metric=metric, temperature=args.fixed_T, tune=tune,
                                n_bins=args.bins, seed=sub_seed(args.seed, "perturb"))
    report.write_csv(out / "sweep.csv")
    _write_manifest(args, out)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.benchmark:
        spec = benchmark_spec(args.benchmark)
    elif args.spec:
        spec = load_mixture_spec(args.spec)
    else:
        raise EmbeddingError("give a MixtureSpec JSON path or --benchmark NAME")
    seed = spec.seed if args.seed is None else args.seed
    n = spec.counts_for(args.n) if args.n is not None else args.n_per_class
    s = generate_mixture(spec, n, seed=seed, id_prefix=args.id_prefix)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_records(s, out, args.format)
    print(f"wrote {len(s)} records ({s.n_classes} classes, dim {s.dim}) to {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    doc = json.loads(Path(args.manifest).read_text())
    command = doc["subcommand"]
    if command not in _REPLAYABLE:
        raise EmbeddingError(f"cannot replay subcommand {command!r}")
    ns = argparse.Namespace(**doc["args"], command=command,
                            out=args.out if args.out else doc["output_dir"])
    return _REPLAYABLE[command](ns)


_REPLAYABLE = {"tune": cmd_tune, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


# ------------------------------------------------------------- parser


def _common(p, *, scoring: bool = True):
    p.add_argument("--format", choices=FORMATS, default=None,
                   help="input format (default: from the file suffix)")
    p.add_argument("--metric", choices=[m.value for m in DistanceMetric], default="sqeuclidean")
    p.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    if scoring:
        p.add_argument("--mode", choices=("loo", "holdout"), default="loo", help="tuning objective")
        p.add_argument("--fraction", type=float, default=0.2, help="holdout fraction per class")
        p.add_argument("--max-scored", type=int, default=None,
                       help="score at most this many support points in leave-one-out tuning")


def _two_sets(p):
    p.add_argument("support", help="labeled support (gallery) embeddings")
    p.add_argument("queries", help="query embeddings; their labels are the ground truth")
    p.add_argument("--query-format", choices=FORMATS, default=None)
    p.add_argument("--truth", default=None, help="CSV with id,label overriding the query labels")
    p.add_argument("--bins", type=int, default=10, help="number of reliability bins")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nedcal", description="Calibrated confidence for "
                                     "nearest-neighbor classification in embedding spaces.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate, summarize and convert an embedding file")
    p.add_argument("input")
    _common(p, scoring=False)
    p.add_argument("--out", default=None, help="write the set to this path")
    p.add_argument("--out-format", choices=FORMATS, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("tune", help="select the NED temperature on a support set")
    p.add_argument("support")
    _common(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("evaluate", help="score queries and report accuracy and calibration")
    _two_sets(p)
    _common(p)
    p.add_argument("--rule", choices=[r.value for r in Rule], default="ned")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--temperature", type=float, default=None, help="fixed T (skips tuning)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--scores", action="store_true", help="add per-class score columns")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="accuracy and ECE across k or perturbation severity")
    _two_sets(p)
    _common(p)
    p.add_argument("--sweep", choices=("k", "severity"), required=True)
    p.add_argument("--rules", default="ned,knn,wknn-a,wknn-b",
                   help="comma-separated rules (severity sweeps usually add 1nn)")
    p.add_argument("--k", type=_k_list, default=[10], help="k, or a comma-separated list for --sweep k")
    p.add_argument("--perturb", default="gaussian-noise",
                   choices=PERTURBATIONS + ("gaussian", "uniform", "dropout"))
    p.add_argument("--fixed-T", dest="fixed_T", type=float, default=None,
                   help="use this T for NED instead of tuning")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="sample a labeled set from a Gaussian mixture spec")
    p.add_argument("spec", nargs="?", default=None, help="MixtureSpec JSON")
    p.add_argument("--benchmark", choices=BENCHMARKS, default=None, help="use a bundled spec")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--n", type=int, help="total records, split by the priors")
    g.add_argument("--n-per-class", type=int)
    p.add_argument("--seed", type=int, default=None, help="default: the seed stored in the mixture JSON")
    p.add_argument("--format", choices=FORMATS, default=None)
    p.add_argument("--id-prefix", default="s")
    p.add_argument("--out", required=True, help="output file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("replay", help="re-run a command from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="output directory (default: the original)")
    p.set_defaults(func=cmd_replay)
    return parser


def _absolute_paths(args) -> None:
    for name in _PATH_ARGS:
        v = getattr(args, name, None)
        if v is not None:
            setattr(args, name, str(Path(v).resolve()))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command != "replay":
        _absolute_paths(args)
    try:
        return args.func(args)
    except TuningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TUNING
    except LabelSpaceError as exc:
        print(f"error: label space mismatch: {exc}", file=sys.stderr)
        return EXIT_LABELS
    except (EmbeddingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
