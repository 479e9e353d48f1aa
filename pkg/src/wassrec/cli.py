"""Command-line pipeline: prepare a catalog, train per fold, evaluate.

Three subcommands share one output directory (flag --out, falling back
to the WASSREC_OUT environment variable, then ./wassrec-out):

* prepare: parse ratings and tag-relevance files, binarize, drop items
  without content vectors, and write the filtered tables plus a stats
  record under <out>/prepared/.
* train: build the cold-start splits, fit wf or wcf per fold, and write
  ranked predictions (and wcf model directories) under <out>/runs/.
* evaluate: score every run against the held-out cold interactions and
  write per-user and summary tables under <out>/reports/.

Every file the pipeline writes is deterministic for a fixed config and
seed: reruns are byte-identical.  Exit codes: 0 success, 1 usage error,
2 data error, 3 solver failure.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import (
    FORMATS,
    RATIOS,
    binarize,
    build_cost_matrix,
    cold_start_split,
    filter_catalog,
    load_genome,
    load_interactions,
    read_split_manifest,
    write_split_manifest,
)
from .exceptions import DataError, SolverError
from .metrics import evaluate_run, write_report_files
from .transport import GibbsKernel
from .wcf import TrainOptions, predict_user, save_model, train_wcf
from .wfilter import UserInteractions, estimate_preference, infer_cold, rank_items

__all__ = ["ExperimentConfig", "main", "app", "build_parser"]

OUT_ENV = "WASSREC_OUT"
DEFAULT_OUT = "wassrec-out"
PREDICTION_HEADER = "user\trank\titem\tscore"


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment's settings, shared by all three pipeline stages.

    Stages ignore the fields they do not use; every invariant is checked
    on construction, before any file is read or written.  ``out`` is the
    directory the stages communicate through.
    """

    out: Path
    ratings: Path | None = None
    genome: Path | None = None
    ratings_format: str = "tab"
    threshold: float = 4.0
    algorithm: str | None = None
    gamma: float = 0.05
    latent_dim: int = 30
    ratio: str = "3:1"
    folds: int | None = None
    seed: int = 0
    tol: float = 1e-5
    max_outer: int = 50
    scope: int = 20

    def __post_init__(self):
        object.__setattr__(self, "out", Path(self.out))
        for field in ("ratings", "genome"):
            value = getattr(self, field)
            if value is not None:
                object.__setattr__(self, field, Path(value))
        if self.ratings_format not in FORMATS:
            raise ValueError("unknown ratings format %r" % (self.ratings_format,))
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite, got %r" % (self.threshold,))
        if self.algorithm not in (None, "wf", "wcf"):
            raise ValueError("algorithm must be wf or wcf, got %r" % (self.algorithm,))
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise ValueError("gamma must be positive, got %r" % (self.gamma,))
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be at least 1, got %r" % (self.latent_dim,))
        if self.ratio not in RATIOS:
            raise ValueError("ratio must be one of %s, got %r"
                             % (sorted(RATIOS), self.ratio))
        if self.folds is not None and self.folds < 1:
            raise ValueError("folds must be at least 1, got %r" % (self.folds,))
        if not np.isfinite(self.tol) or self.tol <= 0:
            raise ValueError("tol must be positive, got %r" % (self.tol,))
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1, got %r" % (self.max_outer,))
        if self.scope < 1:
            raise ValueError("scope must be at least 1, got %r" % (self.scope,))


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("%r is not a number" % text)
    if not np.isfinite(value) or value <= 0:
        raise argparse.ArgumentTypeError("must be a positive number, got %r" % text)
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("%r is not an integer" % text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1, got %r" % text)
    return value


def _finite_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("%r is not a number" % text)
    if not np.isfinite(value):
        raise argparse.ArgumentTypeError("must be finite, got %r" % text)
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wassrec",
        description="Cold-start recommendation via smoothed optimal transport.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--out",
        help="output directory (default: $%s, then ./%s)" % (OUT_ENV, DEFAULT_OUT),
    )

    p = sub.add_parser("prepare", parents=[common],
                       help="parse, binarize and filter the input catalog")
    p.add_argument("--ratings", required=True, help="interaction file")
    p.add_argument("--genome", required=True, help="tag-relevance file")
    p.add_argument("--format", choices=sorted(FORMATS), default="tab",
                   help="ratings field delimiter (default tab)")
    p.add_argument("--threshold", type=_finite_float, default=4.0,
                   help="keep interactions rated at least this (default 4)")
    p.set_defaults(func=cmd_prepare)

    t = sub.add_parser("train", parents=[common],
                       help="split the catalog and fit one algorithm per fold")
    t.add_argument("--algorithm", choices=("wf", "wcf"), required=True)
    t.add_argument("--gamma", type=_positive_float, default=0.05,
                   help="entropic smoothing (default 0.05)")
    t.add_argument("--latent-dim", dest="latent_dim", type=_positive_int, default=30,
                   help="wcf factorization rank (default 30)")
    t.add_argument("--ratio", choices=sorted(RATIOS), default="3:1",
                   help="interacted:cold item ratio (default 3:1)")
    t.add_argument("--folds", type=_positive_int, default=None,
                   help="fold count (default: every subset once)")
    t.add_argument("--seed", type=int, default=0, help="split and init seed")
    t.add_argument("--tol", type=_positive_float, default=1e-5,
                   help="wcf outer-loop relative tolerance (default 1e-5)")
    t.add_argument("--max-outer", dest="max_outer", type=_positive_int, default=50,
                   help="wcf outer-iteration cap (default 50)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common],
                       help="score trained runs against held-out cold items")
    e.add_argument("--scope", type=_positive_int, default=20,
                   help="ranking cutoff for NDCG and recall (default 20)")
    e.add_argument("--algorithm", choices=("wf", "wcf"), default=None,
                   help="evaluate one algorithm (default: every run found)")
    e.set_defaults(func=cmd_evaluate)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    out = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    fields = ("ratings", "genome", "threshold", "algorithm", "gamma",
              "latent_dim", "ratio", "folds", "seed", "tol", "max_outer",
              "scope")
    kwargs = {f: getattr(args, f) for f in fields if hasattr(args, f)}
    if hasattr(args, "format"):
        kwargs["ratings_format"] = args.format
    return ExperimentConfig(out=out, **kwargs)


def cmd_prepare(config: ExperimentConfig) -> int:
    table = load_interactions(config.ratings, fmt=config.ratings_format)
    table = binarize(table, threshold=config.threshold)
    genome = load_genome(config.genome)
    table, genome = filter_catalog(table, genome)

    prepared = config.out / "prepared"
    prepared.mkdir(parents=True, exist_ok=True)

    order = np.lexsort((table.timestamps, table.item_ids, table.user_ids))
    with open(prepared / "interactions.tsv", "w", encoding="utf-8") as fh:
        for i in order:
            fh.write("%d\t%d\t%.17g\t%d\n" % (table.user_ids[i], table.item_ids[i],
                                              table.ratings[i], table.timestamps[i]))

    with open(prepared / "genome.csv", "w", encoding="utf-8") as fh:
        fh.write("movieId,tagId,relevance\n")
        for i, item in enumerate(genome.item_ids):
            for j, tag in enumerate(genome.tag_ids):
                fh.write("%d,%d,%.17g\n" % (item, tag, genome.relevance[i, j]))

    n_users = int(table.users.size)
    n_items = int(table.items.size)
    stats = {
        "users": n_users,
        "items": n_items,
        "interactions": len(table),
        "density": len(table) / (n_users * n_items),
    }
    with open(prepared / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print("prepared %d interactions (%d users, %d items) -> %s"
          % (len(table), n_users, n_items, prepared))
    return 0


def _fold_histograms(split):
    """Per-user preference histograms over the fold's interacted items.

    Users whose every interaction fell on cold items have no training
    signal and are left out (the caller reports them).
    """
    interacted = np.asarray(split.interacted_items, dtype=np.int64)
    histograms = {}
    for user, (items, vals) in split.train.by_user().items():
        idx = np.searchsorted(interacted, items)
        ui = UserInteractions(user_id=user, item_indices=idx, values=vals)
        histograms[user] = estimate_preference(ui, interacted.size)
    return histograms


def _write_predictions(path, predictions) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(PREDICTION_HEADER + "\n")
        for user in sorted(predictions):
            ranked = predictions[user]
            for rank, (item, score) in enumerate(
                    zip(ranked.item_ids, ranked.scores), start=1):
                fh.write("%d\t%d\t%d\t%.17g\n" % (user, rank, item, score))


def cmd_train(config: ExperimentConfig) -> int:
    out = config.out
    table = load_interactions(out / "prepared" / "interactions.tsv")
    genome = load_genome(out / "prepared" / "genome.csv")

    splits = cold_start_split(table, ratio=config.ratio, folds=config.folds,
                              seed=config.seed)
    (out / "splits").mkdir(parents=True, exist_ok=True)
    write_split_manifest(splits, out / "splits" / "manifest.json")

    for split in splits:
        run_dir = out / "runs" / config.algorithm / ("fold%d" % split.fold)
        run_dir.mkdir(parents=True, exist_ok=True)

        histograms = _fold_histograms(split)
        if not histograms:
            raise DataError("fold %d has no trainable users" % split.fold)
        dropped = sorted(set(int(u) for u in split.test.users) - set(histograms))
        if dropped:
            print("fold %d: skipping %d user(s) with no training interactions"
                  % (split.fold, len(dropped)), file=sys.stderr)

        cost = build_cost_matrix(genome, split.interacted_items, split.cold_items)
        predictions = {}
        if config.algorithm == "wf":
            kernel = GibbsKernel.from_cost(cost, config.gamma)
            for user in sorted(histograms):
                q = infer_cold(histograms[user], kernel)
                predictions[user] = rank_items(q, split.cold_items)
        else:
            users = sorted(histograms)
            s = len(split.cold_items)
            n = len(split.interacted_items)
            k = min(config.latent_dim, s, n, len(users))
            if k < config.latent_dim:
                print("fold %d: latent dim clamped to %d (%d cold items, "
                      "%d interacted items, %d users)"
                      % (split.fold, k, s, n, len(users)), file=sys.stderr)
            opts = TrainOptions(tol=config.tol, max_outer=config.max_outer,
                                seed=config.seed)
            model = train_wcf([histograms[u] for u in users], cost, k=k,
                              gamma=config.gamma, opts=opts, user_ids=users)
            save_model(model, run_dir / "model")
            trace = model.objective_trace
            print("fold %d: objective %.6g -> %.6g over %d half-steps"
                  % (split.fold, trace[0], trace[-1], len(trace) - 1))
            for user in users:
                predictions[user] = rank_items(predict_user(model, user),
                                               split.cold_items)

        _write_predictions(run_dir / "predictions.tsv", predictions)
        print("fold %d: wrote %d rankings -> %s"
              % (split.fold, len(predictions), run_dir / "predictions.tsv"))
    return 0


def _read_predictions(path):
    """Parse a predictions file back into user -> ranked item ids."""
    rows = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != PREDICTION_HEADER:
            raise DataError("%s: unexpected header %r" % (path, header))
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise DataError("%s line %d: expected 4 fields" % (path, lineno))
            try:
                user, rank, item = int(parts[0]), int(parts[1]), int(parts[2])
                float(parts[3])
            except ValueError:
                raise DataError("%s line %d: malformed row" % (path, lineno))
            rows.setdefault(user, []).append((rank, item))
    predictions = {}
    for user, pairs in rows.items():
        pairs.sort()
        if [r for r, _ in pairs] != list(range(1, len(pairs) + 1)):
            raise DataError("%s: user %d has non-contiguous ranks" % (path, user))
        predictions[user] = tuple(item for _, item in pairs)
    if not predictions:
        raise DataError("%s contains no predictions" % path)
    return predictions


def cmd_evaluate(config: ExperimentConfig) -> int:
    out = config.out
    manifest = read_split_manifest(out / "splits" / "manifest.json")
    table = load_interactions(out / "prepared" / "interactions.tsv")

    runs_dir = out / "runs"
    if config.algorithm:
        algorithms = [config.algorithm]
    else:
        if not runs_dir.is_dir():
            raise DataError("no runs directory at %s" % runs_dir)
        algorithms = sorted(d.name for d in runs_dir.iterdir() if d.is_dir())
        if not algorithms:
            raise DataError("no runs found under %s" % runs_dir)

    summary_rows = []
    for algo in algorithms:
        reports = []
        dropped_counts = []
        for fold_info in manifest["folds"]:
            fold = fold_info["fold"]
            pred_path = runs_dir / algo / ("fold%d" % fold) / "predictions.tsv"
            predictions = _read_predictions(pred_path)
            test_full = table.restrict_items(fold_info["cold"])
            evaluable = set(int(u) for u in test_full.users)
            dropped = sorted(evaluable - set(predictions))
            test = test_full.restrict_users(sorted(predictions))
            report = evaluate_run(predictions, test, scope=config.scope, fold=fold)
            reports.append(report)
            dropped_counts.append(len(dropped))
            if dropped:
                print("%s fold %d: %d evaluable user(s) had no predictions"
                      % (algo, fold, len(dropped)), file=sys.stderr)

        rep_dir = out / "reports" / algo
        rep_dir.mkdir(parents=True, exist_ok=True)
        write_report_files(reports, rep_dir / "per_user.tsv", rep_dir / "summary.tsv")
        for report, n_dropped in zip(reports, dropped_counts):
            summary_rows.append((algo, str(report.fold), report.scope,
                                 report.evaluated_user_count,
                                 report.excluded_user_count, n_dropped,
                                 report.mean_ap, report.mean_ndcg,
                                 report.mean_recall))
        n = len(reports)
        summary_rows.append((
            algo, "mean", config.scope,
            sum(r.evaluated_user_count for r in reports),
            sum(r.excluded_user_count for r in reports),
            sum(dropped_counts),
            sum(r.mean_ap for r in reports) / n,
            sum(r.mean_ndcg for r in reports) / n,
            sum(r.mean_recall for r in reports) / n,
        ))
        print("%s: MAP %.4f  NDCG@%d %.4f  Recall@%d %.4f (mean over %d folds)"
              % (algo, summary_rows[-1][6], config.scope, summary_rows[-1][7],
                 config.scope, summary_rows[-1][8], n))

    # one comparative table: per-fold rows plus a mean row per algorithm
    # (metric columns are unweighted fold means, count columns are totals)
    with open(out / "reports" / "summary.tsv", "w", encoding="utf-8") as fh:
        fh.write("algorithm\tfold\tscope\tevaluated_users\texcluded_users"
                 "\tdropped_users\tmap\tndcg\trecall\n")
        for row in summary_rows:
            fh.write("%s\t%s\t%d\t%d\t%d\t%d\t%.17g\t%.17g\t%.17g\n" % row)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(_config_from_args(args))
    except (DataError, FileNotFoundError, ValueError) as err:
        print("error: %s" % err, file=sys.stderr)
        return 2
    except SolverError as err:
        print("solver failure: %s" % err, file=sys.stderr)
        return 3


def app() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    app()
