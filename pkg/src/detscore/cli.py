"""``detscore`` command line.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
Settings come from built-in defaults, then ``--config <file>`` (flat TOML
``key = value`` lines, keys named like the long flags with ``_`` for ``-``),
then explicit flags.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .detection import MatchConfig, score_dataset, write_scores
from .errors import DataError, DetscoreError
from .evaluation import SplitSpec, cross_validate, write_cv_report
from .features import FEATURE_NAMES, FeatureOptions, extract_features, feature_matrix
from .forest import ForestParams, fit_forest, load_model, predict_matrix, save_model
from .importance import (mdi_importance, permutation_importance, sweep_top_k,
                         write_importance, write_sweep)
from .ingest import FeatureRow, Targets, parse_dataset, read_feature_matrix, write_dataset, write_feature_matrix

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("detscore")

SUBCOMMANDS = ("score", "featurize", "train", "predict", "cv", "importance", "sweep", "synth", "pipeline")


class UsageError(DetscoreError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    match: MatchConfig
    forest: ForestParams
    split: SplitSpec
    features: FeatureOptions
    seed: int
    threads: int


def _run_config(args) -> RunConfig:
    try:
        match = MatchConfig(args.iou, args.conf, args.overlap)
        forest = ForestParams(n_trees=args.trees, max_depth=args.max_depth,
                              min_samples_split=args.min_samples_split,
                              min_samples_leaf=args.min_samples_leaf,
                              max_features=args.max_features)
        split = SplitSpec.parse(args.split, seed=args.seed)
        feats = FeatureOptions(args.size_mode, args.count_mode, args.shape_source)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    return RunConfig(match, forest, split, feats, args.seed, args.threads)


# ---------------------------------------------------------------------------
# parser


def _common(p):
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="random seed (unsigned 64-bit)")
    g.add_argument("--threads", type=int, default=1, help="worker threads for tree training")
    g.add_argument("--config", default=None, help="TOML file of key = value settings")
    g.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    m = p.add_argument_group("matching and features")
    m.add_argument("--iou", type=float, default=0.1, help="overlap threshold for a true positive")
    m.add_argument("--conf", type=float, default=0.1, help="confidence threshold for detections")
    m.add_argument("--overlap", choices=("iou", "iop"), default="iou",
                   help="iou, or intersection over predicted area")
    m.add_argument("--size-mode", choices=("linear", "area"), default="linear")
    m.add_argument("--count-mode", choices=("fraction", "raw"), default="fraction")
    m.add_argument("--shape-source", choices=("polygon", "box"), default="polygon")

    f = p.add_argument_group("forest")
    f.add_argument("--trees", type=int, default=100)
    f.add_argument("--max-depth", type=int, default=None)
    f.add_argument("--min-samples-split", type=int, default=2)
    f.add_argument("--min-samples-leaf", type=int, default=1)
    f.add_argument("--max-features", choices=("all", "third"), default="all")
    f.add_argument("--target", choices=("f1", "precision", "recall"), default="f1")
    f.add_argument("--select", default=None,
                   help="comma-separated feature names to use (default: all 18)")
    f.add_argument("--split", default="random:k=5,repeats=1",
                   help="random:k=5,repeats=10 or grouped")
    f.add_argument("--f1-threshold", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="detscore",
                     description="Predict per-image detection F1 from detector outputs.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    parser.subcommands = sub.choices

    p = sub.add_parser("score", help="ground-truth TP/FP/FN and F1 per image")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("featurize", help="18-feature matrix from detector outputs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--with-targets", action="store_true", help="append f1, precision, recall")
    _common(p)

    p = sub.add_parser("train", help="fit a random forest on a feature matrix")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("predict", help="predict targets for a feature matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", default="predictions.csv")
    _common(p)

    p = sub.add_parser("cv", help="cross-validate and write report CSVs")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="report directory")
    _common(p)

    p = sub.add_parser("importance", help="rank features of a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", default=None, help="held-out rows (needed for perm)")
    p.add_argument("--method", choices=("mdi", "perm"), default="mdi")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("sweep", help="cross-validate top-k feature subsets")
    p.add_argument("--features", required=True)
    p.add_argument("--ranking", default=None, help="importance.csv; default ranks by MDI on all rows")
    p.add_argument("--k-min", type=int, default=5)
    p.add_argument("--k-max", type=int, default=18)
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("synth", help="generate a synthetic manifest")
    p.add_argument("--config", dest="synth_config", default=None, help="synth TOML file")
    p.add_argument("--benchmark", action="store_true",
                   help="multi-level regression benchmark instead of one configuration")
    p.add_argument("--shifted", action="store_true", help="benchmark with an over-confident last group")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("pipeline", help="featurize, train, cross-validate and report from one manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _common(p)
    return parser


def _apply_config_file(parser, sub_parser, argv, args):
    path = getattr(args, "config", None)
    if not path:
        return args
    try:
        with open(path, "rb") as fh:
            settings = tomllib.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"bad config file {path}: {exc}") from exc
    known = {a.dest for a in sub_parser._actions}
    defaults = {}
    for key, value in settings.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"unknown setting {key!r} in {path}")
        defaults[dest] = value
    sub_parser.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# helpers


def _rows_matrix(rows, names):
    return feature_matrix([r.features for r in rows], names)


def _selected(args):
    if not args.select:
        return list(FEATURE_NAMES)
    names = [n.strip() for n in args.select.split(",") if n.strip()]
    bad = [n for n in names if n not in FEATURE_NAMES]
    if bad:
        raise UsageError(f"unknown feature name(s) in --select: {bad}")
    return names


def _targets(rows, target, path):
    if not rows:
        raise DataError(f"{path} has no rows")
    if rows[0].targets is None:
        raise DataError(f"{path} has no target columns; featurize with --with-targets")
    return np.array([getattr(r.targets, target) for r in rows])


def _groups(rows):
    groups = [r.group for r in rows]
    return None if any(g is None for g in groups) else groups


def _featurize(ds, cfg: RunConfig, with_targets):
    from .detection import match_image

    rows = []
    for rec in ds.images:
        fv = extract_features(rec, cfg.match, cfg.features)
        targets = None
        if with_targets:
            s = match_image(rec, cfg.match)
            targets = Targets(s.f1, s.precision, s.recall)
        rows.append(FeatureRow(rec.id, fv, targets, rec.group))
    return rows


def _read_ranking(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "feature" not in reader.fieldnames:
            raise DataError(f"{path}: expected a 'feature' column")
        return [row["feature"] for row in reader]


# ---------------------------------------------------------------------------
# subcommands


def cmd_score(args, cfg):
    ds = parse_dataset(args.data)
    write_scores(score_dataset(ds, cfg.match), args.out)
    log.info("scored %d images -> %s", len(ds), args.out)


def cmd_featurize(args, cfg):
    ds = parse_dataset(args.data)
    rows = _featurize(ds, cfg, args.with_targets)
    write_feature_matrix(rows, args.out)
    log.info("wrote %d feature rows -> %s", len(rows), args.out)


def _train(rows, args, cfg, path):
    names = _selected(args)
    y = _targets(rows, args.target, path)
    return fit_forest(_rows_matrix(rows, names), y, cfg.forest, cfg.seed,
                      feature_names=names, target_name=args.target, threads=cfg.threads)


def cmd_train(args, cfg):
    rows = read_feature_matrix(args.features)
    model = _train(rows, args, cfg, args.features)
    save_model(model, args.out)
    log.info("trained %d trees on %d rows -> %s", len(model.trees), len(rows), args.out)


def cmd_predict(args, cfg):
    model = load_model(args.model)
    rows = read_feature_matrix(args.features)
    preds = predict_matrix(model, _rows_matrix(rows, model.selected_features)) if rows else []
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", f"predicted_{model.target_name}"])
        for r, p in zip(rows, preds):
            w.writerow([r.id, repr(float(p))])
    log.info("wrote %d predictions -> %s", len(rows), args.out)


def _cv(rows, args, cfg, out_dir, path):
    names = _selected(args)
    y = _targets(rows, args.target, path)
    groups = _groups(rows)
    if cfg.split.kind == "grouped" and groups is None:
        raise DataError("grouped split needs a group column in the feature matrix")
    result = cross_validate(_rows_matrix(rows, names), y, groups, cfg.split, cfg.forest,
                            feature_names=names, target_name=args.target, threads=cfg.threads)
    dc = write_cv_report(result, out_dir, [r.id for r in rows], args.f1_threshold)
    o = result.overall
    log.info("cv %s: rmse=%.4f mae=%.4f r2=%s", args.split, o.rmse, o.mae,
             "undefined" if o.r2 is None else f"{o.r2:.4f}")
    if dc.operating_point is not None:
        log.info("domain classification at %.2f: precision=%.3f recall=%.3f",
                 args.f1_threshold, *dc.operating_point)
    return result


def cmd_cv(args, cfg):
    rows = read_feature_matrix(args.features)
    _cv(rows, args, cfg, args.out, args.features)


def cmd_importance(args, cfg):
    model = load_model(args.model)
    if args.method == "mdi":
        report = mdi_importance(model)
    else:
        if not args.features:
            raise UsageError("--method perm needs --features with held-out rows")
        rows = read_feature_matrix(args.features)
        y = _targets(rows, model.target_name, args.features)
        report = permutation_importance(model, _rows_matrix(rows, model.selected_features), y,
                                        args.repeats, cfg.seed)
    write_importance(report, args.out)
    log.info("top features (%s): %s", report.method, ", ".join(report.ranking[:8]))


def cmd_sweep(args, cfg):
    rows = read_feature_matrix(args.features)
    y = _targets(rows, args.target, args.features)
    X = _rows_matrix(rows, FEATURE_NAMES)
    if args.ranking:
        ranking = _read_ranking(args.ranking)
    else:
        model = fit_forest(X, y, cfg.forest, cfg.seed, target_name=args.target, threads=cfg.threads)
        ranking = mdi_importance(model).ranking
    sweep = sweep_top_k(X, y, ranking, range(args.k_min, args.k_max + 1), groups=_groups(rows),
                        split=cfg.split, params=cfg.forest, seed=cfg.seed,
                        target_name=args.target, threads=cfg.threads)
    write_sweep(sweep, args.out)
    log.info("best k=%d: %s", sweep.chosen_k, ", ".join(sweep.chosen_features))


def cmd_synth(args):
    from .synth import (DEFAULT_LEVELS, SynthConfig, generate, generate_regression_benchmark,
                        shifted_levels)

    settings = {}
    if args.synth_config:
        try:
            with open(args.synth_config, "rb") as fh:
                settings = tomllib.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read {args.synth_config}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"bad synth config: {exc}") from exc
    if args.seed is not None:
        settings["seed"] = args.seed
    try:
        cfg = SynthConfig.from_dict(settings)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if args.benchmark or args.shifted:
        levels = shifted_levels() if args.shifted else DEFAULT_LEVELS
        ds = generate_regression_benchmark(cfg, levels)
    else:
        ds = generate(cfg)
    write_dataset(ds, args.out)
    log.info("wrote %d synthetic images -> %s", len(ds), args.out)


def cmd_pipeline(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = parse_dataset(args.data)
    write_scores(score_dataset(ds, cfg.match), out / "scores.csv")
    rows = _featurize(ds, cfg, with_targets=True)
    write_feature_matrix(rows, out / "features.csv")
    model = _train(rows, args, cfg, args.data)
    save_model(model, out / "model.bin")
    write_importance(mdi_importance(model), out / "importance.csv")
    _cv(rows, args, cfg, out / "report", args.data)
    log.info("pipeline outputs in %s", out)


COMMANDS = {
    "score": cmd_score,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "predict": cmd_predict,
    "cv": cmd_cv,
    "importance": cmd_importance,
    "sweep": cmd_sweep,
    "pipeline": cmd_pipeline,
}


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help()
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", force=True)
    try:
        if args.command == "synth":
            cmd_synth(args)
            return 0
        sub_parser = parser.subcommands[args.command]
        try:
            args = _apply_config_file(parser, sub_parser, argv, args)
        except SystemExit as exc:
            return int(exc.code or 0)
        cfg = _run_config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"detscore: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"detscore: error: {exc}", file=sys.stderr)
        return 2
    return 0


run = main


if __name__ == "__main__":
    sys.exit(main())
