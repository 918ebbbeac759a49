#!/usr/bin/env python3
"""Synthetic benchmark study: random vs grouped CV, importance rankings and top-k sweep.

    python scripts/run_synthetic_benchmark.py --out runs/synth --seed 7 --repeats 10
"""

import argparse
import logging
import time
from pathlib import Path

import numpy as np

from detscore.detection import match_image
from detscore.evaluation import SplitSpec, cross_validate, write_cv_report
from detscore.features import FEATURE_NAMES, extract_features, feature_matrix
from detscore.forest import ForestParams, fit_forest, save_model
from detscore.importance import (mdi_importance, permutation_importance, sweep_top_k,
                                 write_importance, write_sweep)
from detscore.ingest import FeatureRow, Targets, write_dataset, write_feature_matrix
from detscore.synth import DEFAULT_LEVELS, SynthConfig, generate_regression_benchmark, shifted_levels

log = logging.getLogger("synth-benchmark")


def featurize(ds):
    rows = []
    for rec in ds.images:
        s = match_image(rec)
        rows.append(FeatureRow(rec.id, extract_features(rec), Targets(s.f1, s.precision, s.recall),
                               rec.group))
    return rows


def fmt(rep):
    r2 = "  n/a" if rep.r2 is None else f"{rep.r2:6.3f}"
    return f"rmse {rep.rmse:.3f}  mae {rep.mae:.3f}  r2 {r2}  n {rep.n}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/synth")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--repeats", type=int, default=10, help="random 5-fold CV repeats")
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--shifted", action="store_true", help="use the over-confident last group")
    ap.add_argument("--skip-sweep", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    levels = shifted_levels() if args.shifted else DEFAULT_LEVELS
    ds = generate_regression_benchmark(SynthConfig(seed=args.seed), levels)
    write_dataset(ds, out / "benchmark.json")
    rows = featurize(ds)
    write_feature_matrix(rows, out / "features.csv")
    X = feature_matrix([r.features for r in rows])
    y = np.array([r.targets.f1 for r in rows])
    groups = [r.group for r in rows]
    ids = [r.id for r in rows]
    log.info("benchmark: %d images, groups %s", len(rows), sorted(set(groups)))

    params = ForestParams(n_trees=args.trees)
    for name, spec in (("random", SplitSpec("random", 5, args.repeats, args.seed)),
                       ("grouped", SplitSpec("grouped", seed=args.seed))):
        res = cross_validate(X, y, groups, spec, params, threads=args.threads)
        dc = write_cv_report(res, out / f"cv_{name}", ids)
        print(f"[{name:7s}] all data        {fmt(res.overall)}")
        for lab, rep in res.per_group.items():
            print(f"[{name:7s}] {lab:15s} {fmt(rep)}")
        print(f"[{name:7s}] group average   {fmt(res.group_average)}")
        if dc.operating_point:
            print(f"[{name:7s}] F1>=0.5 classifier precision {dc.operating_point[0]:.3f}"
                  f" recall {dc.operating_point[1]:.3f}")

    # importance on a held-out split of the images
    rng = np.random.default_rng(args.seed)
    perm = rng.permutation(len(y))
    tr, te = perm[: int(0.8 * len(y))], perm[int(0.8 * len(y)):]
    model = fit_forest(X[tr], y[tr], params, args.seed, threads=args.threads)
    save_model(model, out / "model.bin")
    mdi = mdi_importance(model)
    pi = permutation_importance(model, X[te], y[te], repeats=10, seed=args.seed)
    write_importance(mdi, out / "importance_mdi.csv")
    write_importance(pi, out / "importance_perm.csv")
    print("MDI top 8:        ", ", ".join(mdi.top(8)))
    print("permutation top 8:", ", ".join(pi.top(8)))

    if not args.skip_sweep:
        sweep = sweep_top_k(X, y, mdi.ranking, range(5, len(FEATURE_NAMES) + 1),
                            split=SplitSpec("random", 5, 1, args.seed), params=params,
                            seed=args.seed, threads=args.threads)
        write_sweep(sweep, out / "sweep.csv")
        for k, rmse, r2 in zip(sweep.ks, sweep.rmse, sweep.r2):
            mark = " <" if k == sweep.chosen_k else ""
            print(f"k={k:2d}  rmse {rmse:.4f}  r2 {r2:.4f}{mark}")
    log.info("done in %.1fs; outputs in %s", time.perf_counter() - t0, out)


if __name__ == "__main__":
    main()
