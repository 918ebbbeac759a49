#!/usr/bin/env python3
"""Full evaluation protocol on a labeled manifest.

Runs repeated random 5-fold CV and leave-one-group-out CV for the F1,
precision and recall targets, an MDI-ranked top-k sweep, and prints the
results next to reference values for the all-data row.

    python scripts/run_manifest_study.py --data manifest.json --out runs/study
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from detscore.detection import MatchConfig, match_image
from detscore.evaluation import SplitSpec, cross_validate, write_cv_report
from detscore.features import FEATURE_NAMES, extract_features, feature_matrix
from detscore.forest import ForestParams, fit_forest
from detscore.importance import mdi_importance, sweep_top_k, write_importance, write_sweep
from detscore.ingest import FeatureRow, Targets, parse_dataset, write_feature_matrix

REFERENCE = {
    "f1": {"rmse": 0.127, "mae": 0.093, "r2": 0.774, "nrmse": 0.475, "nmae": 0.167},
    "precision": {"r2": 0.81},
    "recall": {"r2": 0.57},
}
REFERENCE_OPERATING_POINT = (0.89, 0.91)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True, help="labeled manifest JSON")
    ap.add_argument("--out", default="runs/study")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--iou", type=float, default=0.1)
    ap.add_argument("--conf", type=float, default=0.1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    match = MatchConfig(args.iou, args.conf)
    ds = parse_dataset(args.data)
    rows = []
    for rec in ds.images:
        s = match_image(rec, match)
        rows.append(FeatureRow(rec.id, extract_features(rec, match),
                               Targets(s.f1, s.precision, s.recall), rec.group))
    write_feature_matrix(rows, out / "features.csv")
    X = feature_matrix([r.features for r in rows])
    groups = [r.group for r in rows]
    ids = [r.id for r in rows]
    params = ForestParams(n_trees=args.trees)
    n_groups = len(set(groups))

    for target in ("f1", "precision", "recall"):
        y = np.array([getattr(r.targets, target) for r in rows])
        specs = [("random", SplitSpec("random", 5, args.repeats, args.seed))]
        if n_groups >= 2:
            specs.append(("grouped", SplitSpec("grouped", seed=args.seed)))
        for name, spec in specs:
            res = cross_validate(X, y, groups, spec, params, target_name=target,
                                 threads=args.threads)
            dc = write_cv_report(res, out / f"{target}_{name}", ids)
            o = res.overall
            print(f"{target:9s} {name:7s} rmse {o.rmse:.3f} mae {o.mae:.3f} r2 {o.r2:.3f} "
                  f"nrmse {o.nrmse:.3f} nmae {o.nmae:.3f} | group avg rmse "
                  f"{res.group_average.rmse:.3f} mae {res.group_average.mae:.3f}")
            if name == "random":
                ref = REFERENCE[target]
                print("          reference", "  ".join(f"{k} {v}" for k, v in ref.items()))
                if target == "f1" and dc.operating_point:
                    print(f"          operating point precision {dc.operating_point[0]:.3f} "
                          f"recall {dc.operating_point[1]:.3f} (reference "
                          f"{REFERENCE_OPERATING_POINT[0]} / {REFERENCE_OPERATING_POINT[1]})")

    y = np.array([r.targets.f1 for r in rows])
    mdi = mdi_importance(fit_forest(X, y, params, args.seed, threads=args.threads))
    write_importance(mdi, out / "importance.csv")
    sweep = sweep_top_k(X, y, mdi.ranking, range(5, len(FEATURE_NAMES) + 1),
                        split=SplitSpec("random", 5, 1, args.seed), params=params,
                        seed=args.seed, threads=args.threads)
    write_sweep(sweep, out / "sweep.csv")
    print(f"sweep: best k={sweep.chosen_k}: {', '.join(sweep.chosen_features)}")


if __name__ == "__main__":
    main()
