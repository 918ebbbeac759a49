"""Independent reference implementations used to freeze expected values.

Written without importing the code paths they check.
"""

import itertools
import math
import statistics


def raster_iou(a, b):
    """IoU of integer (x, y, w, h) boxes by counting unit cells."""
    cells_a = {(i, j) for i in range(a[0], a[0] + a[2]) for j in range(a[1], a[1] + a[3])}
    cells_b = {(i, j) for i in range(b[0], b[0] + b[2]) for j in range(b[1], b[1] + b[3])}
    return len(cells_a & cells_b) / len(cells_a | cells_b)


def corner_iou(a, b):
    ax1, ay1, ax2, ay2 = a[0], a[1], a[0] + a[2], a[1] + a[3]
    bx1, by1, bx2, by2 = b[0], b[1], b[0] + b[2], b[1] + b[3]
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def brute_force_tp(det_boxes, gt_boxes, thr):
    """Largest one-to-one matching with IoU >= thr, by exhaustive enumeration."""
    n_det, n_gt = len(det_boxes), len(gt_boxes)
    ok = [[corner_iou(d, g) >= thr for g in gt_boxes] for d in det_boxes]
    best = 0
    # assign each detection to a ground-truth index or None
    for assign in itertools.product([None, *range(n_gt)], repeat=n_det):
        used = [g for g in assign if g is not None]
        if len(used) != len(set(used)):
            continue
        if all(g is None or ok[i][g] for i, g in enumerate(assign)):
            best = max(best, len(used))
    return best


def shoelace(poly):
    s = 0.0
    for i in range(len(poly)):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % len(poly)]
        s += x1 * y2 - x2 * y1
    return abs(s) / 2


def perimeter(poly):
    return sum(math.dist(poly[i], poly[(i + 1) % len(poly)]) for i in range(len(poly)))


def direct_features(dets, width, height, conf_thr=0.1):
    """dets: list of (x, y, w, h, score, polygon-or-None). Returns name -> value."""
    kept = [d for d in dets if d[4] >= conf_thr]
    names = [f"counts_0.{i}" for i in range(1, 10)] + [
        "area_ratio", "avg_conf", "std_conf", "avg_frac_size", "std_frac_size",
        "avg_circularity", "std_circularity", "n_defects", "image_conf"]
    if not kept:
        return dict.fromkeys(names, 0.0)
    out = {}
    edges = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    for b in range(9):
        lo = edges[b]
        hi = edges[b + 1] if b < 8 else None
        c = sum(1 for d in kept if d[4] >= lo and (hi is None or d[4] < hi))
        out[names[b]] = c / len(kept)
    areas, sizes, circs, scores = [], [], [], []
    for x, y, w, h, s, poly in kept:
        scores.append(s)
        sizes.append(math.sqrt(w * h / (width * height)))
        if poly is not None:
            a = shoelace(poly)
            circs.append(perimeter(poly) / (2 * math.sqrt(math.pi * a)))
        else:
            a = w * h
            ea, eb = w / 2, h / 2
            p = math.pi * (3 * (ea + eb) - math.sqrt((3 * ea + eb) * (ea + 3 * eb)))
            circs.append(p / (2 * math.sqrt(math.pi * math.pi * ea * eb)))
        areas.append(a)
    out["area_ratio"] = sum(areas) / (width * height)
    out["avg_conf"] = statistics.fmean(scores)
    out["std_conf"] = statistics.pstdev(scores)
    out["avg_frac_size"] = statistics.fmean(sizes)
    out["std_frac_size"] = statistics.pstdev(sizes)
    out["avg_circularity"] = statistics.fmean(circs)
    out["std_circularity"] = statistics.pstdev(circs)
    out["n_defects"] = float(len(kept))
    out["image_conf"] = sum(s * a for s, a in zip(scores, areas)) / sum(areas)
    return out


def brute_force_best_split(X, y):
    """Max SSE reduction over every (feature, midpoint) pair; returns (gain, feature, threshold)."""
    n, d = len(X), len(X[0])
    def sse(vals):
        if not vals:
            return 0.0
        m = sum(vals) / len(vals)
        return sum((v - m) ** 2 for v in vals)
    parent = sse(list(y))
    best = (-math.inf, None, None)
    for j in range(d):
        values = sorted(set(row[j] for row in X))
        for lo, hi in zip(values, values[1:]):
            thr = (lo + hi) / 2
            left = [y[i] for i in range(n) if X[i][j] <= thr]
            right = [y[i] for i in range(n) if X[i][j] > thr]
            gain = parent - sse(left) - sse(right)
            if gain > best[0]:
                best = (gain, j, thr)
    return best


def split_gain(X, y, j, thr):
    def sse(vals):
        if not vals:
            return 0.0
        m = sum(vals) / len(vals)
        return sum((v - m) ** 2 for v in vals)
    left = [y[i] for i in range(len(X)) if X[i][j] <= thr]
    right = [y[i] for i in range(len(X)) if X[i][j] > thr]
    return sse(list(y)) - sse(left) - sse(right)
