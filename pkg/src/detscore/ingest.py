"""Manifest parsing, validation and flat-file I/O.

A manifest is a JSON document with a top-level ``images`` array.  Each entry
carries the image size, a group label, optional ground truth and the
detector output for that image.  Boxes are ``[x, y, w, h]`` with a top-left
origin unless the document sets ``"bbox_format": "xyxy"``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import numbers
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

from .errors import DataError, DuplicateIdError, GeometryError, SchemaError

logger = logging.getLogger(__name__)

Point = tuple[float, float]


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @classmethod
    def from_corners(cls, x1, y1, x2, y2) -> "BoundingBox":
        return cls(float(x1), float(y1), float(x2) - float(x1), float(y2) - float(y1))

    def scaled(self, k: float) -> "BoundingBox":
        return BoundingBox(self.x * k, self.y * k, self.w * k, self.h * k)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float
    polygon: Optional[tuple[Point, ...]] = None


@dataclass(frozen=True)
class GroundTruthObject:
    box: BoundingBox
    polygon: Optional[tuple[Point, ...]] = None


@dataclass(frozen=True)
class ImageRecord:
    id: str
    width: float
    height: float
    group: str
    detections: tuple[Detection, ...] = ()
    ground_truth: Optional[tuple[GroundTruthObject, ...]] = None

    @property
    def labeled(self) -> bool:
        return self.ground_truth is not None


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageRecord, ...]
    provenance: str = ""
    # Per-object rejections (e.g. a box fully outside its image).
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.images:
            raise DataError("dataset has no images")
        seen = set()
        for rec in self.images:
            if rec.id in seen:
                raise DuplicateIdError(rec.id)
            seen.add(rec.id)

    def __len__(self):
        return len(self.images)

    def __iter__(self):
        return iter(self.images)


# ---------------------------------------------------------------------------
# geometry helpers


def polygon_area(polygon: Sequence[Point]) -> float:
    """Unsigned shoelace area of a closed polygon."""
    n = len(polygon)
    terms = []
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        terms.append(x1 * y2 - x2 * y1)
    return abs(math.fsum(terms)) / 2.0


def clamp_box(box: BoundingBox, width: float, height: float) -> Optional[BoundingBox]:
    """Clip ``box`` to the image; ``None`` when nothing is left."""
    if box.x >= 0 and box.y >= 0 and box.x2 <= width and box.y2 <= height:
        return box
    x1 = max(0.0, box.x)
    y1 = max(0.0, box.y)
    x2 = min(float(width), box.x2)
    y2 = min(float(height), box.y2)
    if x2 <= x1 or y2 <= y1:
        return None
    w, h = x2 - x1, y2 - y1
    # x1 + (x2 - x1) can round above x2
    while x1 + w > x2:
        w = math.nextafter(w, 0.0)
    while y1 + h > y2:
        h = math.nextafter(h, 0.0)
    if w <= 0 or h <= 0:
        return None
    return BoundingBox(x1, y1, w, h)


# ---------------------------------------------------------------------------
# parsing


def _number(value, name, rid):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise SchemaError(f"expected a number, got {value!r}", name, rid)
    value = float(value)
    if not math.isfinite(value):
        raise SchemaError(f"non-finite value {value!r}", name, rid)
    return value


def _parse_box(raw, name, rid, bbox_format) -> BoundingBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise SchemaError("bbox must be a list of 4 numbers", name, rid)
    a, b, c, d = (_number(v, name, rid) for v in raw)
    box = BoundingBox.from_corners(a, b, c, d) if bbox_format == "xyxy" else BoundingBox(a, b, c, d)
    if box.w <= 0 or box.h <= 0:
        raise GeometryError(f"record {rid!r}, field {name!r}: box has non-positive size "
                            f"(w={box.w}, h={box.h})")
    return box


def _parse_polygon(raw, name, rid):
    if raw is None:
        return None
    if not isinstance(raw, (list, tuple)):
        raise SchemaError("polygon must be a list of [x, y] pairs", name, rid)
    pts = []
    for p in raw:
        if not isinstance(p, (list, tuple)) or len(p) != 2:
            raise SchemaError("polygon vertices must be [x, y] pairs", name, rid)
        pts.append((_number(p[0], name, rid), _number(p[1], name, rid)))
    return tuple(pts)


def _polygon_ok(polygon) -> bool:
    return polygon is None or (len(polygon) >= 3 and polygon_area(polygon) > 0)


def _parse_objects(raw_list, key, rid, width, height, bbox_format, diagnostics, with_score):
    if not isinstance(raw_list, list):
        raise SchemaError("expected an array", key, rid)
    out = []
    for i, raw in enumerate(raw_list):
        name = f"{key}[{i}]"
        if not isinstance(raw, dict):
            raise SchemaError("expected an object", name, rid)
        if "bbox" not in raw:
            raise SchemaError("missing required field", f"{name}.bbox", rid)
        box = _parse_box(raw["bbox"], f"{name}.bbox", rid, bbox_format)
        polygon = _parse_polygon(raw.get("polygon"), f"{name}.polygon", rid)
        if with_score:
            if "score" not in raw:
                raise SchemaError("missing required field", f"{name}.score", rid)
            score = _number(raw["score"], f"{name}.score", rid)
            if not 0.0 <= score <= 1.0:
                raise SchemaError(f"score {score} outside [0, 1]", f"{name}.score", rid)
        clamped = clamp_box(box, width, height)
        if clamped is None:
            diagnostics.append(f"{rid}: {name} dropped, box lies outside the image")
            continue
        if not _polygon_ok(polygon):
            diagnostics.append(f"{rid}: {name} dropped, degenerate polygon")
            continue
        if with_score:
            out.append(Detection(clamped, score, polygon))
        else:
            out.append(GroundTruthObject(clamped, polygon))
    return tuple(out)


def _parse_record(raw, index, bbox_format, diagnostics) -> ImageRecord:
    if not isinstance(raw, dict):
        raise SchemaError("expected an object", f"images[{index}]")
    rid = raw.get("id")
    if not isinstance(rid, str) or not rid:
        raise SchemaError("id must be a non-empty string", "id", rid if rid is not None else f"#{index}")
    for key in ("width", "height", "group", "detections"):
        if key not in raw:
            raise SchemaError("missing required field", key, rid)
    width = _number(raw["width"], "width", rid)
    height = _number(raw["height"], "height", rid)
    if width <= 0 or height <= 0:
        raise SchemaError("image size must be positive", "width/height", rid)
    group = raw["group"]
    if not isinstance(group, str) or not group:
        raise SchemaError("group must be a non-empty string", "group", rid)
    detections = _parse_objects(raw["detections"], "detections", rid, width, height,
                                bbox_format, diagnostics, with_score=True)
    gt = raw.get("ground_truth")
    if gt is not None:
        gt = _parse_objects(gt, "ground_truth", rid, width, height,
                            bbox_format, diagnostics, with_score=False)
    return ImageRecord(rid, width, height, group, detections, gt)


def dataset_from_dict(doc, source: str = "") -> Dataset:
    if not isinstance(doc, dict) or "images" not in doc:
        raise SchemaError("manifest must be an object with an 'images' array", "images")
    images = doc["images"]
    if not isinstance(images, list) or not images:
        raise SchemaError("'images' must be a non-empty array", "images")
    bbox_format = doc.get("bbox_format", "xywh")
    if bbox_format not in ("xywh", "xyxy"):
        raise SchemaError(f"unknown bbox_format {bbox_format!r}", "bbox_format")
    diagnostics: list[str] = []
    records = []
    seen = set()
    for i, raw in enumerate(images):
        rec = _parse_record(raw, i, bbox_format, diagnostics)
        if rec.id in seen:
            raise DuplicateIdError(rec.id)
        seen.add(rec.id)
        records.append(rec)
    for msg in diagnostics:
        logger.warning(msg)
    provenance = doc.get("provenance", source)
    return Dataset(tuple(records), str(provenance), tuple(diagnostics))


def parse_dataset(manifest_path) -> Dataset:
    path = Path(manifest_path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc})") from exc
    return dataset_from_dict(doc, source=str(path))


def _object_to_dict(obj) -> dict:
    out = {"bbox": [obj.box.x, obj.box.y, obj.box.w, obj.box.h]}
    if isinstance(obj, Detection):
        out["score"] = obj.score
    if obj.polygon is not None:
        out["polygon"] = [list(p) for p in obj.polygon]
    return out


def dataset_to_dict(ds: Dataset) -> dict:
    images = []
    for rec in ds.images:
        entry = {"id": rec.id, "width": rec.width, "height": rec.height, "group": rec.group}
        if rec.ground_truth is not None:
            entry["ground_truth"] = [_object_to_dict(o) for o in rec.ground_truth]
        entry["detections"] = [_object_to_dict(d) for d in rec.detections]
        images.append(entry)
    return {"provenance": ds.provenance, "images": images}


def write_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds), indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# feature matrix CSV

TARGET_NAMES = ("f1", "precision", "recall")


class Targets(NamedTuple):
    f1: float
    precision: float
    recall: float


@dataclass(frozen=True)
class FeatureRow:
    id: str
    features: "FeatureVector"
    targets: Optional[Targets] = None
    group: Optional[str] = None


def write_feature_matrix(rows: Iterable[FeatureRow], path) -> None:
    """Write rows as CSV: id, the feature columns, then optional targets and group.

    Floats are printed with ``repr`` so re-reading is bit-exact.
    """
    from .features import FEATURE_NAMES

    rows = list(rows)
    with_targets = bool(rows) and rows[0].targets is not None
    with_group = bool(rows) and rows[0].group is not None
    header = ["id", *FEATURE_NAMES]
    if with_targets:
        header += list(TARGET_NAMES)
    if with_group:
        header.append("group")
    lines = []
    for row in rows:
        if tuple(row.features.names) != FEATURE_NAMES:
            raise DataError(f"row {row.id!r}: feature names are not in canonical order")
        if (row.targets is not None) != with_targets or (row.group is not None) != with_group:
            raise DataError(f"row {row.id!r}: inconsistent row width")
        line = [row.id, *(repr(float(v)) for v in row.features.values)]
        if with_targets:
            line += [repr(float(v)) for v in row.targets]
        if with_group:
            line.append(row.group)
        lines.append(line)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(lines)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def read_feature_matrix(path) -> list[FeatureRow]:
    from .features import FEATURE_NAMES, FeatureVector

    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature matrix not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file, header row is mandatory") from None
        col = {name: i for i, name in enumerate(header)}
        if "id" not in col:
            raise SchemaError("header mismatch: missing column", "id")
        missing = [n for n in FEATURE_NAMES if n not in col]
        if missing:
            raise SchemaError(f"header mismatch: missing feature column(s) {missing}", missing[0])
        known = {"id", "group", *FEATURE_NAMES, *TARGET_NAMES}
        unknown = [n for n in header if n not in known]
        if unknown:
            raise SchemaError(f"header mismatch: unknown column(s) {unknown}", unknown[0])
        present_targets = [t for t in TARGET_NAMES if t in col]
        if present_targets and len(present_targets) != len(TARGET_NAMES):
            raise SchemaError("target columns f1, precision, recall must appear together",
                              present_targets[0])
        rows = []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                raise SchemaError(f"line {lineno}: expected {len(header)} cells, got {len(cells)}")
            rid = cells[col["id"]]

            def num(name):
                text = cells[col[name]]
                try:
                    return float(text)
                except ValueError:
                    raise SchemaError(f"non-numeric cell {text!r}", name, rid) from None

            features = FeatureVector([num(n) for n in FEATURE_NAMES])
            targets = Targets(*(num(t) for t in TARGET_NAMES)) if present_targets else None
            group = cells[col["group"]] if "group" in col else None
            rows.append(FeatureRow(rid, features, targets, group))
    return rows
