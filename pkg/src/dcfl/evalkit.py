"""Rotated-box detection evaluation: greedy matching, interpolated AP,
and size-bucketed reports.

Matching is per class and per image, one-to-one, highest IoU first.
Difficulty-flagged gts act as ignore regions: they are not counted in the
gt total and detections landing on them are excluded from the FP count.
Scale buckets reuse the same machinery by treating out-of-bucket gts as
ignore regions too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assign import GtInstance
from .geom import OBox, iou_matrix

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_BUCKET_EDGES = (2.0, 8.0, 16.0, 32.0, 64.0)
_BUCKET_NAMES = {4: ("vt", "t", "s", "m")}

TP, FP, IGNORED = 1, 0, -1


@dataclass(frozen=True)
class Detection:
    box: OBox
    class_id: int
    confidence: float
    image_id: str = ""

    def __post_init__(self):
        if not math.isfinite(self.confidence):
            raise ValueError(f"confidence must be finite, got {self.confidence}")


def match_detections(dets, gts, iou_thr: float, ignore=None) -> np.ndarray:
    """Greedy one-to-one matching for a single class and image.

    Returns one flag per detection in input order: 1 TP, 0 FP, -1 ignored.
    Detections are processed in descending confidence (ties by input
    index); each takes the unmatched non-ignore gt of highest IoU >= thr,
    ties toward the lower gt index. A detection whose only >= thr overlap
    is an ignore gt is flagged ignored rather than FP.
    """
    flags = np.zeros(len(dets), dtype=np.int64)
    if not dets:
        return flags
    if ignore is None:
        ignore = [bool(g.difficulty) for g in gts]
    ious = iou_matrix([d.box for d in dets], [g.box for g in gts])
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    taken = [False] * len(gts)
    for i in order:
        best_j = -1
        best_iou = iou_thr
        for j in range(len(gts)):
            if ignore[j] or taken[j]:
                continue
            if ious[i, j] > best_iou or (best_j < 0 and ious[i, j] >= iou_thr):
                best_j = j
                best_iou = ious[i, j]
        if best_j >= 0:
            taken[best_j] = True
            flags[i] = TP
            continue
        on_ignore = any(
            ignore[j] and ious[i, j] >= iou_thr for j in range(len(gts))
        )
        flags[i] = IGNORED if on_ignore else FP
    return flags


def average_precision(confidences, flags, n_gt: int) -> float:
    """101-point interpolated AP from matching flags.

    Ignored detections are dropped. Returns NaN when there is no gt to
    recall (the sentinel excluded from report means).
    """
    if n_gt < 0:
        raise ValueError(f"gt count must be >= 0, got {n_gt}")
    if n_gt == 0:
        return math.nan
    confidences = np.asarray(confidences, dtype=float)
    flags = np.asarray(flags, dtype=np.int64)
    keep = flags >= 0
    confidences = confidences[keep]
    flags = flags[keep]
    if flags.size == 0:
        return 0.0
    order = np.lexsort((np.arange(flags.size), -confidences))
    tp = np.cumsum(flags[order] == TP)
    fp = np.cumsum(flags[order] == FP)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    for i in range(precision.size - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    samples = np.searchsorted(recall, np.linspace(0.0, 1.0, 101), side="left")
    picked = np.where(samples < precision.size, precision[np.minimum(samples, precision.size - 1)], 0.0)
    return float(picked.mean())


@dataclass(frozen=True)
class BucketSpec:
    name: str
    lo: float
    hi: float


@dataclass(frozen=True)
class EvalReport:
    """AP per class and IoU threshold, plus size-bucketed summaries.

    ``ap`` has shape (num_classes, num_thresholds); NaN marks classes with
    nothing to recall, excluded from every mean.
    """

    class_names: tuple[str, ...]
    iou_thresholds: tuple[float, ...]
    ap: np.ndarray
    buckets: tuple[BucketSpec, ...]
    bucket_ap: tuple[float, ...]

    @property
    def map_per_threshold(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.nanmean(self.ap, axis=0)

    @property
    def mean_ap(self) -> float:
        finite = self.ap[np.isfinite(self.ap)]
        return float(finite.mean()) if finite.size else math.nan

    def to_json_dict(self) -> dict:
        def jsonable(x):
            return None if (x is None or not math.isfinite(x)) else float(x)

        thr_keys = [f"{t:.2f}" for t in self.iou_thresholds]
        per_thr = self.map_per_threshold
        return {
            "iou_thresholds": list(self.iou_thresholds),
            "classes": list(self.class_names),
            "ap_per_class": {
                name: {k: jsonable(v) for k, v in zip(thr_keys, row)}
                for name, row in zip(self.class_names, self.ap)
            },
            "map_per_threshold": {k: jsonable(v) for k, v in zip(thr_keys, per_thr)},
            "map": jsonable(self.mean_ap),
            "buckets": [
                {"name": b.name, "lo": b.lo, "hi": b.hi, "ap": jsonable(v)}
                for b, v in zip(self.buckets, self.bucket_ap)
            ],
        }


def bucket_specs(edges) -> tuple[BucketSpec, ...]:
    edges = [float(e) for e in edges]
    if len(edges) < 2 or edges != sorted(edges):
        raise ValueError(f"bucket edges must be ascending with >= 2 entries, got {edges}")
    names = _BUCKET_NAMES.get(len(edges) - 1)
    out = []
    for i in range(len(edges) - 1):
        name = names[i] if names else f"{edges[i]:g}-{edges[i + 1]:g}"
        out.append(BucketSpec(name, edges[i], edges[i + 1]))
    return tuple(out)


def _class_ap(dets, gts, iou_thr: float, ignore_fn) -> float:
    """AP for one class at one threshold; gts/dets grouped per image."""
    confidences: list[float] = []
    flags: list[int] = []
    n_gt = 0
    images = sorted(set(d.image_id for d in dets) | set(g[0] for g in gts))
    gts_by_img: dict[str, list[GtInstance]] = {}
    for img, g in gts:
        gts_by_img.setdefault(img, []).append(g)
    for img in images:
        img_gts = gts_by_img.get(img, [])
        img_dets = [d for d in dets if d.image_id == img]
        ignore = [ignore_fn(g) for g in img_gts]
        n_gt += sum(1 for g, ig in zip(img_gts, ignore) if not ig)
        f = match_detections(img_dets, img_gts, iou_thr, ignore=ignore)
        confidences.extend(d.confidence for d in img_dets)
        flags.extend(f.tolist())
    return average_precision(confidences, flags, n_gt)


def scale_bucketed_ap(
    dets,
    gts,
    class_names,
    iou_thresholds=DEFAULT_IOU_THRESHOLDS,
    bucket_edges=DEFAULT_BUCKET_EDGES,
) -> EvalReport:
    """Evaluate detections against gts, overall and per size bucket.

    ``gts`` is a list of (image_id, GtInstance); gt size is sqrt(w * h)
    with half-open buckets [lo, hi). Out-of-bucket gts are ignored, not
    penalized: detections matched to them vanish from the FP count.
    """
    iou_thresholds = tuple(float(t) for t in iou_thresholds)
    buckets = bucket_specs(bucket_edges)
    n_cls = len(class_names)
    ap = np.full((n_cls, len(iou_thresholds)), math.nan)
    bucket_cells = np.full((len(buckets), n_cls, len(iou_thresholds)), math.nan)

    for ci in range(n_cls):
        cls_dets = sorted(
            (d for d in dets if d.class_id == ci),
            key=lambda d: (d.image_id,),
        )
        cls_gts = [(img, g) for img, g in gts if g.class_id == ci]
        for ti, thr in enumerate(iou_thresholds):
            ap[ci, ti] = _class_ap(
                cls_dets, cls_gts, thr, ignore_fn=lambda g: bool(g.difficulty)
            )
            for bi, bucket in enumerate(buckets):
                def out_of_bucket(g, lo=bucket.lo, hi=bucket.hi):
                    return bool(g.difficulty) or not (lo <= g.box.size < hi)

                bucket_cells[bi, ci, ti] = _class_ap(cls_dets, cls_gts, thr, out_of_bucket)

    with np.errstate(invalid="ignore"):
        bucket_ap = tuple(
            float(np.nanmean(cell)) if np.isfinite(cell).any() else math.nan
            for cell in bucket_cells
        )
    return EvalReport(tuple(class_names), iou_thresholds, ap, buckets, bucket_ap)
