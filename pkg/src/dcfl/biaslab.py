"""Sample-bias statistics: quantity and quality of positives per gt
scale and angle bucket, for any assigner, plus a synthetic scene
generator to exercise the comparison without a dataset.

Quality uses the rotated IoU of the predicted box against the gt when a
prediction field is supplied, and degrades to the prior box otherwise;
the report header records which one it was.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assign import AssignmentResult, GtInstance, PredictionField
from .errors import CapacityError, ConfigError
from .geom import OBox, canonicalize, dataset_angle_deg, rotated_iou
from .priorfield import PriorField

DEFAULT_SCALE_EDGES = (2.0, 8.0, 16.0, 32.0, 64.0)
DEFAULT_ANGLE_EDGES = tuple(float(a) for a in range(0, 100, 10))


@dataclass(frozen=True)
class BucketStat:
    lo: float
    hi: float
    gt_count: int
    mean_positives: float
    std_positives: float
    zero_fraction: float
    mean_pt: float
    mean_iou: float

    def to_json_dict(self) -> dict:
        def jsonable(x):
            return None if not math.isfinite(x) else float(x)

        return {
            "lo": self.lo,
            "hi": self.hi,
            "gt_count": self.gt_count,
            "mean_positives": jsonable(self.mean_positives),
            "std_positives": jsonable(self.std_positives),
            "zero_fraction": jsonable(self.zero_fraction),
            "mean_pt": jsonable(self.mean_pt),
            "mean_iou": jsonable(self.mean_iou),
        }


@dataclass(frozen=True)
class BiasReport:
    quality_source: str  # "predicted" or "prior"
    scale: tuple[BucketStat, ...]
    angle: tuple[BucketStat, ...]
    note: str = ""

    def to_json_dict(self) -> dict:
        return {
            "meta": {"quality_source": self.quality_source, "note": self.note},
            "scale_buckets": [b.to_json_dict() for b in self.scale],
            "angle_buckets": [b.to_json_dict() for b in self.angle],
        }

    def to_csv(self) -> str:
        lines = [
            f"# quality_source={self.quality_source}"
            + (f" note={self.note}" if self.note else ""),
            "kind,lo,hi,gt_count,mean_positives,std_positives,zero_fraction,mean_pt,mean_iou",
        ]
        for kind, buckets in (("scale", self.scale), ("angle", self.angle)):
            for b in buckets:
                lines.append(
                    f"{kind},{b.lo:g},{b.hi:g},{b.gt_count},{b.mean_positives:.6g},"
                    f"{b.std_positives:.6g},{b.zero_fraction:.6g},{b.mean_pt:.6g},"
                    f"{b.mean_iou:.6g}"
                )
        return "\n".join(lines) + "\n"


def _aggregate(members: list[tuple[int, float, float]], lo: float, hi: float) -> BucketStat:
    """members: (positive count, mean pt, mean iou) per gt in the bucket."""
    if not members:
        return BucketStat(lo, hi, 0, math.nan, math.nan, math.nan, math.nan, math.nan)
    counts = np.array([m[0] for m in members], dtype=float)
    with_pos = [m for m in members if m[0] > 0]
    mean_pt = float(np.mean([m[1] for m in with_pos])) if with_pos else math.nan
    mean_iou = float(np.mean([m[2] for m in with_pos])) if with_pos else math.nan
    return BucketStat(
        lo,
        hi,
        len(members),
        float(counts.mean()),
        float(counts.std()),
        float(np.mean(counts == 0)),
        mean_pt,
        mean_iou,
    )


def _per_gt_stats(
    assignment: AssignmentResult,
    gts,
    priors: PriorField,
    predictions: PredictionField | None,
) -> list[tuple[GtInstance, int, float, float]]:
    """(gt, positive count, mean PT, mean IoU) rows for one scene."""
    rows = []
    for a, gt in zip(assignment.per_gt, gts):
        pts, ious = [], []
        for i in a.positives:
            if predictions is not None:
                box = predictions.box(i)
                score = float(predictions.scores[i, gt.class_id])
            else:
                box = priors.prior_box(i)
                score = 0.5
            iou = rotated_iou(box, gt.box)
            ious.append(iou)
            pts.append(0.5 * (score + iou))
        rows.append(
            (
                gt,
                len(a.positives),
                float(np.mean(pts)) if pts else math.nan,
                float(np.mean(ious)) if ious else math.nan,
            )
        )
    return rows


def _bucket_report(rows, quality_source: str, scale_edges, angle_edges) -> BiasReport:
    scale_edges = [float(e) for e in scale_edges]
    angle_edges = [float(e) for e in angle_edges]
    for name, edges in (("scale", scale_edges), ("angle", angle_edges)):
        if len(edges) < 2 or edges != sorted(edges):
            raise ConfigError(f"{name} edges must be ascending with >= 2 entries: {edges}")

    scale_members: list[list] = [[] for _ in range(len(scale_edges) - 1)]
    angle_members: list[list] = [[] for _ in range(len(angle_edges) - 1)]
    for gt, count, pt, iou in rows:
        size = gt.box.size
        si = int(np.searchsorted(scale_edges, size, side="right")) - 1
        if not (0 <= si < len(scale_members)) or size >= scale_edges[-1]:
            raise ConfigError(f"gt size {size:.3g} outside scale buckets {scale_edges}")
        ang = dataset_angle_deg(canonicalize(gt.box))
        ai = int(np.searchsorted(angle_edges, ang, side="left")) - 1
        if not (0 <= ai < len(angle_members)):
            raise ConfigError(f"gt angle {ang:.3g} outside angle buckets {angle_edges}")
        scale_members[si].append((count, pt, iou))
        angle_members[ai].append((count, pt, iou))

    scale = tuple(
        _aggregate(scale_members[i], scale_edges[i], scale_edges[i + 1])
        for i in range(len(scale_members))
    )
    angle = tuple(
        _aggregate(angle_members[i], angle_edges[i], angle_edges[i + 1])
        for i in range(len(angle_members))
    )
    return BiasReport(quality_source, scale, angle)


def bucket_stats(
    assignment: AssignmentResult,
    gts,
    priors: PriorField,
    predictions: PredictionField | None = None,
    scale_edges=DEFAULT_SCALE_EDGES,
    angle_edges=DEFAULT_ANGLE_EDGES,
) -> BiasReport:
    """Aggregate positive-sample quantity and quality per gt bucket.

    Scale buckets are half-open [lo, hi) over sqrt(w * h); angle buckets
    are half-open (lo, hi] over the dataset angle in (0, 90]. Every gt
    must fall inside some bucket of each kind.
    """
    rows = _per_gt_stats(assignment, gts, priors, predictions)
    source = "prior" if predictions is None else "predicted"
    return _bucket_report(rows, source, scale_edges, angle_edges)


def bucket_stats_corpus(
    entries,
    scale_edges=DEFAULT_SCALE_EDGES,
    angle_edges=DEFAULT_ANGLE_EDGES,
) -> BiasReport:
    """Pooled :func:`bucket_stats` over (assignment, gts, priors,
    predictions) tuples from many scenes."""
    rows = []
    any_predicted = False
    for assignment, gts, priors, predictions in entries:
        any_predicted = any_predicted or predictions is not None
        rows.extend(_per_gt_stats(assignment, gts, priors, predictions))
    return _bucket_report(
        rows, "predicted" if any_predicted else "prior", scale_edges, angle_edges
    )


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a random non-overlapping scene, deterministic per seed."""

    image_size: tuple[float, float] = (1600.0, 1600.0)
    counts: tuple[int, ...] = (100, 100, 100)
    size_ranges: tuple[tuple[float, float], ...] = ((4.0, 4.0), (16.0, 16.0), (64.0, 64.0))
    aspect_range: tuple[float, float] = (1.0, 1.0)  # h/w in (0, 1]
    angle_range_deg: tuple[float, float] = (0.0, 90.0)
    seed: int = 0
    max_pair_iou: float = 0.05
    make_predictions: bool = False

    def __post_init__(self):
        if len(self.counts) != len(self.size_ranges):
            raise ConfigError("counts and size_ranges must have equal length")
        for lo, hi in self.size_ranges:
            if not 0 < lo <= hi:
                raise ConfigError(f"bad size range ({lo}, {hi})")
        lo, hi = self.aspect_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"aspect range must sit in (0, 1], got {self.aspect_range}")


_MAX_PLACEMENT_ATTEMPTS = 100_000


def synth_scene(
    spec: SceneSpec, priors: PriorField | None = None
) -> tuple[list[GtInstance], PredictionField | None]:
    """Random gts by rejection sampling (pairwise IoU < spec.max_pair_iou).

    Class id is the scale-class index. When ``spec.make_predictions`` is
    set and a prior field is supplied, a synthetic prediction field is
    returned whose confidence grows with gt size, a stress stand-in for
    the posterior-confidence pattern of trained detectors.
    """
    rng = np.random.default_rng(spec.seed)
    img_w, img_h = spec.image_size
    gts: list[GtInstance] = []
    attempts = 0
    for class_id, (count, (lo, hi)) in enumerate(zip(spec.counts, spec.size_ranges)):
        placed = 0
        while placed < count:
            attempts += 1
            if attempts > _MAX_PLACEMENT_ATTEMPTS:
                raise CapacityError(
                    f"could not place {sum(spec.counts)} objects in "
                    f"{img_w}x{img_h} after {_MAX_PLACEMENT_ATTEMPTS} attempts"
                )
            size = rng.uniform(lo, hi)
            aspect = rng.uniform(*spec.aspect_range)
            w = size / math.sqrt(aspect)
            h = size * math.sqrt(aspect)
            angle = rng.uniform(*spec.angle_range_deg)
            theta = math.radians(angle) - math.pi / 2.0
            margin = 0.5 * math.hypot(w, h)
            if 2 * margin >= min(img_w, img_h):
                raise CapacityError(f"object of size {size} does not fit the image")
            box = canonicalize(
                OBox(
                    rng.uniform(margin, img_w - margin),
                    rng.uniform(margin, img_h - margin),
                    w,
                    h,
                    theta,
                )
            )
            if any(rotated_iou(box, g.box) >= spec.max_pair_iou for g in gts):
                continue
            gts.append(GtInstance(box, class_id))
            placed += 1

    predictions = None
    if spec.make_predictions and priors is not None:
        predictions = synth_predictions(priors, gts, len(spec.counts), seed=spec.seed + 1)
    return gts, predictions


def synth_predictions(
    priors: PriorField, gts, num_classes: int, seed: int = 0
) -> PredictionField:
    """Synthetic detector output with size-correlated confidence.

    Each prior predicts a jittered copy of its nearest gt's box; the score
    of that gt's class scales with the gt size (clipped to [0.05, 0.95]).
    """
    rng = np.random.default_rng(seed)
    n = priors.num_priors
    scores = np.full((n, num_classes), 0.02)
    boxes = priors.boxes_array()
    if gts:
        centers = np.array([(g.box.cx, g.box.cy) for g in gts])
        d = np.hypot(
            priors.locations[:, 0, None] - centers[None, :, 0],
            priors.locations[:, 1, None] - centers[None, :, 1],
        )
        nearest = d.argmin(axis=1)
        for i in range(n):
            g = gts[int(nearest[i])]
            conf = float(np.clip(g.box.size / 64.0, 0.05, 0.95))
            scores[i, g.class_id] = conf
            jitter = rng.normal(0.0, g.box.size / 8.0, 2)
            boxes[i] = (
                g.box.cx + jitter[0],
                g.box.cy + jitter[1],
                g.box.w,
                g.box.h,
                g.box.theta + rng.normal(0.0, 0.05),
            )
    return PredictionField(scores, boxes)


def standard_scene(seed: int = 0) -> SceneSpec:
    """The reference bias scene: 100 square gts each of side 4, 16, 64 px
    on a 1600 x 1600 canvas, angles uniform over (0, 90] degrees."""
    return SceneSpec(seed=seed)
