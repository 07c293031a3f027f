"""Coarse-to-fine label assignment, plus a max-IoU baseline assigner.

The pipeline per image: tile priors, optionally shift them with an offset
field, screen the top-K priors per gt by GJSD (coarse candidates), re-rank
those by prediction quality and keep the top Q (medium candidates), then
gate the survivors with a per-gt two-component Gaussian mixture. Every gt
ends up with at least one positive prior; the max-IoU baseline
deliberately lacks that guarantee, which is the bias the stats tooling
measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .gaussianstat import dgmm_build, dgmm_eval_many, gaussian_from_box, gjsd_matrix
from .geom import OBox, iou_matrix, rotated_iou
from .priorfield import OffsetField, PriorField, build_prior_field, update_priors

DEFAULT_STRIDES = (8.0, 16.0, 32.0, 64.0, 128.0)


@dataclass(frozen=True)
class GtInstance:
    """One annotated object: box, class id, and a difficulty flag.

    Difficult instances take part in assignment but are flagged through to
    the output so downstream consumers can filter them.
    """

    box: OBox
    class_id: int
    difficulty: int = 0

    def __post_init__(self):
        if self.class_id < 0:
            raise ConfigError(f"class_id must be >= 0, got {self.class_id}")
        if self.difficulty not in (0, 1):
            raise ConfigError(f"difficulty must be 0 or 1, got {self.difficulty}")


@dataclass(frozen=True)
class PredictionField:
    """Per-prior detector outputs: class scores in [0, 1] and a box each."""

    scores: np.ndarray  # (N, C)
    boxes: np.ndarray  # (N, 5) rows (cx, cy, w, h, theta)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        boxes = np.asarray(self.boxes, dtype=float)
        if scores.ndim != 2:
            raise ShapeError(f"scores must be (num_priors, num_classes), got {scores.shape}")
        if boxes.ndim != 2 or boxes.shape[1] != 5:
            raise ShapeError(f"boxes must be (num_priors, 5), got {boxes.shape}")
        if boxes.shape[0] != scores.shape[0]:
            raise ShapeError(
                f"scores cover {scores.shape[0]} priors, boxes {boxes.shape[0]}"
            )
        if not np.all(np.isfinite(scores)) or scores.min(initial=0.0) < 0.0 or scores.max(initial=0.0) > 1.0:
            raise ShapeError("scores must be finite and within [0, 1]")
        if not np.all(np.isfinite(boxes)) or np.any(boxes[:, 2:4] <= 0):
            raise ShapeError("predicted boxes must be finite with positive extents")
        scores.flags.writeable = False
        boxes.flags.writeable = False
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "boxes", boxes)

    @property
    def num_priors(self) -> int:
        return self.scores.shape[0]

    def box(self, index: int) -> OBox:
        cx, cy, w, h, t = self.boxes[index]
        return OBox(cx, cy, w, h, t)


def uniform_predictions(priors: PriorField, num_classes: int = 1) -> PredictionField:
    """Neutral predictions: every class scores 0.5, boxes = prior boxes.

    Used when no detector output is available; turns the posterior
    re-ranking into a pure prior-geometry ranking.
    """
    scores = np.full((priors.num_priors, num_classes), 0.5)
    return PredictionField(scores, priors.boxes_array())


@dataclass(frozen=True)
class DcflConfig:
    """Assignment parameters with the ablation-best defaults."""

    k: int = 16
    q: int = 12
    g: float = 0.8
    w1: float = 0.7
    alpha: float = 0.5
    strides: tuple[float, ...] = DEFAULT_STRIDES
    scale_factor: float = 4.0
    n_offsets: int = 9

    def __post_init__(self):
        if self.k < 1 or self.q < 1:
            raise ConfigError(f"k and q must be >= 1, got k={self.k}, q={self.q}")
        if self.q > self.k:
            raise ConfigError(f"q must not exceed k, got k={self.k}, q={self.q}")
        if not self.g > 0:
            raise ConfigError(f"g must be positive, got {self.g}")
        if not 0.0 < self.w1 < 1.0:
            raise ConfigError(f"w1 must be in (0, 1), got {self.w1}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        strides = tuple(float(s) for s in self.strides)
        if not strides or any(s <= 0 for s in strides) or list(strides) != sorted(strides):
            raise ConfigError(f"strides must be positive ascending, got {self.strides}")
        object.__setattr__(self, "strides", strides)
        if self.scale_factor <= 0:
            raise ConfigError(f"scale_factor must be positive, got {self.scale_factor}")
        if self.n_offsets < 1:
            raise ConfigError(f"n_offsets must be >= 1, got {self.n_offsets}")


@dataclass(frozen=True)
class GtAssignment:
    """Sample sets of one gt: coarse, medium, and final positive priors.

    ``dgmm_scores`` and ``gjsd`` align with ``positives``; they are None
    for assigners that have no mixture-gating stage (the max-IoU baseline).
    """

    gt_index: int
    cps: tuple[int, ...]
    mps: tuple[int, ...]
    positives: tuple[int, ...]
    dgmm_scores: tuple[float, ...] | None = None
    gjsd: tuple[float, ...] | None = None


@dataclass(frozen=True)
class AssignmentResult:
    """Per-prior labels (-1 negative, else gt index) and per-gt sample sets."""

    labels: np.ndarray
    per_gt: tuple[GtAssignment, ...]

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.int64)
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def num_positives(self) -> int:
        return int(np.count_nonzero(self.labels >= 0))


def prior_gt_gjsd(priors: PriorField, gts, alpha: float = 0.5) -> np.ndarray:
    """(num_priors, num_gts) GJSD between prior and gt Gaussians.

    Chunked over gts to bound the broadcast temporaries on dense scenes.
    """
    n = priors.num_priors
    m = len(gts)
    out = np.empty((n, m))
    if m == 0:
        return out
    var = 0.25 * priors.sides**2
    sig_p = np.zeros((n, 2, 2))
    sig_p[:, 0, 0] = var
    sig_p[:, 1, 1] = var
    gt_gauss = [gaussian_from_box(g.box) for g in gts]
    mus_g = np.array([g.mu for g in gt_gauss])
    sig_g = np.array([g.sigma for g in gt_gauss])
    chunk = max(1, int(2e6 // max(n, 1)))
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        out[:, start:stop] = gjsd_matrix(
            priors.locations, sig_p, mus_g[start:stop], sig_g[start:stop], alpha
        )
    return out


def select_cps(
    priors: PriorField,
    gts,
    k: int,
    alpha: float = 0.5,
    scores: np.ndarray | None = None,
) -> list[tuple[int, ...]]:
    """Per gt, the k priors with smallest GJSD across all levels.

    Ties break toward the lower flat prior index; when fewer than k priors
    exist, all are selected. ``scores`` lets callers reuse a precomputed
    GJSD matrix.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if scores is None:
        scores = prior_gt_gjsd(priors, gts, alpha)
    out = []
    for j in range(len(gts)):
        order = np.argsort(scores[:, j], kind="stable")
        out.append(tuple(int(i) for i in order[:k]))
    return out


def pt_score(class_scores, box: OBox, gt: GtInstance) -> float:
    """Chance of this prediction becoming a true positive for the gt:
    the even blend of its class confidence and its location overlap."""
    scores = np.asarray(class_scores, dtype=float)
    if gt.class_id >= scores.shape[0]:
        raise ShapeError(
            f"class_id {gt.class_id} out of range for {scores.shape[0]} classes"
        )
    return 0.5 * (float(scores[gt.class_id]) + rotated_iou(box, gt.box))


def select_mps(
    cps: list[tuple[int, ...]],
    predictions: PredictionField,
    gts,
    q: int,
) -> list[tuple[int, ...]]:
    """Per gt, the q coarse candidates with the highest PT score.

    Ties break toward the lower flat prior index.
    """
    if q < 1:
        raise ConfigError(f"q must be >= 1, got {q}")
    out = []
    for gt, cand in zip(gts, cps):
        pts = {
            i: pt_score(predictions.scores[i], predictions.box(i), gt) for i in cand
        }
        ranked = sorted(cand, key=lambda i: (-pts[i], i))
        out.append(tuple(ranked[:q]))
    return out


def finalize_labels(
    mps: list[tuple[int, ...]],
    priors: PriorField,
    gts,
    config: DcflConfig,
    cps: list[tuple[int, ...]] | None = None,
    gjsd_scores: np.ndarray | None = None,
) -> AssignmentResult:
    """Mixture-gate the medium candidates into final positives.

    Per gt: the semantic center is the mean of its candidate locations;
    candidates scoring below exp(-g) under the gt's mixture are dropped,
    with the single best kept as a fallback when all fall below. Priors
    claimed by several gts go to the smallest-GJSD claimant (ties to the
    lower gt index); a gt stripped empty by that resolution reclaims its
    best still-unassigned candidate.
    """
    if cps is None:
        cps = mps
    if gjsd_scores is None:
        gjsd_scores = prior_gt_gjsd(priors, gts, config.alpha)
    threshold = math.exp(-config.g)
    labels = np.full(priors.num_priors, -1, dtype=np.int64)

    mps_scores: list[np.ndarray] = []
    claims: dict[int, list[int]] = {}
    for j, gt in enumerate(gts):
        idx = np.asarray(mps[j], dtype=int)
        if idx.size == 0:
            mps_scores.append(np.zeros(0))
            continue
        semantic_center = priors.locations[idx].mean(axis=0)
        model = dgmm_build(gt.box, semantic_center, config.w1)
        vals = dgmm_eval_many(model, priors.locations[idx])
        mps_scores.append(vals)
        passing = idx[vals >= threshold]
        if passing.size == 0:
            # keep the gt supervised: fall back to its single best candidate
            best = idx[np.lexsort((idx, -vals))[0]]
            passing = np.array([best])
        for i in passing:
            claims.setdefault(int(i), []).append(j)

    for i, claimants in claims.items():
        winner = min(claimants, key=lambda j: (gjsd_scores[i, j], j))
        labels[i] = winner

    positives: list[list[int]] = [[] for _ in gts]
    for i in claims:
        positives[int(labels[i])].append(i)

    for j in range(len(gts)):
        if positives[j] or not len(mps[j]):
            continue
        # conflict resolution emptied this gt: reclaim its best unassigned
        # candidate, or failing that take one from an owner that keeps >= 2
        idx = np.asarray(mps[j], dtype=int)
        vals = mps_scores[j]
        free = labels[idx] < 0
        if not free.any():
            spare = np.array([len(positives[int(labels[i])]) >= 2 for i in idx])
            if not spare.any():
                continue
            idx, vals = idx[spare], vals[spare]
        else:
            idx, vals = idx[free], vals[free]
        best = int(idx[np.lexsort((idx, -vals))[0]])
        owner = int(labels[best])
        if owner >= 0:
            positives[owner].remove(best)
        labels[best] = j
        positives[j].append(best)

    per_gt = []
    for j in range(len(gts)):
        pos = tuple(sorted(positives[j]))
        idx = list(mps[j])
        val_by_prior = {int(i): float(v) for i, v in zip(idx, mps_scores[j])}
        per_gt.append(
            GtAssignment(
                gt_index=j,
                cps=tuple(cps[j]),
                mps=tuple(mps[j]),
                positives=pos,
                dgmm_scores=tuple(val_by_prior[i] for i in pos),
                gjsd=tuple(float(gjsd_scores[i, j]) for i in pos),
            )
        )
    return AssignmentResult(labels, tuple(per_gt))


def assign(
    image_size: tuple[float, float],
    gts,
    config: DcflConfig = DcflConfig(),
    offsets: OffsetField | None = None,
    predictions: PredictionField | None = None,
) -> AssignmentResult:
    """Full pipeline: tile priors, update, screen, re-rank, gate.

    ``offsets=None`` keeps the static grid; ``predictions=None`` uses the
    neutral field (all scores 0.5, boxes = prior boxes). Deterministic for
    identical inputs.
    """
    field = build_prior_field(image_size[0], image_size[1], config.strides, config.scale_factor)
    if offsets is not None:
        field = update_priors(field, offsets)
    if predictions is None:
        num_classes = max((gt.class_id for gt in gts), default=0) + 1
        predictions = uniform_predictions(field, num_classes)
    elif predictions.num_priors != field.num_priors:
        raise ShapeError(
            f"predictions cover {predictions.num_priors} priors, field has {field.num_priors}"
        )
    if not gts:
        return AssignmentResult(np.full(field.num_priors, -1, dtype=np.int64), ())
    scores = prior_gt_gjsd(field, gts, config.alpha)
    cps = select_cps(field, gts, config.k, config.alpha, scores=scores)
    mps = select_mps(cps, predictions, gts, config.q)
    return finalize_labels(mps, field, gts, config, cps=cps, gjsd_scores=scores)


def maxiou_assign(
    priors: PriorField,
    gts,
    pos_thr: float = 0.5,
    neg_thr: float = 0.4,
) -> AssignmentResult:
    """RetinaNet-style baseline: positive iff best IoU >= pos_thr.

    Gts can end up with zero positives; that shortfall for tiny objects is
    exactly what the bias statistics measure. Priors between the two
    thresholds, ordinarily down-weighted in training, count as negative
    here since only positives feed the statistics.
    """
    if not 0.0 <= neg_thr <= pos_thr <= 1.0:
        raise ConfigError(
            f"need 0 <= neg_thr <= pos_thr <= 1, got neg={neg_thr}, pos={pos_thr}"
        )
    labels = np.full(priors.num_priors, -1, dtype=np.int64)
    if not gts:
        return AssignmentResult(labels, ())
    prior_boxes = [priors.prior_box(i) for i in range(priors.num_priors)]
    ious = iou_matrix(prior_boxes, [gt.box for gt in gts])
    best = ious.argmax(axis=1)  # first max wins: lowest gt index on ties
    best_iou = ious[np.arange(priors.num_priors), best]
    hit = best_iou >= pos_thr
    labels[hit] = best[hit]
    positives: list[list[int]] = [[] for _ in gts]
    for i in np.nonzero(hit)[0]:
        positives[int(best[i])].append(int(i))
    per_gt = tuple(
        GtAssignment(
            gt_index=j,
            cps=tuple(positives[j]),
            mps=tuple(positives[j]),
            positives=tuple(positives[j]),
        )
        for j in range(len(gts))
    )
    return AssignmentResult(labels, per_gt)


def labels_rle(labels: np.ndarray) -> list[list[int]]:
    """Run-length encode a label array as [value, run] pairs."""
    runs: list[list[int]] = []
    for v in np.asarray(labels).tolist():
        if runs and runs[-1][0] == v:
            runs[-1][1] += 1
        else:
            runs.append([int(v), 1])
    return runs


def labels_from_rle(runs, num_priors: int | None = None) -> np.ndarray:
    """Inverse of :func:`labels_rle`."""
    parts = [np.full(count, value, dtype=np.int64) for value, count in runs]
    labels = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    if num_priors is not None and labels.shape[0] != num_priors:
        raise ShapeError(f"RLE decodes to {labels.shape[0]} labels, expected {num_priors}")
    return labels


def assignment_to_dict(result: AssignmentResult, config: DcflConfig) -> dict:
    """JSON-ready view with stable key order, labels run-length encoded."""
    return {
        "config": {
            "k": config.k,
            "q": config.q,
            "g": config.g,
            "w1": config.w1,
            "alpha": config.alpha,
            "strides": list(config.strides),
            "scale_factor": config.scale_factor,
            "n_offsets": config.n_offsets,
        },
        "num_priors": int(result.labels.shape[0]),
        "per_gt": [
            {
                "gt_index": a.gt_index,
                "cps": list(a.cps),
                "mps": list(a.mps),
                "positives": list(a.positives),
                "dgmm_scores": None if a.dgmm_scores is None else list(a.dgmm_scores),
                "gjsd": None if a.gjsd is None else list(a.gjsd),
            }
            for a in result.per_gt
        ],
        "per_prior_labels": {"encoding": "rle", "runs": labels_rle(result.labels)},
    }
