"""Multi-level grids of prior locations and the dynamic update rule.

One square prior sits at the center of every feature cell of every
pyramid level; an offset field (normally produced by the detector's
offset-prediction branch, or synthesized here for experiments) shifts
each prior location by ``stride * sum(offsets) / (2 n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .geom import OBox


@dataclass(frozen=True)
class PriorLevel:
    stride: float
    rows: int
    cols: int
    prior_side: float


@dataclass(frozen=True)
class PriorField:
    """Flat view of all priors, ordered by (level, row-major grid index)."""

    levels: tuple[PriorLevel, ...]
    locations: np.ndarray  # (N, 2) centers in image pixels
    level_ids: np.ndarray  # (N,) index into levels
    grid_indices: np.ndarray  # (N,) row-major cell index within the level

    def __post_init__(self):
        for name in ("locations", "level_ids", "grid_indices"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    @property
    def num_priors(self) -> int:
        return self.locations.shape[0]

    @property
    def strides(self) -> np.ndarray:
        """Per-prior stride, shape (N,)."""
        table = np.array([lv.stride for lv in self.levels])
        return table[self.level_ids]

    @property
    def sides(self) -> np.ndarray:
        """Per-prior square side length, shape (N,)."""
        table = np.array([lv.prior_side for lv in self.levels])
        return table[self.level_ids]

    def prior_box(self, index: int) -> OBox:
        side = self.levels[self.level_ids[index]].prior_side
        x, y = self.locations[index]
        return OBox(x, y, side, side, 0.0)

    def boxes_array(self) -> np.ndarray:
        """(N, 5) array of (cx, cy, w, h, theta) rows."""
        sides = self.sides
        out = np.zeros((self.num_priors, 5))
        out[:, :2] = self.locations
        out[:, 2] = sides
        out[:, 3] = sides
        return out


@dataclass(frozen=True)
class OffsetField:
    """Per-prior offset vectors, shape (num_priors, n, 2).

    Offsets are in feature-cell units; the update rule multiplies by the
    level stride.
    """

    offsets: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.offsets, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ShapeError(f"offsets must have shape (num_priors, n, 2), got {arr.shape}")
        if arr.shape[1] < 1:
            raise ShapeError("offset count n must be >= 1")
        if not np.all(np.isfinite(arr)):
            raise ShapeError("offsets must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "offsets", arr)

    @property
    def n(self) -> int:
        return self.offsets.shape[1]


def build_prior_field(
    image_w: float,
    image_h: float,
    strides: tuple[float, ...] = (8.0, 16.0, 32.0, 64.0, 128.0),
    scale_factor: float = 4.0,
) -> PriorField:
    """Tile one square prior per feature point of every level.

    Cell (r, c) at stride st gets its prior at ((c + 0.5) st, (r + 0.5) st)
    with side st * scale_factor; grid extents are ceil(image / st).
    """
    if image_w <= 0 or image_h <= 0:
        raise ConfigError(f"image size must be positive, got {image_w}x{image_h}")
    if not strides:
        raise ConfigError("strides must be non-empty")
    if any(s <= 0 for s in strides) or list(strides) != sorted(strides):
        raise ConfigError(f"strides must be positive and ascending, got {strides}")
    if scale_factor <= 0:
        raise ConfigError(f"scale_factor must be positive, got {scale_factor}")

    levels = []
    locs = []
    level_ids = []
    grid_ids = []
    for li, st in enumerate(strides):
        rows = math.ceil(image_h / st)
        cols = math.ceil(image_w / st)
        levels.append(PriorLevel(float(st), rows, cols, float(st) * float(scale_factor)))
        cs, rs = np.meshgrid(np.arange(cols), np.arange(rows))
        xy = np.stack([(cs.ravel() + 0.5) * st, (rs.ravel() + 0.5) * st], axis=1)
        locs.append(xy.astype(float))
        level_ids.append(np.full(rows * cols, li, dtype=np.int64))
        grid_ids.append(np.arange(rows * cols, dtype=np.int64))
    return PriorField(
        tuple(levels),
        np.concatenate(locs, axis=0),
        np.concatenate(level_ids),
        np.concatenate(grid_ids),
    )


def update_priors(field: PriorField, offsets: OffsetField) -> PriorField:
    """Shift each prior by stride * sum(offsets) / (2 n).

    Shapes and level structure are unchanged; zero offsets return an
    identical field. Updated priors may leave the image bounds; they are
    deliberately not clamped.
    """
    arr = offsets.offsets
    if arr.shape[0] != field.num_priors:
        raise ShapeError(
            f"offset field covers {arr.shape[0]} priors, field has {field.num_priors}"
        )
    shift = field.strides[:, None] * arr.sum(axis=1) / (2.0 * offsets.n)
    return PriorField(
        field.levels,
        field.locations + shift,
        field.level_ids.copy(),
        field.grid_indices.copy(),
    )


def synth_offsets_toward_gt(field: PriorField, gts, gain: float) -> OffsetField:
    """Single offset per prior pointing at the nearest gt center.

    Magnitude is gain * min(distance / stride, 1); a stand-in for learned
    offsets so the dynamic-prior effect can be exercised without any
    network. ``gts`` is a list of OBox or of objects with a ``box`` field.
    """
    if gain < 0:
        raise ConfigError(f"gain must be >= 0, got {gain}")
    out = np.zeros((field.num_priors, 1, 2))
    boxes = [g if isinstance(g, OBox) else g.box for g in gts]
    if gain == 0 or not boxes:
        return OffsetField(out)
    centers = np.array([(b.cx, b.cy) for b in boxes])
    delta = centers[None, :, :] - field.locations[:, None, :]
    dist = np.hypot(delta[:, :, 0], delta[:, :, 1])
    nearest = dist.argmin(axis=1)
    pick = np.arange(field.num_priors)
    d = dist[pick, nearest]
    vec = delta[pick, nearest]
    nonzero = d > 0
    unit = np.zeros_like(vec)
    unit[nonzero] = vec[nonzero] / d[nonzero, None]
    mag = gain * np.minimum(d / field.strides, 1.0)
    out[:, 0, :] = unit * mag[:, None]
    return OffsetField(out)
