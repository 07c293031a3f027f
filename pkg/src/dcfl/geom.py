"""Rotated-box geometry: canonical forms, quad conversion, exact and
Monte-Carlo IoU.

All types are immutable values and all operations are pure functions, so
everything here is safe to use from concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidBoxError, InvalidQuadError

_HALF_PI = math.pi / 2.0

Point = tuple[float, float]


@dataclass(frozen=True)
class OBox:
    """Oriented rectangle: center (cx, cy), extents (w, h), rotation theta.

    Lengths are in pixels, theta in radians (counter-clockwise). Extents
    must be positive and finite. The canonical form (long edge first,
    theta in [-pi/2, pi/2)) is produced by :func:`canonicalize`; it is not
    enforced at construction so that raw dataset boxes can be represented.
    """

    cx: float
    cy: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h", "theta"):
            try:
                value = float(getattr(self, name))
            except (TypeError, ValueError) as exc:
                raise InvalidBoxError(f"box field {name} is not a number") from exc
            if not math.isfinite(value):
                raise InvalidBoxError(f"box field {name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.w <= 0.0 or self.h <= 0.0:
            raise InvalidBoxError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def size(self) -> float:
        """Absolute size sqrt(w*h), the scale-bucketing measure."""
        return math.sqrt(self.w * self.h)

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h, self.theta)


@dataclass(frozen=True)
class Quad:
    """Convex quadrilateral with vertices in counter-clockwise order.

    Counter-clockwise means positive shoelace area in the (x right, y up)
    orientation used throughout.
    """

    pts: tuple[Point, Point, Point, Point]

    def __post_init__(self):
        if len(self.pts) != 4:
            raise InvalidQuadError(f"expected 4 vertices, got {len(self.pts)}")
        for x, y in self.pts:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise InvalidQuadError(f"non-finite vertex ({x}, {y})")
        if shoelace_area(self.pts) <= 0.0:
            raise InvalidQuadError("vertices must be counter-clockwise with positive area")
        p = self.pts
        for i in range(4):
            if _cross(p[i], p[(i + 1) % 4], p[(i + 2) % 4]) < 0.0:
                raise InvalidQuadError("quad is not convex")

    def vertex_array(self) -> np.ndarray:
        return np.array(self.pts, dtype=float)


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def shoelace_area(pts) -> float:
    """Signed polygon area; positive for counter-clockwise vertex order."""
    total = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return 0.5 * total


def _wrap_angle(theta: float, lo: float, period: float) -> float:
    """Fold theta into [lo, lo + period); in-range values pass untouched.

    The early return keeps repeated wrapping exactly idempotent; the fold
    guard handles the float-mod wart where ``(-eps) % period == period``.
    """
    if lo <= theta < lo + period:
        return theta
    y = (theta - lo) % period
    if y >= period:
        y = 0.0
    return y + lo


def canonicalize(box: OBox) -> OBox:
    """Return the geometrically identical box in canonical form.

    Canonical means w >= h and theta in [-pi/2, pi/2). Square boxes, whose
    orientation is only defined modulo pi/2, take the representative in
    [-pi/2, 0). Applying twice is the identity.
    """
    w, h, theta = box.w, box.h, box.theta
    if w < h:
        w, h = h, w
        theta += _HALF_PI
    if w == h:
        theta = _wrap_angle(theta, -_HALF_PI, _HALF_PI)
    else:
        theta = _wrap_angle(theta, -_HALF_PI, math.pi)
    return OBox(box.cx, box.cy, w, h, theta)


def quad_from_box(box: OBox) -> Quad:
    """Corner polygon of a rotated rectangle, counter-clockwise."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    hw, hh = 0.5 * box.w, 0.5 * box.h
    pts = tuple(
        (box.cx + c * dx - s * dy, box.cy + s * dx + c * dy)
        for dx, dy in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh))
    )
    return Quad(pts)


def _convex_hull(pts: list[Point]) -> list[Point]:
    """Monotone-chain hull; collinear points are dropped."""
    uniq = sorted(set(pts))
    if len(uniq) <= 2:
        return uniq

    def build(seq):
        out: list[Point] = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0.0:
                out.pop()
            out.append(p)
        return out

    lower = build(uniq)
    upper = build(reversed(uniq))
    return lower[:-1] + upper[:-1]


def box_from_quad(quad) -> OBox:
    """Minimum-area enclosing rotated rectangle of four points, canonical.

    Accepts a :class:`Quad` or any sequence of four (x, y) pairs in any
    order (the hull step makes the result order-independent). Collinear
    input raises :class:`InvalidQuadError`.
    """
    if isinstance(quad, Quad):
        pts = list(quad.pts)
    else:
        pts = [(float(x), float(y)) for x, y in quad]
    if len(pts) != 4:
        raise InvalidQuadError(f"expected 4 vertices, got {len(pts)}")
    for x, y in pts:
        if not (math.isfinite(x) and math.isfinite(y)):
            raise InvalidQuadError(f"non-finite vertex ({x}, {y})")

    hull = _convex_hull(pts)
    if len(hull) < 3:
        raise InvalidQuadError("degenerate quad: vertices are collinear")

    best = None
    n = len(hull)
    for i in range(n):
        x0, y0 = hull[i]
        x1, y1 = hull[(i + 1) % n]
        ang = math.atan2(y1 - y0, x1 - x0)
        c, s = math.cos(ang), math.sin(ang)
        # coordinates in the frame where this hull edge is horizontal
        xs = [c * x + s * y for x, y in hull]
        ys = [-s * x + c * y for x, y in hull]
        w = max(xs) - min(xs)
        h = max(ys) - min(ys)
        if w <= 0.0 or h <= 0.0:
            raise InvalidQuadError("degenerate quad: zero-area hull")
        if best is None or w * h < best[0]:
            mx = 0.5 * (max(xs) + min(xs))
            my = 0.5 * (max(ys) + min(ys))
            best = (w * h, c * mx - s * my, s * mx + c * my, w, h, ang)

    _, cx, cy, w, h, ang = best
    return canonicalize(OBox(cx, cy, w, h, ang))


def _clip_convex(subject: tuple[Point, ...], clip: tuple[Point, ...]) -> list[Point]:
    """Sutherland-Hodgman clip of one convex CCW polygon by another."""
    poly = list(subject)
    ax, ay = clip[-1]
    for bx, by in clip:
        if not poly:
            break
        ex, ey = bx - ax, by - ay
        clipped: list[Point] = []
        px, py = poly[-1]
        p_in = ex * (py - ay) - ey * (px - ax) >= 0.0
        for qx, qy in poly:
            q_in = ex * (qy - ay) - ey * (qx - ax) >= 0.0
            if q_in != p_in:
                dpx, dpy = qx - px, qy - py
                denom = ex * dpy - ey * dpx
                if denom != 0.0:
                    t = -(ex * (py - ay) - ey * (px - ax)) / denom
                    clipped.append((px + t * dpx, py + t * dpy))
                else:
                    clipped.append((qx, qy))
            if q_in:
                clipped.append((qx, qy))
            px, py, p_in = qx, qy, q_in
        poly = clipped
        ax, ay = bx, by
    return poly


def rotated_iou(a: OBox, b: OBox) -> float:
    """Exact IoU of two rotated rectangles via convex clipping + shoelace.

    Symmetric by construction: the operand pair is put into a fixed order
    before clipping so both argument orders run the same arithmetic.
    """
    if b.as_tuple() < a.as_tuple():
        a, b = b, a
    pa = quad_from_box(a).pts
    pb = quad_from_box(b).pts
    poly = _clip_convex(pa, pb)
    if len(poly) < 3:
        return 0.0
    inter = shoelace_area(poly)
    if inter <= 0.0:
        return 0.0
    union = shoelace_area(pa) + shoelace_area(pb) - inter
    return inter / union


def _inside_mask(xs: np.ndarray, ys: np.ndarray, box: OBox) -> np.ndarray:
    """Point-in-rotated-rect test, allocation-lean for the MC hot path.

    ``xs``/``ys`` must be contiguous 1-D arrays of one float dtype; they
    are not modified.
    """
    t = xs.dtype.type
    c, s = t(math.cos(box.theta)), t(math.sin(box.theta))
    dx = xs - t(box.cx)
    dy = ys - t(box.cy)
    xr = dx * c
    dx *= s
    yr = dy * c
    yr -= dx
    dy *= s
    xr += dy
    np.abs(xr, out=xr)
    np.abs(yr, out=yr)
    mask = xr <= t(0.5 * box.w)
    mask &= yr <= t(0.5 * box.h)
    return mask


def mc_iou(a: OBox, b: OBox, n_samples: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo IoU estimate with standard error.

    Samples uniformly over the joint axis-aligned bounding box of the two
    boxes and returns ``hits(a and b) / hits(a or b)`` together with the
    binomial standard error of that ratio. The error uses an add-half
    continuity correction so it stays positive at observed rates of 0 or 1.
    Deterministic for a given seed. Samples are float32: the ~1e-7
    quantization is orders of magnitude below the statistical error.
    """
    if n_samples < 1000:
        raise ValueError(f"n_samples must be >= 1000, got {n_samples}")
    va = quad_from_box(a).vertex_array()
    vb = quad_from_box(b).vertex_array()
    lo = np.minimum(va.min(axis=0), vb.min(axis=0))
    hi = np.maximum(va.max(axis=0), vb.max(axis=0))
    rng = np.random.default_rng(seed)
    f32 = np.float32
    xs = rng.random(n_samples, dtype=f32)
    ys = rng.random(n_samples, dtype=f32)
    xs *= f32(hi[0] - lo[0])
    xs += f32(lo[0])
    ys *= f32(hi[1] - lo[1])
    ys += f32(lo[1])
    in_a = _inside_mask(xs, ys, a)
    in_b = _inside_mask(xs, ys, b)
    n_union = int(np.count_nonzero(in_a | in_b))
    n_inter = int(np.count_nonzero(in_a & in_b))
    if n_union == 0:
        return 0.0, math.inf
    est = n_inter / n_union
    smoothed = (n_inter + 0.5) / (n_union + 1.0)
    return est, math.sqrt(smoothed * (1.0 - smoothed) / n_union)


def iou_matrix(boxes_a: list[OBox], boxes_b: list[OBox]) -> np.ndarray:
    """Pairwise exact IoU with a bounding-circle prefilter.

    Pairs whose circumscribed circles do not touch are zero without
    clipping, which keeps dense prior-vs-gt sweeps affordable.
    """
    na, nb = len(boxes_a), len(boxes_b)
    out = np.zeros((na, nb), dtype=float)
    if na == 0 or nb == 0:
        return out
    ca = np.array([(b.cx, b.cy) for b in boxes_a])
    cb = np.array([(b.cx, b.cy) for b in boxes_b])
    ra = np.array([0.5 * math.hypot(b.w, b.h) for b in boxes_a])
    rb = np.array([0.5 * math.hypot(b.w, b.h) for b in boxes_b])
    d2 = ((ca[:, None, :] - cb[None, :, :]) ** 2).sum(axis=2)
    near = d2 <= (ra[:, None] + rb[None, :]) ** 2
    for i, j in zip(*np.nonzero(near)):
        out[i, j] = rotated_iou(boxes_a[i], boxes_b[j])
    return out


def dataset_angle_deg(box: OBox) -> float:
    """Rotation angle in the dataset-facing convention: degrees in (0, 90].

    The canonical internal angle is defined modulo pi for rectangles and
    modulo pi/2 for squares; dataset statistics fold everything into the
    (0, 90] range, with axis-aligned boxes reported as 90.
    """
    a = math.degrees(box.theta % _HALF_PI)
    return 90.0 if a == 0.0 else a
