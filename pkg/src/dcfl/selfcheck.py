"""Built-in oracle suites cross-checking the numeric kernels.

Three independent routes are compared against the production code:

* exact rotated IoU vs a Monte-Carlo area estimate,
* closed-form KLD vs 2-D grid quadrature of the defining integral
  (densities evaluated with scipy, not with this package's formulas),
* GJSD identity / symmetry / joint-scale-invariance properties.

The same suites back the ``selfcheck`` CLI command and the acceptance
tests; sizes are parameters so the CLI default stays fast.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal

from . import gaussianstat, geom
from .gaussianstat import Gaussian2
from .geom import OBox, canonicalize


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def random_box(rng: np.random.Generator, center_span: float = 50.0) -> OBox:
    cx, cy = rng.uniform(-center_span, center_span, 2)
    w = rng.uniform(1.0, 40.0)
    h = rng.uniform(0.3, 1.0) * w
    return canonicalize(OBox(cx, cy, w, h, rng.uniform(-math.pi, math.pi)))


def random_box_pair(rng: np.random.Generator) -> tuple[OBox, OBox]:
    """Box pair with a strong bias toward partial overlap."""
    a = random_box(rng)
    if rng.random() < 0.7:
        shift = rng.uniform(-1.0, 1.0, 2) * np.array([a.w, a.h])
        b = canonicalize(
            OBox(
                a.cx + shift[0],
                a.cy + shift[1],
                a.w * rng.uniform(0.5, 1.5),
                a.h * rng.uniform(0.5, 1.5),
                rng.uniform(-math.pi, math.pi),
            )
        )
    else:
        b = random_box(rng)
    return a, b


def random_gaussian(rng: np.random.Generator, mean_span: float = 4.0) -> Gaussian2:
    """Well-conditioned random Gaussian (eigenvalues in [1, 16])."""
    mu = rng.uniform(-mean_span, mean_span, 2)
    lo, hi = rng.uniform(1.0, 16.0, 2)
    phi = rng.uniform(0.0, math.pi)
    c, s = math.cos(phi), math.sin(phi)
    s00 = c * c * lo + s * s * hi
    s01 = c * s * (lo - hi)
    s11 = s * s * lo + c * c * hi
    return Gaussian2(mu, np.array([[s00, s01], [s01, s11]]))


def kld_quadrature(p: Gaussian2, q: Gaussian2, span: float = 6.0, n: int = 481) -> float:
    """Independent KLD estimate: midpoint quadrature of the defining
    integral over p's +-span-sigma box, densities from scipy."""
    sx = math.sqrt(p.sigma[0, 0])
    sy = math.sqrt(p.sigma[1, 1])
    xs = np.linspace(p.mu[0] - span * sx, p.mu[0] + span * sx, n + 1)
    ys = np.linspace(p.mu[1] - span * sy, p.mu[1] + span * sy, n + 1)
    dx = xs[1] - xs[0]
    dy = ys[1] - ys[0]
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    log_p = multivariate_normal(p.mu, p.sigma).logpdf(pts)
    log_q = multivariate_normal(q.mu, q.sigma).logpdf(pts)
    return float(np.sum(np.exp(log_p) * (log_p - log_q)) * dx * dy)


def check_iou_oracle(
    pairs: int = 150, samples: int = 200_000, seed: int = 20240
) -> CheckResult:
    """Exact IoU vs Monte-Carlo: every pair within 3 standard errors."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = 0
    for i in range(pairs):
        a, b = random_box_pair(rng)
        exact = geom.rotated_iou(a, b)
        est, err = geom.mc_iou(a, b, samples, seed=seed + 1 + i)
        gap = abs(exact - est)
        if gap > 3.0 * err:
            failures += 1
        if err > 0.0:
            worst = max(worst, gap / err)
    elapsed = time.perf_counter() - start
    detail = f"{pairs} pairs x {samples} samples, worst gap {worst:.2f} sigma"
    return CheckResult("iou-vs-monte-carlo", failures == 0, detail, elapsed)


def check_kld_quadrature(pairs: int = 50, seed: int = 977, tol: float = 1e-3) -> CheckResult:
    """Closed-form KLD vs quadrature within an absolute tolerance."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        p = random_gaussian(rng)
        q = random_gaussian(rng)
        worst = max(worst, abs(gaussianstat.kld(p, q) - kld_quadrature(p, q)))
    elapsed = time.perf_counter() - start
    detail = f"{pairs} pairs, worst |closed-form - quadrature| = {worst:.2e}"
    return CheckResult("kld-vs-quadrature", worst <= tol, detail, elapsed)


def check_gjsd_properties(pairs: int = 2000, seed: int = 5150) -> CheckResult:
    """GJSD identity, alpha=0.5 symmetry, and joint-scale invariance."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_ident = 0.0
    worst_sym = 0.0
    worst_scale = 0.0
    for _ in range(pairs):
        p = random_gaussian(rng)
        q = random_gaussian(rng)
        worst_ident = max(worst_ident, gaussianstat.gjsd(p, p, 0.5))
        worst_sym = max(
            worst_sym, abs(gaussianstat.gjsd(p, q, 0.5) - gaussianstat.gjsd(q, p, 0.5))
        )
        base = gaussianstat.gjsd(p, q, 0.5)
        for c in (0.1, 10.0):
            ps = Gaussian2(p.mu * c, p.sigma * c * c)
            qs = Gaussian2(q.mu * c, q.sigma * c * c)
            worst_scale = max(worst_scale, abs(gaussianstat.gjsd(ps, qs, 0.5) - base))
    elapsed = time.perf_counter() - start
    ok = worst_ident < 1e-12 and worst_sym < 1e-9 and worst_scale < 1e-6
    detail = (
        f"{pairs} pairs, identity {worst_ident:.1e}, symmetry {worst_sym:.1e}, "
        f"scale {worst_scale:.1e}"
    )
    return CheckResult("gjsd-properties", ok, detail, elapsed)


def run_all(trials: int = 150, samples: int = 200_000, seed: int = 20240) -> list[CheckResult]:
    """Run every suite, scaled by ``trials`` (the IoU pair count)."""
    return [
        check_iou_oracle(pairs=trials, samples=samples, seed=seed),
        check_kld_quadrature(pairs=max(10, trials // 3), seed=seed + 1),
        check_gjsd_properties(pairs=max(100, trials * 10), seed=seed + 2),
    ]
