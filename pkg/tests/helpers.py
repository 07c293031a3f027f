"""Shared generators for randomized tests."""

import numpy as np

from dcfl.geom import OBox, canonicalize


def random_box(rng: np.random.Generator, center_span: float = 50.0) -> OBox:
    cx, cy = rng.uniform(-center_span, center_span, 2)
    w = rng.uniform(1.0, 40.0)
    h = rng.uniform(0.3, 1.0) * w
    theta = rng.uniform(-np.pi, np.pi)
    return canonicalize(OBox(cx, cy, w, h, theta))


def random_box_pair(rng: np.random.Generator) -> tuple[OBox, OBox]:
    """Pair with a bias toward partial overlap (the interesting IoU regime)."""
    a = random_box(rng)
    if rng.random() < 0.7:
        shift = rng.uniform(-1.0, 1.0, 2) * np.array([a.w, a.h])
        w = a.w * rng.uniform(0.5, 1.5)
        h = a.h * rng.uniform(0.5, 1.5)
        b = canonicalize(
            OBox(a.cx + shift[0], a.cy + shift[1], w, h, rng.uniform(-np.pi, np.pi))
        )
    else:
        b = random_box(rng)
    return a, b
