"""Gaussian modeling of rotated boxes and distribution distances.

Boxes are viewed as 2-D Gaussians (mean = center, covariance from the
rotated extents); candidate screening compares them with KLD, GWD, or
GJSD. The two-component mixture used for final sample gating lives here
as well.

The arithmetic core works elementwise on covariance components (2x2
inverses via adjugate / determinant, no linear-algebra library calls), so
scalar calls and broadcast batch sweeps run the identical operations and
produce identical floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError
from .geom import OBox

DET_TOL = 1e-12


@dataclass(frozen=True)
class Gaussian2:
    """2-D Gaussian with mean ``mu`` (pixels) and SPD covariance ``sigma``."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(2)
        sigma = np.array(self.sigma, dtype=float).reshape(2, 2)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("Gaussian parameters must be finite")
        if abs(sigma[0, 1] - sigma[1, 0]) >= 1e-12:
            raise ValueError(f"covariance not symmetric: {sigma.tolist()}")
        det = sigma[0, 0] * sigma[1, 1] - sigma[0, 1] * sigma[1, 0]
        if det <= 0.0 or sigma[0, 0] + sigma[1, 1] <= 0.0:
            raise ValueError(f"covariance not positive definite: {sigma.tolist()}")
        mu.flags.writeable = False
        sigma.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


def gaussian_from_box(box: OBox) -> Gaussian2:
    """Gaussian view of a box: mean = center, covariance = rotated extents.

    sigma = R(theta) @ diag(w^2/4, h^2/4) @ R(theta)^T, i.e. one standard
    deviation spans half of each side.
    """
    c, s = math.cos(box.theta), math.sin(box.theta)
    a = 0.25 * box.w * box.w
    b = 0.25 * box.h * box.h
    s00 = c * c * a + s * s * b
    s01 = c * s * (a - b)
    s11 = s * s * a + c * c * b
    return Gaussian2(np.array([box.cx, box.cy]), np.array([[s00, s01], [s01, s11]]))


# ---------------------------------------------------------------------------
# elementwise core over component arrays
#
# Covariances are passed as (s00, s01, s11) triplets of broadcastable
# arrays; every formula below is plain elementwise arithmetic.


def _det(s00, s01, s11):
    return s00 * s11 - s01 * s01


def _check_conditioning(det) -> None:
    if np.any(det < DET_TOL):
        raise ConditioningError(f"covariance determinant below {DET_TOL}")


def _kld_fields(mx_p, my_p, p00, p01, p11, mx_q, my_q, q00, q01, q11):
    det_p = _det(p00, p01, p11)
    det_q = _det(q00, q01, q11)
    _check_conditioning(det_p)
    _check_conditioning(det_q)
    dx = mx_q - mx_p
    dy = my_q - my_p
    trace = (q11 * p00 - 2.0 * q01 * p01 + q00 * p11) / det_q
    quad = (q11 * dx * dx - 2.0 * q01 * dx * dy + q00 * dy * dy) / det_q
    # mathematically >= 0; clamp the -1e-16 roundoff at equal inputs
    return np.maximum(0.5 * (trace + quad - 2.0 + np.log(det_q / det_p)), 0.0)


def _interpolate_fields(mx_p, my_p, p00, p01, p11, mx_q, my_q, q00, q01, q11, alpha):
    det_p = _det(p00, p01, p11)
    det_q = _det(q00, q01, q11)
    _check_conditioning(det_p)
    _check_conditioning(det_q)
    beta = 1.0 - alpha
    # blended precision ((1-a) P^-1 + a Q^-1), then invert back
    i00 = beta * p11 / det_p + alpha * q11 / det_q
    i01 = -(beta * p01 / det_p + alpha * q01 / det_q)
    i11 = beta * p00 / det_p + alpha * q00 / det_q
    det_i = _det(i00, i01, i11)
    _check_conditioning(det_i)
    s00 = i11 / det_i
    s01 = -i01 / det_i
    s11 = i00 / det_i
    # precision-weighted mean
    bx = beta * (p11 * mx_p - p01 * my_p) / det_p + alpha * (q11 * mx_q - q01 * my_q) / det_q
    by = beta * (p00 * my_p - p01 * mx_p) / det_p + alpha * (q00 * my_q - q01 * mx_q) / det_q
    mx = s00 * bx + s01 * by
    my = s01 * bx + s11 * by
    return mx, my, s00, s01, s11


def _gjsd_fields(mx_p, my_p, p00, p01, p11, mx_q, my_q, q00, q01, q11, alpha):
    mid = _interpolate_fields(mx_p, my_p, p00, p01, p11, mx_q, my_q, q00, q01, q11, alpha)
    to_p = _kld_fields(*mid, mx_p, my_p, p00, p01, p11)
    to_q = _kld_fields(*mid, mx_q, my_q, q00, q01, q11)
    return (1.0 - alpha) * to_p + alpha * to_q


def _fields(g: Gaussian2):
    return g.mu[0], g.mu[1], g.sigma[0, 0], g.sigma[0, 1], g.sigma[1, 1]


def gjsd_matrix(mus_a, sigmas_a, mus_b, sigmas_b, alpha: float = 0.5) -> np.ndarray:
    """GJSD between every Gaussian in ``a`` and every Gaussian in ``b``.

    ``mus_*`` are (N, 2), ``sigmas_*`` are (N, 2, 2); returns (Na, Nb).
    Runs the same elementwise arithmetic as the scalar :func:`gjsd`.
    """
    mus_a = np.asarray(mus_a, dtype=float)
    mus_b = np.asarray(mus_b, dtype=float)
    sigmas_a = np.asarray(sigmas_a, dtype=float)
    sigmas_b = np.asarray(sigmas_b, dtype=float)
    a = (
        mus_a[:, None, 0],
        mus_a[:, None, 1],
        sigmas_a[:, None, 0, 0],
        sigmas_a[:, None, 0, 1],
        sigmas_a[:, None, 1, 1],
    )
    b = (
        mus_b[None, :, 0],
        mus_b[None, :, 1],
        sigmas_b[None, :, 0, 0],
        sigmas_b[None, :, 0, 1],
        sigmas_b[None, :, 1, 1],
    )
    out = _gjsd_fields(*a, *b, alpha)
    return np.broadcast_to(out, (mus_a.shape[0], mus_b.shape[0])).copy()


def kld(p: Gaussian2, q: Gaussian2) -> float:
    """Closed-form KL(p || q); asymmetric in general.

    0.5 * [tr(Sq^-1 Sp) + (mq-mp)^T Sq^-1 (mq-mp) - 2 + ln(|Sq|/|Sp|)]
    """
    return float(_kld_fields(*_fields(p), *_fields(q)))


def gwd(p: Gaussian2, q: Gaussian2) -> float:
    """Squared 2-Wasserstein distance between Gaussians; symmetric.

    ||mp - mq||^2 + tr(Sp + Sq - 2 (Sq^1/2 Sp Sq^1/2)^1/2), with the trace
    of the matrix square root reduced to sqrt(tr(Sp Sq) + 2 sqrt(|Sp||Sq|)).
    """
    mx_p, my_p, p00, p01, p11 = _fields(p)
    mx_q, my_q, q00, q01, q11 = _fields(q)
    det_p = _det(p00, p01, p11)
    det_q = _det(q00, q01, q11)
    _check_conditioning(np.asarray(det_p))
    _check_conditioning(np.asarray(det_q))
    mean_term = (mx_p - mx_q) ** 2 + (my_p - my_q) ** 2
    tr_pq = p00 * q00 + 2.0 * p01 * q01 + p11 * q11
    cross = math.sqrt(max(tr_pq + 2.0 * math.sqrt(det_p * det_q), 0.0))
    value = mean_term + (p00 + p11) + (q00 + q11) - 2.0 * cross
    return max(float(value), 0.0)


def interpolate(p: Gaussian2, q: Gaussian2, alpha: float) -> Gaussian2:
    """Geodesic-style blend used by the GJSD: precision-space interpolation.

    S_a = ((1-a) Sp^-1 + a Sq^-1)^-1 and m_a = S_a ((1-a) Sp^-1 mp + a Sq^-1 mq).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    mx, my, s00, s01, s11 = _interpolate_fields(*_fields(p), *_fields(q), alpha)
    return Gaussian2(np.array([mx, my]), np.array([[s00, s01], [s01, s11]]))


def gjsd(p: Gaussian2, q: Gaussian2, alpha: float = 0.5) -> float:
    """Generalized Jensen-Shannon divergence with closed form.

    Defined as (1-a) KL(N_a || p) + a KL(N_a || q) where N_a is the
    interpolated Gaussian; symmetric at a = 0.5 and invariant under joint
    scaling of both distributions.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return float(_gjsd_fields(*_fields(p), *_fields(q), alpha))


@dataclass(frozen=True)
class Dgmm:
    """Two-component Gaussian mixture describing one ground-truth instance.

    Component 1 sits on the geometry center, component 2 on the semantic
    center; both share the instance covariance, and the weights sum to 1.
    """

    w1: float
    mu1: np.ndarray
    mu2: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.w1 < 1.0:
            raise ValueError(f"w1 must be in (0, 1), got {self.w1}")
        mu1 = np.array(self.mu1, dtype=float).reshape(2)
        mu2 = np.array(self.mu2, dtype=float).reshape(2)
        sigma = np.array(self.sigma, dtype=float).reshape(2, 2)
        Gaussian2(mu1, sigma)  # validates SPD etc.
        for arr, name in ((mu1, "mu1"), (mu2, "mu2"), (sigma, "sigma")):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def weights(self) -> tuple[float, float]:
        return (self.w1, 1.0 - self.w1)


def dgmm_build(gt: OBox, semantic_center, w1: float = 0.7) -> Dgmm:
    """Mixture of the gt geometry and its semantically salient region."""
    sigma = gaussian_from_box(gt).sigma
    return Dgmm(w1, np.array([gt.cx, gt.cy]), np.asarray(semantic_center, dtype=float), sigma)


def dgmm_eval(model: Dgmm, point) -> float:
    """Mixture response at a point, peak-normalized per component.

    Each component contributes weight * exp(-0.5 * mahalanobis^2), so a
    point on a component mean scores that component's full weight and the
    threshold exp(-g) means "within Mahalanobis radius sqrt(2 g)".
    """
    return float(dgmm_eval_many(model, np.asarray(point, dtype=float).reshape(1, 2))[0])


def dgmm_eval_many(model: Dgmm, points: np.ndarray) -> np.ndarray:
    """Vectorized :func:`dgmm_eval` over an (N, 2) array of points."""
    s00, s01, s11 = model.sigma[0, 0], model.sigma[0, 1], model.sigma[1, 1]
    det = _det(s00, s01, s11)
    _check_conditioning(np.asarray(det))
    pts = np.asarray(points, dtype=float)
    out = np.zeros(pts.shape[0])
    for weight, mu in zip(model.weights, (model.mu1, model.mu2)):
        dx = pts[:, 0] - mu[0]
        dy = pts[:, 1] - mu[1]
        maha2 = (s11 * dx * dx - 2.0 * s01 * dx * dy + s00 * dy * dy) / det
        out += weight * np.exp(-0.5 * maha2)
    return out
