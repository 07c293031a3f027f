"""Label-assignment engine for oriented tiny object detection.

Implements coarse-to-fine sample selection over Gaussian box models
(GJSD candidate screening, posterior re-ranking, Gaussian-mixture
gating), together with rotated-box geometry kernels, a rotated-AP
evaluator, and sample-bias statistics tooling.
"""

from .assign import (
    AssignmentResult,
    DcflConfig,
    GtAssignment,
    GtInstance,
    PredictionField,
    assign,
    maxiou_assign,
    pt_score,
    select_cps,
    select_mps,
    uniform_predictions,
)
from .errors import (
    CapacityError,
    ConditioningError,
    ConfigError,
    DcflError,
    InvalidBoxError,
    InvalidQuadError,
    ParseError,
    ShapeError,
)
from .gaussianstat import (
    Dgmm,
    Gaussian2,
    dgmm_build,
    dgmm_eval,
    gaussian_from_box,
    gjsd,
    gwd,
    interpolate,
    kld,
)
from .geom import OBox, Quad, box_from_quad, canonicalize, mc_iou, quad_from_box, rotated_iou
from .priorfield import OffsetField, PriorField, build_prior_field, synth_offsets_toward_gt, update_priors

__all__ = [
    "AssignmentResult",
    "CapacityError",
    "ConditioningError",
    "ConfigError",
    "DcflConfig",
    "DcflError",
    "Dgmm",
    "Gaussian2",
    "GtAssignment",
    "GtInstance",
    "InvalidBoxError",
    "InvalidQuadError",
    "OBox",
    "OffsetField",
    "ParseError",
    "PredictionField",
    "PriorField",
    "Quad",
    "ShapeError",
    "assign",
    "box_from_quad",
    "build_prior_field",
    "canonicalize",
    "dgmm_build",
    "dgmm_eval",
    "gaussian_from_box",
    "gjsd",
    "gwd",
    "interpolate",
    "kld",
    "maxiou_assign",
    "mc_iou",
    "pt_score",
    "quad_from_box",
    "rotated_iou",
    "select_cps",
    "select_mps",
    "synth_offsets_toward_gt",
    "uniform_predictions",
    "update_priors",
]

__version__ = "0.1.0"
