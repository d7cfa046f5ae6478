"""lensrect: single-parameter lens distortion models and self-supervised
rectification.

Distorted images are modeled by radial mappings (FOV, division, equidistant)
with one parameter each.  Parameters are recovered without ground truth by
enforcing consistency between re-distorted / cross-rectified views of the
same scene.
"""

from .estimator import (EstimationResult, OptimizerConfig, SlotEstimate,
                        estimate_group, estimate_supervised, minimize_scalar)
from .losses import (DEFAULT_PAIRS, PAIR_SETS, GroupState, LossSpec,
                     masked_l1, total_loss)
from .metrics import EvalReport, evaluate_matrix, psnr, ssim
from .models import (ALL_MODELS, DEFAULT_RANGES, DistortionModel, DomainError,
                     ModelKind, ParamRange, default_model)
from .synthesis import (DistortionGroup, GroupItem, group_rng, load_dataset,
                        load_png, prepare_normal, sample_param_pair, save_png,
                        synthesize_group, write_dataset)
from .warp import (WarpResult, bilinear_sample, distort, erode_mask, mask_of,
                   radial_map_warp, rectify, resize_bilinear)

__version__ = "0.1.0"

__all__ = [
    "ALL_MODELS", "DEFAULT_PAIRS", "DEFAULT_RANGES", "DistortionGroup",
    "DistortionModel", "DomainError", "EstimationResult", "EvalReport",
    "GroupItem", "GroupState", "LossSpec", "ModelKind", "OptimizerConfig",
    "PAIR_SETS", "ParamRange", "SlotEstimate", "WarpResult",
    "bilinear_sample", "default_model", "distort", "erode_mask",
    "estimate_group", "estimate_supervised", "evaluate_matrix", "group_rng",
    "load_dataset", "load_png", "mask_of", "masked_l1", "minimize_scalar",
    "prepare_normal", "psnr", "radial_map_warp", "rectify",
    "resize_bilinear", "sample_param_pair", "save_png", "ssim",
    "synthesize_group", "total_loss", "write_dataset",
]
