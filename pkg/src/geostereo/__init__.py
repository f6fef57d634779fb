"""Geometric priors for stereo disparity: pixel-adaptive gradient smoothing,
occlusion reasoning from disparity, losses, metrics and Middlebury I/O."""

from .errors import ContractError, DegenerateInputError, OptimizationError
from .fields import (
    DisparityMap,
    FeatureMap,
    GradientField,
    OcclusionMap,
    guidance_edges,
    make_disparity_map,
    rgbxy_guidance,
    spatial_gradient,
)
from .loss import LossBreakdown, LossWeights, smooth_l1, total_loss
from .metrics import EvalReport, bad_threshold, evaluate, mae
from .occlusion import (
    OcclusionConfig,
    hard_occlusion_oracle,
    occlusion_target,
    soft_occlusion,
    soft_occlusion_backward,
)
from .optimize import RefineConfig, SceneSpec, refine_disparity, synth_scene
from .pac import (
    FilterBank,
    GradSmoothParams,
    PacLayerConfig,
    conv_forward,
    gaussian_affinity,
    gradsmooth_apply,
    pac_backward,
    pac_forward,
)

__version__ = "0.1.0"
