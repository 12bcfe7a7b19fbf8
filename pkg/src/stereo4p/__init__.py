"""Stereo matching with learned per-pixel pyramid-pooled costs.

The package covers the full desk-scale workflow: siamese matching networks
built from scratch on numpy (plain and pyramid-pooled variants), classical
matching costs for comparison, cost-volume post-processing (cross-based
aggregation, semi-global smoothing, subpixel refinement, filtering), patch
training with head-only fine-tuning, synthetic evaluation scenes, and
Middlebury-style file formats and metrics. The `stereo4p` console script
exposes the same operations on the command line.
"""

__version__ = "0.1.0"

from .costs import (
    COST_SENTINEL,
    census_cost,
    census_volume,
    cost_profile,
    normalize_profile,
    pixelwise_cost,
    pixelwise_volume,
    sad_cost,
    sad_volume,
)
from .dataio import (
    StereoSample,
    bad_pixel_error,
    load_sample,
    read_calib,
    read_image,
    read_pfm,
    weighted_average,
    write_pfm,
)
from .errors import (
    ConfigError,
    DataError,
    ShapeError,
    Stereo4PError,
    TrainingDivergedError,
    WeightsFormatError,
)
from .network import (
    NetworkSpec,
    Weights,
    compute_cost_volume,
    extract_features,
    load_weights,
    narrow_full_spec,
    narrow_tiny_spec,
    save_weights,
    score_pair,
    spec_preset,
    wide_full_spec,
    wide_tiny_spec,
)
from .postproc import (
    CbcaParams,
    PipelineConfig,
    PipelineResult,
    SgmParams,
    cbca,
    median_filter,
    pipeline_preset,
    run_pipeline,
    sgm,
    subpixel_refine,
    wta,
)
from .pyramid import pyramid_pool
from .synthetic import SyntheticScene, make_scene, scene_suite, weak_texture_scene
from .train import (
    TrainResult,
    TrainSchedule,
    finetune_head,
    grad_check,
    sample_patches,
    train,
)

__all__ = [
    "COST_SENTINEL",
    "CbcaParams",
    "ConfigError",
    "DataError",
    "NetworkSpec",
    "PipelineConfig",
    "PipelineResult",
    "SgmParams",
    "ShapeError",
    "Stereo4PError",
    "StereoSample",
    "SyntheticScene",
    "TrainResult",
    "TrainSchedule",
    "TrainingDivergedError",
    "Weights",
    "WeightsFormatError",
    "bad_pixel_error",
    "cbca",
    "census_cost",
    "census_volume",
    "compute_cost_volume",
    "cost_profile",
    "extract_features",
    "finetune_head",
    "grad_check",
    "load_sample",
    "load_weights",
    "make_scene",
    "median_filter",
    "narrow_full_spec",
    "narrow_tiny_spec",
    "normalize_profile",
    "pipeline_preset",
    "pixelwise_cost",
    "pixelwise_volume",
    "pyramid_pool",
    "read_calib",
    "read_image",
    "read_pfm",
    "run_pipeline",
    "sad_cost",
    "sad_volume",
    "sample_patches",
    "save_weights",
    "scene_suite",
    "score_pair",
    "sgm",
    "spec_preset",
    "subpixel_refine",
    "train",
    "weak_texture_scene",
    "weighted_average",
    "wide_full_spec",
    "wide_tiny_spec",
    "write_pfm",
    "wta",
]
