"""Relighting-based data augmentation toolkit.

Provides light-probe synthesis and averaging, a probe-guided encoder-decoder
relighting network with disentanglement training, a beta-VAE probe generator,
a dataset augmentation pipeline, and metric kernels for local-feature
evaluation (MMA, homography score, precision/recall).
"""

__version__ = "0.1.0"

from .probes import (
    PROBE_FILE_FMT,
    LightProbe,
    ProbeSet,
    ProbeSpec,
    average_probes,
    build_scene_agnostic_set,
    light_direction,
    load_probe,
    render_probe,
    save_probe,
)
from .imgio import load_png, resize_image, save_png
from .manifest import DatasetManifest
from .model import (
    EncodedScene,
    ModelConfig,
    RelightingModel,
    deterministic_fill_,
    init_model,
    parameter_count,
)
from .losses import (
    KIND_FROZEN_RANDOM,
    KIND_PRETRAINED,
    ExtractorWeightsError,
    FeatureExtractor,
    FeatureExtractorSpec,
    LossBreakdown,
    build_extractor,
    image_loss,
    image_loss_t,
    perceptual_features,
    probe_loss,
    probe_loss_t,
    total_loss,
    total_loss_t,
)
from .checkpoint import (
    CheckpointData,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    METRICS_FILE,
    DatasetCache,
    FitResult,
    PlateauScheduler,
    TrainConfig,
    TrainingSample,
    evaluate_holdout,
    fit,
    load_model,
    make_optimizer,
    psnr,
    sample_batch,
    save_model,
    split_scenes,
    train_step,
    validation_loss,
)
from .vae import (
    ProbeVae,
    VaeConfig,
    kl_divergence,
    latent_traverse,
    load_vae,
    probe_corpus,
    random_probe_specs,
    sample_probe,
    save_vae,
    train_vae,
    vae_forward,
    vae_loss,
)
from .augment import (
    POOL_FILE,
    VariantPool,
    relight_dataset,
    select_variant,
    wrap_epoch,
)
from .synth import (
    SceneGeometry,
    build_toy_dataset,
    default_toy_specs,
    generate_scene,
    mirror_scene,
    shade_scene,
)
from .evalkit import (
    EvalConfig,
    Homography,
    JitterSpec,
    Keypoint,
    MatchSet,
    PairEval,
    WarpedPair,
    baseline_detect_describe,
    corner_points,
    corner_response,
    correct_mask,
    estimate_homography,
    evaluate_pairs,
    homography_dataset_score,
    homography_score,
    load_descriptors,
    load_homography,
    load_keypoints,
    load_matches,
    load_pair,
    mma,
    mutual_nn_matches,
    precision_recall,
    project_points,
    random_homography,
    ransac_homography,
    save_descriptors,
    save_homography,
    save_keypoints,
    save_matches,
    true_matches,
    warp_pair,
)

__all__ = [
    "__version__",
    "PROBE_FILE_FMT",
    "LightProbe",
    "ProbeSet",
    "ProbeSpec",
    "average_probes",
    "build_scene_agnostic_set",
    "light_direction",
    "load_probe",
    "render_probe",
    "save_probe",
    "load_png",
    "save_png",
    "resize_image",
    "DatasetManifest",
    "EncodedScene",
    "ModelConfig",
    "RelightingModel",
    "deterministic_fill_",
    "init_model",
    "parameter_count",
    "KIND_FROZEN_RANDOM",
    "KIND_PRETRAINED",
    "ExtractorWeightsError",
    "FeatureExtractor",
    "FeatureExtractorSpec",
    "LossBreakdown",
    "build_extractor",
    "image_loss",
    "image_loss_t",
    "perceptual_features",
    "probe_loss",
    "probe_loss_t",
    "total_loss",
    "total_loss_t",
    "CheckpointData",
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
    "BEST_CHECKPOINT",
    "LAST_CHECKPOINT",
    "METRICS_FILE",
    "DatasetCache",
    "FitResult",
    "PlateauScheduler",
    "TrainConfig",
    "TrainingSample",
    "evaluate_holdout",
    "fit",
    "load_model",
    "make_optimizer",
    "psnr",
    "sample_batch",
    "save_model",
    "split_scenes",
    "train_step",
    "validation_loss",
    "ProbeVae",
    "VaeConfig",
    "kl_divergence",
    "latent_traverse",
    "load_vae",
    "probe_corpus",
    "random_probe_specs",
    "sample_probe",
    "save_vae",
    "train_vae",
    "vae_forward",
    "vae_loss",
    "POOL_FILE",
    "VariantPool",
    "relight_dataset",
    "select_variant",
    "wrap_epoch",
    "SceneGeometry",
    "build_toy_dataset",
    "default_toy_specs",
    "generate_scene",
    "mirror_scene",
    "shade_scene",
    "EvalConfig",
    "Homography",
    "JitterSpec",
    "Keypoint",
    "MatchSet",
    "PairEval",
    "WarpedPair",
    "baseline_detect_describe",
    "corner_points",
    "corner_response",
    "correct_mask",
    "estimate_homography",
    "evaluate_pairs",
    "homography_dataset_score",
    "homography_score",
    "load_descriptors",
    "load_homography",
    "load_keypoints",
    "load_matches",
    "load_pair",
    "mma",
    "mutual_nn_matches",
    "precision_recall",
    "project_points",
    "random_homography",
    "ransac_homography",
    "save_descriptors",
    "save_homography",
    "save_keypoints",
    "save_matches",
    "true_matches",
    "warp_pair",
]
