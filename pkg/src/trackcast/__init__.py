"""Pseudo-label refinement for 3D detection via trajectory forecasting.

The package filters low-confidence machine-generated labels, tracks the
survivors across frames, forecasts each track's motion, up-weights labels
that multiple forecasts agree on, and inserts unmatched forecasts as
soft targets — then scores everything against simulator ground truth.
"""

from .enhancer import (
    EnhancerConfig,
    compute_weights,
    enhance_frame,
    enhance_scene,
    find_unmatched,
    gamma_schedule,
    match_counts,
)
from .evaluation import (
    BucketReport,
    MatchCriterion,
    average_precision,
    bucket_report,
    match_frame,
    pr_curve,
    precision_recall,
)
from .fileio import (
    FileFormatError,
    read_enhanced,
    read_forecasts,
    read_scene,
    read_tracks,
    read_truth,
    write_enhanced,
    write_forecasts,
    write_scene,
    write_tracks,
    write_truth,
)
from .forecaster import (
    PREDICTORS,
    ForecastConfig,
    generate_forecasts,
    predict_ctrv,
    predict_cv,
    predict_linear_velocity,
)
from .geometry import bev_corners, bev_iou, iou_matrix, iou_matrix_many
from .model import (
    Box3D,
    EnhancedFrame,
    ForecastSet,
    Frame,
    INSERTED,
    Scene,
    TEACHER,
    Track,
    WeightedLabel,
    confidence_filter,
    validate_scene,
)
from .pipeline import (
    PipelineConfig,
    RunReport,
    config_from_dict,
    config_to_dict,
    export_training_set,
    process_scene,
    run_pipeline,
    run_pipeline_files,
)
from .simulator import (
    AgentSpec,
    ConstantTurn,
    ConstantVelocity,
    NoiseModel,
    SceneTruth,
    corrupt,
    generate_scene,
    make_dataset,
    make_labeled_scenes,
    separated_agents,
)
from .tracker import TrackerConfig, build_tracks, greedy_associate
from .training import (
    ParameterVector,
    ema_update,
    labeled_loss,
    total_loss,
    unlabeled_loss,
)

__version__ = "0.1.0"

__all__ = [
    "AgentSpec",
    "Box3D",
    "BucketReport",
    "ConstantTurn",
    "ConstantVelocity",
    "EnhancedFrame",
    "EnhancerConfig",
    "FileFormatError",
    "ForecastConfig",
    "ForecastSet",
    "Frame",
    "INSERTED",
    "MatchCriterion",
    "NoiseModel",
    "PREDICTORS",
    "ParameterVector",
    "PipelineConfig",
    "RunReport",
    "Scene",
    "SceneTruth",
    "TEACHER",
    "Track",
    "TrackerConfig",
    "WeightedLabel",
    "average_precision",
    "bev_corners",
    "bev_iou",
    "bucket_report",
    "build_tracks",
    "compute_weights",
    "config_from_dict",
    "config_to_dict",
    "confidence_filter",
    "corrupt",
    "ema_update",
    "enhance_frame",
    "enhance_scene",
    "export_training_set",
    "find_unmatched",
    "gamma_schedule",
    "generate_forecasts",
    "generate_scene",
    "greedy_associate",
    "iou_matrix",
    "iou_matrix_many",
    "labeled_loss",
    "make_dataset",
    "make_labeled_scenes",
    "match_counts",
    "match_frame",
    "pr_curve",
    "precision_recall",
    "predict_ctrv",
    "predict_cv",
    "predict_linear_velocity",
    "process_scene",
    "read_enhanced",
    "read_forecasts",
    "read_scene",
    "read_tracks",
    "read_truth",
    "run_pipeline",
    "run_pipeline_files",
    "separated_agents",
    "total_loss",
    "unlabeled_loss",
    "validate_scene",
    "write_enhanced",
    "write_forecasts",
    "write_scene",
    "write_tracks",
    "write_truth",
]
