"""Confidence-guided multi-model mask fusion and J/F evaluation for
semi-supervised video object segmentation."""

from .core import (
    LONG_VIDEO_FRAME_THRESHOLD,
    STRATEGIES,
    STRATEGY_AVERAGE,
    STRATEGY_CONFIDENCE_GUIDED,
    STRATEGY_MAX,
    ConfidencePlane,
    ConfidenceVolume,
    FusionConfig,
    LabelMask,
    MemoryPreset,
    ObjectSet,
    flip_horizontal,
    memory_preset,
)
from .fusion import (
    AverageFusion,
    ConfidenceGuidedFusion,
    FusionReport,
    MaxFusion,
    fuse_average,
    fuse_confidence_guided,
    fuse_max,
    fuse_sequence,
    make_fusion,
    tta_merge,
)
from .io import (
    FormatError,
    ModelEntry,
    ZooManifest,
    load_manifest,
    read_confidence_volume,
    read_label_mask,
    validate_manifest,
    write_confidence_volume,
    write_label_mask,
)
from .losses import (
    LossWeights,
    SoftPrediction,
    cls_loss,
    dice_loss,
    focal_loss,
    iou_loss,
    total_loss,
)
from .metrics import (
    EvalRecord,
    EvalSummary,
    boundary_f,
    evaluate_sequence,
    extract_boundary,
    jaccard,
    jf_mean,
    round_half_up,
)
from .validation import ValidationResult, validate_volume

__version__ = "0.1.0"
