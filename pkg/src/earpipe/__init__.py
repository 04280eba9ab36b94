"""Ear accessory removal and verification evaluation pipeline."""

__version__ = "0.1.0"

from .alignment import AxisEstimate, align_image, estimate_vertical_axis, rotate_upright
from .detection import DetectorConfig, detect_accessories, format_text_prompt
from .errors import (
    AlignmentError, ComparisonError, ConfigError, DetectionError, EarPipeError,
    EmbeddingError, IngestionError, MaskingError, ProtocolError, ReportingError,
    RestorationError, ScoringError, SideSplitError,
)
from .masking import binarize, build_accessory_mask, merge_masks, refine_mask
from .pipeline import PipelineConfig, ingest_dataset, run_condition, run_pipeline
from .reporting import classify_cell, make_cell, render_comparison_table
from .restoration import restore
from .types import (
    BoundingBox, DatasetManifest, Detection, Embedding, ImageRecord,
    load_manifest, save_manifest, validate_manifest,
)
from .verification import (
    ScoreSet, TrialSummary, aggregate_trials, compute_auc, cosine_similarity,
    enumerate_pairs, pair_counts, score_all_pairs,
)

__all__ = [name for name in dir() if not name.startswith("_")]
