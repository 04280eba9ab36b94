"""Exception hierarchy.

Every stage raises a subclass of EarPipeError carrying a ``stage`` name so the
CLI can report failures as "error [stage]: message" and exit nonzero.
"""


class EarPipeError(Exception):
    stage = "pipeline"


class ConfigError(EarPipeError):
    stage = "config"


class IngestionError(EarPipeError):
    stage = "ingest"


class DetectionError(EarPipeError):
    stage = "detect"


class MaskingError(EarPipeError):
    stage = "mask"


class AlignmentError(EarPipeError):
    stage = "align"


class RestorationError(EarPipeError):
    stage = "inpaint"


class SideSplitError(EarPipeError):
    stage = "side_split"


class EmbeddingError(EarPipeError):
    stage = "embed"


class ProtocolError(EarPipeError):
    """Evaluation-protocol precondition failed (pair counts, trial lists)."""

    stage = "evaluate"


class ScoringError(EarPipeError):
    """Similarity scoring failed (zero-norm vector, missing embedding)."""

    stage = "evaluate"


class ReportingError(EarPipeError):
    stage = "report"


class ComparisonError(ReportingError):
    """Result grids to be compared do not cover the same keys."""
