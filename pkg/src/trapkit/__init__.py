"""trapkit: camera-trap detection, classification, and triage toolkit."""

__version__ = "0.1.0"

from .core import (
    BBox,
    ClassScores,
    Detection,
    DetectionCategory,
    ImageRef,
    iou,
    to_absolute,
)
from .errors import TrapkitError
from .pipeline import PipelineConfig, PipelineResult, run_batch, run_image, triage

__all__ = [
    "BBox",
    "ClassScores",
    "Detection",
    "DetectionCategory",
    "ImageRef",
    "PipelineConfig",
    "PipelineResult",
    "TrapkitError",
    "__version__",
    "iou",
    "run_batch",
    "run_image",
    "to_absolute",
    "triage",
]
