"""Backend protocols and the manifest-driven loader."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Protocol, Sequence, Tuple, runtime_checkable

from ..core import ClassScores, Detection
from ..errors import UnsupportedTask
from ..imaging import ImageSource
from .manifest import BackendInfo, ModelManifest, ModelTask, verify_artifact
from .oracle import OracleClassifier, OracleDetector, load_oracle_artifact

TORCH_SUFFIXES = (".pt", ".pth")


@runtime_checkable
class DetectorBackend(Protocol):
    info: Optional[BackendInfo]

    def detect(self, image: ImageSource, conf_threshold: float = 0.0) -> list[Detection]:
        ...


@runtime_checkable
class ClassifierBackend(Protocol):
    info: Optional[BackendInfo]
    class_labels: Tuple[str, ...]
    input_size_px: int

    def classify(self, crop: ImageSource) -> ClassScores:
        ...


def load_backend(manifest: ModelManifest):
    """Load a backend handle for a manifest after verifying its artifact.

    Dispatches on the artifact file: oracle JSON bundles reconstruct the
    synthetic backends; torch bundles reconstruct trained classifiers.
    """
    artifact = verify_artifact(manifest)
    suffix = artifact.suffix.lower()

    if suffix == ".json":
        backend = load_oracle_artifact(manifest, artifact)
        if backend is None:
            raise UnsupportedTask(f"artifact {artifact} is not an oracle bundle")
    elif suffix in TORCH_SUFFIXES:
        from .cnn import load_classifier_artifact  # torch import deferred

        backend = load_classifier_artifact(manifest, artifact)
    else:
        raise UnsupportedTask(f"no loader for artifact {artifact.name!r}")

    is_detector = isinstance(backend, OracleDetector)
    if manifest.task is ModelTask.DETECTOR and not is_detector:
        raise UnsupportedTask(f"{artifact.name} does not provide a detector")
    if manifest.task is ModelTask.CLASSIFIER and is_detector:
        raise UnsupportedTask(f"{artifact.name} does not provide a classifier")
    return backend
