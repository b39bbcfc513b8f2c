"""Detector/classifier backends, model manifests and the synthetic oracle."""

from .base import ClassifierBackend, DetectorBackend, load_backend
from .manifest import (
    BackendInfo,
    ModelManifest,
    ModelTask,
    compute_checksum,
    find_manifest,
    manifest_path,
    read_manifest,
    scan_zoo,
    verify_artifact,
    write_manifest,
)
from .oracle import (
    OracleClassifier,
    OracleDetector,
    OracleNoise,
    SidecarBox,
    default_palette,
    install_oracle_classifier,
    install_oracle_detector,
    read_sidecar,
    sidecar_path,
    write_sidecar,
)

__all__ = [
    "BackendInfo",
    "ClassifierBackend",
    "DetectorBackend",
    "ModelManifest",
    "ModelTask",
    "OracleClassifier",
    "OracleDetector",
    "OracleNoise",
    "SidecarBox",
    "compute_checksum",
    "default_palette",
    "find_manifest",
    "install_oracle_classifier",
    "install_oracle_detector",
    "load_backend",
    "manifest_path",
    "read_manifest",
    "read_sidecar",
    "scan_zoo",
    "sidecar_path",
    "verify_artifact",
    "write_manifest",
    "write_sidecar",
]
