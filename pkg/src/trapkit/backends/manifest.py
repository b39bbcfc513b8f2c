"""Model-zoo manifests: one JSON document per model, checksum-pinned artifact."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple, Union

from ..errors import ArtifactNotFound, ChecksumMismatch

MANIFEST_SUFFIX = ".manifest.json"


class ModelTask(str, Enum):
    DETECTOR = "detector"
    CLASSIFIER = "classifier"


@dataclass(frozen=True)
class ModelManifest:
    """Zoo entry describing one model artifact."""

    model_id: str
    version: str
    task: ModelTask
    class_labels: Tuple[str, ...]
    artifact_path: str
    checksum: str  # sha-256 hex digest of the artifact file
    input_size_px: int
    description: str = ""
    region_tags: Tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.task, ModelTask):
            object.__setattr__(self, "task", ModelTask(self.task))
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        object.__setattr__(self, "region_tags", tuple(self.region_tags))
        if self.task is ModelTask.CLASSIFIER and not self.class_labels:
            raise ValueError(f"classifier manifest {self.model_id} has no class labels")
        if self.input_size_px < 1:
            raise ValueError("input_size_px must be >= 1")

    @property
    def key(self) -> Tuple[str, str]:
        return self.model_id, self.version

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "version": self.version,
            "task": self.task.value,
            "class_labels": list(self.class_labels),
            "artifact_path": self.artifact_path,
            "checksum": self.checksum,
            "input_size_px": self.input_size_px,
            "description": self.description,
            "region_tags": list(self.region_tags),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ModelManifest":
        return cls(
            model_id=doc["model_id"],
            version=doc["version"],
            task=ModelTask(doc["task"]),
            class_labels=tuple(doc.get("class_labels", ())),
            artifact_path=doc["artifact_path"],
            checksum=doc["checksum"],
            input_size_px=int(doc["input_size_px"]),
            description=doc.get("description", ""),
            region_tags=tuple(doc.get("region_tags", ())),
        )


@dataclass(frozen=True)
class BackendInfo:
    """Runtime facts about a loaded backend."""

    manifest: ModelManifest
    supports_concurrent_inference: bool
    parameter_count: Optional[int] = None

    def __post_init__(self):
        if self.parameter_count is not None and self.parameter_count <= 0:
            raise ValueError("parameter_count must be > 0 when present")


def compute_checksum(path: Union[str, Path]) -> str:
    """SHA-256 hex digest of a file."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def verify_artifact(manifest: ModelManifest) -> Path:
    """Check the manifest's artifact exists and matches its checksum."""
    path = Path(manifest.artifact_path)
    if not path.is_file():
        raise ArtifactNotFound(f"artifact missing for {manifest.model_id}: {path}")
    actual = compute_checksum(path)
    if actual != manifest.checksum:
        raise ChecksumMismatch(
            f"artifact checksum mismatch for {manifest.model_id}: "
            f"expected {manifest.checksum}, got {actual}"
        )
    return path


def manifest_path(zoo_dir: Union[str, Path], manifest: ModelManifest) -> Path:
    return Path(zoo_dir) / f"{manifest.model_id}-{manifest.version}{MANIFEST_SUFFIX}"


def write_manifest(manifest: ModelManifest, path: Union[str, Path]) -> Path:
    """Write a manifest document; artifact path is stored relative when it can be."""
    path = Path(path)
    doc = manifest.to_json()
    artifact = Path(manifest.artifact_path)
    try:
        doc["artifact_path"] = str(artifact.relative_to(path.parent))
    except ValueError:
        doc["artifact_path"] = str(artifact)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(path: Union[str, Path]) -> ModelManifest:
    """Read a manifest document, resolving the artifact path against its location."""
    path = Path(path)
    manifest = ModelManifest.from_json(json.loads(path.read_text(encoding="utf-8")))
    artifact = Path(manifest.artifact_path)
    if not artifact.is_absolute():
        manifest = replace(manifest, artifact_path=str(path.parent / artifact))
    return manifest


def scan_zoo(zoo_dir: Union[str, Path]) -> list[ModelManifest]:
    """All manifests in a zoo directory; (model_id, version) must be unique."""
    manifests = []
    seen = {}
    for p in sorted(Path(zoo_dir).glob(f"*{MANIFEST_SUFFIX}")):
        manifest = read_manifest(p)
        if manifest.key in seen:
            raise ValueError(
                f"duplicate model {manifest.model_id} v{manifest.version} "
                f"in {p} and {seen[manifest.key]}"
            )
        seen[manifest.key] = p
        manifests.append(manifest)
    return manifests


def find_manifest(
    zoo_dir: Union[str, Path], model_id: str, version: Optional[str] = None
) -> ModelManifest:
    """Look up a model by id (latest version when unspecified)."""
    candidates = [m for m in scan_zoo(zoo_dir) if m.model_id == model_id]
    if version is not None:
        candidates = [m for m in candidates if m.version == version]
    if not candidates:
        raise ArtifactNotFound(f"no manifest for model {model_id!r} in {zoo_dir}")
    return max(candidates, key=lambda m: m.version)
