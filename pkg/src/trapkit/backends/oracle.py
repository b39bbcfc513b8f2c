"""Synthetic oracle backends driven by sidecar ground truth.

The oracle detector reads per-image sidecar annotations and replays them as
detections, optionally perturbed (box jitter, drops, spurious boxes) by an
RNG derived from (seed, image name) so results are reproducible regardless
of batch order or parallelism. The oracle classifier scores a crop by its
mean color against a per-class palette. Together they make every pipeline
and metric test runnable offline with an analytically known answer.
"""

from __future__ import annotations

import colorsys
import hashlib
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from ..core import BBox, ClassScores, Detection, DetectionCategory
from ..errors import ShapeMismatch
from ..imaging import ImageSource, load_image, source_path
from .manifest import (
    BackendInfo,
    ModelManifest,
    ModelTask,
    compute_checksum,
    manifest_path,
    write_manifest,
)

SIDECAR_SUFFIX = ".json"
EMBEDDED_KEY = "trapkit-annotations"


@dataclass(frozen=True)
class SidecarBox:
    """One ground-truth annotation: box, coarse category, optional class label."""

    bbox: BBox
    category: DetectionCategory
    label: Optional[str] = None

    def to_json(self) -> dict:
        doc = {"bbox": self.bbox.as_list(), "category": self.category.value}
        if self.label is not None:
            doc["label"] = self.label
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SidecarBox":
        return cls(
            bbox=BBox(*doc["bbox"]),
            category=DetectionCategory(doc["category"]),
            label=doc.get("label"),
        )


def sidecar_path(image_path: Union[str, Path]) -> Path:
    return Path(str(image_path) + SIDECAR_SUFFIX)


def write_sidecar(image_path: Union[str, Path], boxes: Iterable[SidecarBox]) -> Path:
    path = sidecar_path(image_path)
    path.write_text(
        json.dumps([b.to_json() for b in boxes], indent=1) + "\n", encoding="utf-8"
    )
    return path


def read_sidecar(image_path: Union[str, Path]) -> list[SidecarBox]:
    path = sidecar_path(image_path)
    entries = json.loads(path.read_text(encoding="utf-8"))
    return [SidecarBox.from_json(e) for e in entries]


def embedded_annotation_info(boxes: Iterable[SidecarBox]):
    """PNG text chunk carrying the same payload as a sidecar file.

    Pass as pnginfo= when saving; lets an image keep its ground truth when
    it travels without the sidecar (HTTP uploads land under fresh names).
    """
    from PIL import PngImagePlugin

    info = PngImagePlugin.PngInfo()
    info.add_text(EMBEDDED_KEY, json.dumps([b.to_json() for b in boxes]))
    return info


def _read_annotations(image_path: Path) -> list[SidecarBox]:
    """Sidecar file when present, embedded PNG chunk otherwise."""
    if sidecar_path(image_path).is_file():
        return read_sidecar(image_path)
    payload = None
    try:
        with Image.open(image_path) as img:
            payload = getattr(img, "text", {}).get(EMBEDDED_KEY)
    except OSError:
        pass
    if payload is None:
        raise FileNotFoundError(
            f"no annotations for {image_path}: no sidecar file, nothing embedded"
        )
    return [SidecarBox.from_json(e) for e in json.loads(payload)]


@dataclass(frozen=True)
class OracleNoise:
    """Perturbation knobs for the oracle detector; all-zero means exact replay."""

    jitter_sigma: float = 0.0
    drop_rate: float = 0.0
    spurious_rate: float = 0.0

    @property
    def is_zero(self) -> bool:
        return self.jitter_sigma == 0 and self.drop_rate == 0 and self.spurious_rate == 0


def _image_rng(seed: int, image_path: Path) -> random.Random:
    # keyed on the file name so detections don't depend on batch order,
    # worker count, or how the caller spelled the path
    digest = hashlib.sha256(f"{seed}|{image_path.name}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _clamp_box(x: float, y: float, w: float, h: float) -> BBox:
    min_side = 1e-3
    x = min(max(0.0, x), 1.0 - min_side)
    y = min(max(0.0, y), 1.0 - min_side)
    w = min(max(min_side, w), 1.0 - x)
    h = min(max(min_side, h), 1.0 - y)
    return BBox(x, y, w, h)


class OracleDetector:
    """Detector that replays (optionally perturbed) sidecar ground truth."""

    def __init__(
        self,
        noise: OracleNoise = OracleNoise(),
        seed: int = 0,
        info: Optional[BackendInfo] = None,
    ):
        self.noise = noise
        self.seed = seed
        self.info = info

    def detect(self, image: ImageSource, conf_threshold: float = 0.0) -> list[Detection]:
        if not 0.0 <= conf_threshold <= 1.0:
            raise ValueError(f"conf_threshold out of [0,1]: {conf_threshold}")
        path = source_path(image)
        truth = _read_annotations(path)
        rng = _image_rng(self.seed, path)
        noise = self.noise

        detections: list[Detection] = []
        for box in truth:
            dropped = rng.random() < noise.drop_rate
            if noise.jitter_sigma > 0:
                b = box.bbox
                jittered = _clamp_box(
                    b.x_min + rng.gauss(0, noise.jitter_sigma),
                    b.y_min + rng.gauss(0, noise.jitter_sigma),
                    b.width + rng.gauss(0, noise.jitter_sigma),
                    b.height + rng.gauss(0, noise.jitter_sigma),
                )
            else:
                jittered = box.bbox
            conf = 1.0 if noise.is_zero else rng.uniform(0.55, 1.0)
            if not dropped:
                detections.append(Detection(jittered, box.category, conf))
        if rng.random() < noise.spurious_rate:
            category = rng.choice(list(DetectionCategory))
            spurious = _clamp_box(
                rng.uniform(0.0, 0.8),
                rng.uniform(0.0, 0.8),
                rng.uniform(0.05, 0.25),
                rng.uniform(0.05, 0.25),
            )
            detections.append(Detection(spurious, category, rng.uniform(0.05, 0.75)))

        detections = [d for d in detections if d.confidence >= conf_threshold]
        detections.sort(key=lambda d: -d.confidence)
        return detections


def default_palette(labels: Sequence[str]) -> dict[str, Tuple[int, int, int]]:
    """Deterministic, well-separated RGB color per label (hue-spaced)."""
    colors = {}
    n = max(1, len(labels))
    for i, label in enumerate(labels):
        r, g, b = colorsys.hsv_to_rgb(i / n, 1.0, 1.0)
        colors[label] = (round(r * 255), round(g * 255), round(b * 255))
    return colors


class OracleClassifier:
    """Classifier keyed on a crop's mean color.

    Scores are a softmax over negative distances from the mean RGB to each
    class's palette color; a crop far from every palette color (e.g. noise)
    is "uncertain" and yields the uniform distribution.
    """

    def __init__(
        self,
        class_labels: Sequence[str],
        color_map: Optional[dict[str, Tuple[int, int, int]]] = None,
        input_size_px: int = 256,
        temperature: float = 20.0,
        uncertain_distance: float = 60.0,
        info: Optional[BackendInfo] = None,
    ):
        if not class_labels:
            raise ValueError("class_labels must be nonempty")
        self.class_labels = tuple(class_labels)
        self.color_map = dict(color_map) if color_map else default_palette(self.class_labels)
        missing = [l for l in self.class_labels if l not in self.color_map]
        if missing:
            raise ValueError(f"color_map missing labels: {missing}")
        self.input_size_px = input_size_px
        self.temperature = temperature
        self.uncertain_distance = uncertain_distance
        self.info = info

    def classify(self, crop: ImageSource) -> ClassScores:
        img = crop if isinstance(crop, Image.Image) else load_image(crop)
        expected = (self.input_size_px, self.input_size_px)
        if img.size != expected:
            raise ShapeMismatch(f"crop is {img.size}, backend expects {expected}")
        mean = np.asarray(img.convert("RGB"), dtype=np.float64).reshape(-1, 3).mean(axis=0)
        dists = [
            math.dist(mean, self.color_map[label]) for label in self.class_labels
        ]
        k = len(self.class_labels)
        if min(dists) > self.uncertain_distance:
            return ClassScores([(label, 1.0 / k) for label in self.class_labels])
        logits = [-d / self.temperature for d in dists]
        peak = max(logits)
        weights = [math.exp(l - peak) for l in logits]
        total = math.fsum(weights)
        return ClassScores(
            [(label, w / total) for label, w in zip(self.class_labels, weights)]
        )


# --- artifact plumbing -------------------------------------------------------
#
# Oracle backends are regular zoo citizens: a small JSON artifact holds their
# parameters, and load_backend() reconstructs them from it.

ORACLE_DETECTOR_KIND = "oracle-detector"
ORACLE_CLASSIFIER_KIND = "oracle-classifier"


def _write_artifact(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def install_oracle_detector(
    zoo_dir: Union[str, Path],
    model_id: str = "oracle-detector",
    version: str = "1.0",
    noise: OracleNoise = OracleNoise(),
    seed: int = 0,
    description: str = "Synthetic detector replaying sidecar ground truth",
) -> ModelManifest:
    """Write an oracle-detector artifact + manifest into a zoo directory."""
    zoo_dir = Path(zoo_dir)
    artifact = zoo_dir / f"{model_id}-{version}.oracle.json"
    _write_artifact(
        artifact,
        {
            "kind": ORACLE_DETECTOR_KIND,
            "jitter_sigma": noise.jitter_sigma,
            "drop_rate": noise.drop_rate,
            "spurious_rate": noise.spurious_rate,
            "seed": seed,
        },
    )
    manifest = ModelManifest(
        model_id=model_id,
        version=version,
        task=ModelTask.DETECTOR,
        class_labels=tuple(c.value for c in DetectionCategory),
        artifact_path=str(artifact),
        checksum=compute_checksum(artifact),
        input_size_px=1,
        description=description,
    )
    write_manifest(manifest, manifest_path(zoo_dir, manifest))
    return manifest


def install_oracle_classifier(
    zoo_dir: Union[str, Path],
    class_labels: Sequence[str],
    model_id: str = "oracle-classifier",
    version: str = "1.0",
    color_map: Optional[dict[str, Tuple[int, int, int]]] = None,
    input_size_px: int = 256,
    description: str = "Synthetic classifier keyed on mean crop color",
) -> ModelManifest:
    """Write an oracle-classifier artifact + manifest into a zoo directory."""
    zoo_dir = Path(zoo_dir)
    artifact = zoo_dir / f"{model_id}-{version}.oracle.json"
    colors = dict(color_map) if color_map else default_palette(tuple(class_labels))
    _write_artifact(
        artifact,
        {
            "kind": ORACLE_CLASSIFIER_KIND,
            "class_labels": list(class_labels),
            "color_map": {k: list(v) for k, v in colors.items()},
            "input_size_px": input_size_px,
        },
    )
    manifest = ModelManifest(
        model_id=model_id,
        version=version,
        task=ModelTask.CLASSIFIER,
        class_labels=tuple(class_labels),
        artifact_path=str(artifact),
        checksum=compute_checksum(artifact),
        input_size_px=input_size_px,
        description=description,
    )
    write_manifest(manifest, manifest_path(zoo_dir, manifest))
    return manifest


def load_oracle_artifact(manifest: ModelManifest, artifact: Path):
    """Build an oracle backend from its JSON artifact; None if not an oracle."""
    try:
        doc = json.loads(artifact.read_text(encoding="utf-8"))
    except (ValueError, UnicodeDecodeError):
        return None
    kind = doc.get("kind")
    if kind == ORACLE_DETECTOR_KIND:
        backend = OracleDetector(
            noise=OracleNoise(
                jitter_sigma=doc.get("jitter_sigma", 0.0),
                drop_rate=doc.get("drop_rate", 0.0),
                spurious_rate=doc.get("spurious_rate", 0.0),
            ),
            seed=doc.get("seed", 0),
        )
    elif kind == ORACLE_CLASSIFIER_KIND:
        backend = OracleClassifier(
            class_labels=doc["class_labels"],
            color_map={k: tuple(v) for k, v in doc["color_map"].items()},
            input_size_px=doc.get("input_size_px", 256),
        )
    else:
        return None
    backend.info = BackendInfo(manifest=manifest, supports_concurrent_inference=True)
    return backend
