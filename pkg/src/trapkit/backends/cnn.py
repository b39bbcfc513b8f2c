"""Torch classifier backends: a tiny reference backbone plus optional ResNet-50.

The tiny backbone exists so training and serving are testable without any
pretrained weights; the heavier backbone sits behind the same interface.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from PIL import Image
from torch import nn

from ..core import ClassScores
from ..errors import ShapeMismatch, UnsupportedTask
from ..imaging import ImageSource, load_image
from .manifest import BackendInfo, ModelManifest

TINY_BACKBONE = "tiny-conv"
RESNET50_BACKBONE = "resnet50-class"
ARTIFACT_FORMAT = "trapkit-classifier-v1"


class TinyConvNet(nn.Module):
    """Few-layer conv net; a leading average pool keeps big crops cheap."""

    def __init__(self, num_classes: int, input_size_px: int = 256):
        super().__init__()
        pool = max(1, input_size_px // 32)
        self.pool_in = nn.AvgPool2d(pool) if pool > 1 else nn.Identity()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )
        self.head = nn.Linear(32, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.pool_in(x)
        x = self.features(x)
        x = x.mean(dim=(2, 3))
        return self.head(x)


def build_backbone(backbone_id: str, num_classes: int, input_size_px: int) -> nn.Module:
    if backbone_id == TINY_BACKBONE:
        return TinyConvNet(num_classes, input_size_px)
    if backbone_id == RESNET50_BACKBONE:
        try:
            from torchvision.models import resnet50
        except ImportError as exc:
            raise UnsupportedTask(
                f"backbone {backbone_id!r} needs torchvision installed"
            ) from exc
        model = resnet50(weights=None)
        model.fc = nn.Linear(model.fc.in_features, num_classes)
        return model
    raise UnsupportedTask(f"unknown backbone {backbone_id!r}")


def image_to_tensor(img: Image.Image) -> torch.Tensor:
    """RGB image -> float32 CHW tensor in [0,1]; the train/serve preprocessing."""
    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


class TorchClassifierBackend:
    """Serves a trained torch classifier behind the classify() contract."""

    def __init__(
        self,
        model: nn.Module,
        class_labels: Sequence[str],
        input_size_px: int,
        backbone_id: str = TINY_BACKBONE,
        info: Optional[BackendInfo] = None,
    ):
        self.model = model.eval()
        self.class_labels = tuple(class_labels)
        self.input_size_px = input_size_px
        self.backbone_id = backbone_id
        self.info = info

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.model.parameters())

    def _validate(self, img: Image.Image) -> Image.Image:
        expected = (self.input_size_px, self.input_size_px)
        if img.size != expected:
            raise ShapeMismatch(f"crop is {img.size}, backend expects {expected}")
        return img

    def classify(self, crop: ImageSource) -> ClassScores:
        img = crop if isinstance(crop, Image.Image) else load_image(crop)
        batch = image_to_tensor(self._validate(img)).unsqueeze(0)
        with torch.no_grad():
            probs = torch.softmax(self.model(batch), dim=1)[0].tolist()
        total = sum(probs)
        return ClassScores(
            [(l, p / total) for l, p in zip(self.class_labels, probs)]
        )

    def classify_batch(self, crops: Sequence[ImageSource]) -> list[ClassScores]:
        imgs = [
            self._validate(c if isinstance(c, Image.Image) else load_image(c))
            for c in crops
        ]
        batch = torch.stack([image_to_tensor(img) for img in imgs])
        with torch.no_grad():
            probs = torch.softmax(self.model(batch), dim=1).tolist()
        out = []
        for row in probs:
            total = sum(row)
            out.append(ClassScores([(l, p / total) for l, p in zip(self.class_labels, row)]))
        return out


def save_classifier_artifact(backend: TorchClassifierBackend, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": ARTIFACT_FORMAT,
            "backbone_id": backend.backbone_id,
            "class_labels": list(backend.class_labels),
            "input_size_px": backend.input_size_px,
            "state_dict": backend.model.state_dict(),
        },
        path,
    )
    return path


def load_classifier_artifact(manifest: ModelManifest, artifact: Path) -> TorchClassifierBackend:
    payload = torch.load(artifact, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != ARTIFACT_FORMAT:
        raise UnsupportedTask(f"artifact {artifact} is not a {ARTIFACT_FORMAT} bundle")
    model = build_backbone(
        payload["backbone_id"], len(payload["class_labels"]), payload["input_size_px"]
    )
    model.load_state_dict(payload["state_dict"])
    backend = TorchClassifierBackend(
        model,
        class_labels=payload["class_labels"],
        input_size_px=payload["input_size_px"],
        backbone_id=payload["backbone_id"],
    )
    backend.info = BackendInfo(
        manifest=manifest,
        supports_concurrent_inference=False,
        parameter_count=backend.parameter_count,
    )
    return backend
