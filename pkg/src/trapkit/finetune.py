"""Classifier fine-tuning over crop datasets.

Default recipe: 60 epochs, batch 128, SGD(momentum 0.9), step LR schedule
(factor 0.1 every 20 epochs). The learning rate for epoch e is always set
from the closed form initial_lr * gamma^floor(e / step) rather than by
mutating state, so logged schedules are exact.

Crops are materialized as one host tensor up front; this module targets
crop datasets (small images), not full-frame training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import torch
from torch import nn

from .backends.cnn import (
    TINY_BACKBONE,
    TorchClassifierBackend,
    build_backbone,
    image_to_tensor,
    save_classifier_artifact,
)
from .backends.manifest import (
    ModelManifest,
    ModelTask,
    compute_checksum,
    manifest_path,
    write_manifest,
)
from .datakit import CropRecord
from .errors import EmptyDataset, ShapeMismatch, TooFewClasses
from .imaging import load_image

DEFAULT_BACKBONE = "resnet50-class"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 128
    optimizer: str = "sgd"
    initial_lr: float = 0.01
    momentum: float = 0.9
    lr_step_epochs: int = 20
    lr_gamma: float = 0.1
    backbone_id: str = DEFAULT_BACKBONE
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer != "sgd":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if not 0 < self.lr_gamma <= 1:
            raise ValueError("lr_gamma must lie in (0, 1]")
        if self.lr_step_epochs < 1:
            raise ValueError("lr_step_epochs must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.initial_lr * self.lr_gamma ** (epoch // self.lr_step_epochs)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: float

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "lr": self.lr,
            "train_loss": self.train_loss,
            "val_accuracy": self.val_accuracy,
        }


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    batches_per_epoch: int = 0

    @property
    def best_val_accuracy(self) -> float:
        return self.records[self.best_epoch].val_accuracy

    def write_log(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record.to_json()) + "\n")
        return path


def _load_crop_tensors(
    crops: Sequence[CropRecord], label_index: dict
) -> tuple:
    """All crops as one (N,3,S,S) tensor plus label indices; sizes must agree."""
    images = []
    targets = []
    size = None
    for record in crops:
        img = load_image(record.crop_path)
        if size is None:
            size = img.size
        elif img.size != size:
            raise ShapeMismatch(
                f"crop {record.crop_path} is {img.size}, expected {size}"
            )
        images.append(image_to_tensor(img))
        targets.append(label_index[record.label])
    return torch.stack(images), torch.tensor(targets, dtype=torch.long), size[0]


def train(
    train_crops: Sequence[CropRecord],
    val_crops: Sequence[CropRecord],
    config: TrainConfig = TrainConfig(),
    log_path: Optional[Union[str, Path]] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    progress_sink: Optional[Callable[[int, int], None]] = None,
) -> tuple:
    """Fine-tune a classifier; returns (backend, history).

    The returned backend carries the best-epoch weights (highest validation
    accuracy, earliest on ties); when checkpoint_dir is given that checkpoint
    is also persisted as best.pt.
    """
    if not train_crops or not val_crops:
        raise EmptyDataset("train and val crop lists must be nonempty")
    labels = sorted({c.label for c in train_crops})
    if len(labels) < 2:
        raise TooFewClasses(f"need >= 2 distinct labels, found {len(labels)}")
    stray = sorted({c.label for c in val_crops} - set(labels))
    if stray:
        raise ValueError(f"val labels not present in train set: {', '.join(stray)}")

    label_index = {label: i for i, label in enumerate(labels)}
    train_x, train_y, input_size = _load_crop_tensors(train_crops, label_index)
    val_x, val_y, val_size = _load_crop_tensors(val_crops, label_index)
    if val_size != input_size:
        raise ShapeMismatch(f"val crops are {val_size}px, train crops {input_size}px")

    torch.manual_seed(config.seed)
    model = build_backbone(config.backbone_id, len(labels), input_size)
    optimizer = torch.optim.SGD(
        model.parameters(), lr=config.lr_at(0), momentum=config.momentum
    )
    loss_fn = nn.CrossEntropyLoss()

    n = len(train_crops)
    batches = -(-n // config.batch_size)
    history = TrainHistory(batches_per_epoch=batches)
    best_acc = -1.0
    best_state = None

    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr

        shuffle = torch.randperm(
            n, generator=torch.Generator().manual_seed(config.seed * 100003 + epoch)
        )
        model.train()
        loss_sum = 0.0
        for b in range(batches):
            idx = shuffle[b * config.batch_size : (b + 1) * config.batch_size]
            optimizer.zero_grad()
            loss = loss_fn(model(train_x[idx]), train_y[idx])
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * len(idx)

        val_accuracy = _accuracy(model, val_x, val_y, config.batch_size)
        history.records.append(
            EpochRecord(
                epoch=epoch,
                lr=lr,
                train_loss=loss_sum / n,
                val_accuracy=val_accuracy,
            )
        )
        if val_accuracy > best_acc:
            best_acc = val_accuracy
            history.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if progress_sink is not None:
            progress_sink(epoch + 1, config.epochs)

    model.load_state_dict(best_state)
    backend = TorchClassifierBackend(
        model,
        class_labels=labels,
        input_size_px=input_size,
        backbone_id=config.backbone_id,
    )
    if log_path is not None:
        history.write_log(log_path)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        save_classifier_artifact(backend, checkpoint_dir / "best.pt")
    return backend, history


def _accuracy(model: nn.Module, x: torch.Tensor, y: torch.Tensor, batch_size: int) -> float:
    model.eval()
    correct = 0
    with torch.no_grad():
        for b in range(0, len(x), batch_size):
            pred = model(x[b : b + batch_size]).argmax(dim=1)
            correct += int((pred == y[b : b + batch_size]).sum())
    return correct / len(x)


# --- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    per_class_accuracy: dict
    confusion: dict  # true label -> {predicted label -> count}

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion,
        }


def evaluate_classifier(backend, crops: Sequence[CropRecord]) -> EvalReport:
    """Accuracy, per-class accuracy, and confusion counts over labeled crops."""
    if not crops:
        raise EmptyDataset("no crops to evaluate")
    known = set(backend.class_labels)
    stray = sorted({c.label for c in crops} - known)
    if stray:
        raise ValueError(f"crop labels outside backend label set: {', '.join(stray)}")

    size = backend.input_size_px
    confusion: dict = {}
    correct = 0
    for record in crops:
        img = load_image(record.crop_path)
        if img.size != (size, size):
            img = img.resize((size, size))
        predicted, _ = backend.classify(img).top()
        row = confusion.setdefault(record.label, {})
        row[predicted] = row.get(predicted, 0) + 1
        if predicted == record.label:
            correct += 1

    per_class = {
        label: row.get(label, 0) / sum(row.values())
        for label, row in confusion.items()
    }
    return EvalReport(
        accuracy=correct / len(crops),
        per_class_accuracy=per_class,
        confusion=confusion,
    )


# --- export ---------------------------------------------------------------------


def export_model(
    backend: TorchClassifierBackend,
    zoo_dir: Union[str, Path],
    model_id: str,
    version: str = "1.0",
    description: str = "",
    region_tags: Sequence[str] = (),
) -> ModelManifest:
    """Write the trained backend into a zoo directory as artifact + manifest."""
    zoo_dir = Path(zoo_dir)
    zoo_dir.mkdir(parents=True, exist_ok=True)
    artifact = zoo_dir / f"{model_id}-{version}.pt"
    save_classifier_artifact(backend, artifact)
    manifest = ModelManifest(
        model_id=model_id,
        version=version,
        task=ModelTask.CLASSIFIER,
        class_labels=tuple(backend.class_labels),
        artifact_path=str(artifact),
        checksum=compute_checksum(artifact),
        input_size_px=backend.input_size_px,
        description=description,
        region_tags=tuple(region_tags),
    )
    write_manifest(manifest, manifest_path(zoo_dir, manifest))
    return manifest


# --- gradient sanity --------------------------------------------------------------


def gradient_check(
    backbone_id: str = TINY_BACKBONE,
    input_size_px: int = 32,
    num_classes: int = 3,
    probe_params: int = 10,
    seed: int = 0,
    step: float = 1e-6,
) -> float:
    """Max relative error between autograd and central finite differences.

    Probes the highest-gradient scalar parameters (well-conditioned for the
    relative comparison) in float64. Run once per backbone implementation.
    """
    torch.manual_seed(seed)
    model = build_backbone(backbone_id, num_classes, input_size_px).double()
    x = torch.rand(4, 3, input_size_px, input_size_px, dtype=torch.float64)
    y = torch.randint(0, num_classes, (4,))
    loss_fn = nn.CrossEntropyLoss()

    model.zero_grad()
    loss_fn(model(x), y).backward()

    entries = []
    for p_idx, param in enumerate(model.parameters()):
        grad = param.grad.reshape(-1)
        for flat in range(grad.numel()):
            entries.append((abs(float(grad[flat])), p_idx, flat))
    entries.sort(reverse=True)
    probes = entries[:probe_params]

    params = list(model.parameters())

    def loss_value() -> float:
        with torch.no_grad():
            return float(loss_fn(model(x), y))

    worst = 0.0
    for _, p_idx, flat in probes:
        param = params[p_idx]
        flat_view = param.data.reshape(-1)
        original = float(flat_view[flat])
        h = step * max(1.0, abs(original))
        flat_view[flat] = original + h
        plus = loss_value()
        flat_view[flat] = original - h
        minus = loss_value()
        flat_view[flat] = original
        numeric = (plus - minus) / (2 * h)
        analytic = float(param.grad.reshape(-1)[flat])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, rel)
    return worst
