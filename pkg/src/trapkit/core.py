"""Domain types and box geometry shared by every other module.

All types here are immutable after construction and validate their
invariants eagerly, so downstream code never re-checks them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Iterable, Mapping, Optional, Tuple

_EPS = 1e-6


class DetectionCategory(str, Enum):
    ANIMAL = "animal"
    PERSON = "person"
    VEHICLE = "vehicle"

    def __str__(self) -> str:  # keep f-strings tidy
        return self.value


# Class-id convention of the MegaDetector output ecosystem (Timelapse/EcoAssist).
CATEGORY_TO_MD_ID = {
    DetectionCategory.ANIMAL: "1",
    DetectionCategory.PERSON: "2",
    DetectionCategory.VEHICLE: "3",
}
MD_ID_TO_CATEGORY = {v: k for k, v in CATEGORY_TO_MD_ID.items()}


@dataclass(frozen=True)
class BBox:
    """Normalized [x_min, y_min, width, height] box, fractions of image dims."""

    x_min: float
    y_min: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.x_min >= 0 and self.y_min >= 0):
            raise ValueError(f"box origin must be non-negative: {self}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"box sides must be positive: {self}")
        if self.x_min + self.width > 1 + _EPS or self.y_min + self.height > 1 + _EPS:
            raise ValueError(f"box extends past the unit square: {self}")

    @property
    def x_max(self) -> float:
        return self.x_min + self.width

    @property
    def y_max(self) -> float:
        return self.y_min + self.height

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list:
        return [self.x_min, self.y_min, self.width, self.height]


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two normalized boxes; 0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _round_half_up(v: float) -> int:
    # round-half-away-from-zero; inputs here are always >= 0
    return int(math.floor(v + 0.5))


def to_absolute(b: BBox, width_px: int, height_px: int) -> Tuple[int, int, int, int]:
    """Convert a normalized box to an integer pixel box clamped inside the image.

    Returns (x, y, w, h) with w, h >= 1 and x+w <= width_px, y+h <= height_px.
    """
    if width_px < 1 or height_px < 1:
        raise ValueError("image dimensions must be >= 1")
    w = max(1, min(width_px, _round_half_up(b.width * width_px)))
    h = max(1, min(height_px, _round_half_up(b.height * height_px)))
    x = min(max(0, _round_half_up(b.x_min * width_px)), width_px - w)
    y = min(max(0, _round_half_up(b.y_min * height_px)), height_px - h)
    return x, y, w, h


@dataclass(frozen=True)
class Detection:
    """One detected object."""

    bbox: BBox
    category: DetectionCategory
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0,1]: {self.confidence}")
        if not isinstance(self.category, DetectionCategory):
            object.__setattr__(self, "category", DetectionCategory(self.category))


class ClassScores:
    """Ordered label -> probability map; probabilities sum to 1 (within 1e-6)."""

    __slots__ = ("_labels", "_probs")

    def __init__(self, scores: Mapping[str, float] | Iterable[Tuple[str, float]]):
        pairs = list(scores.items()) if isinstance(scores, Mapping) else list(scores)
        if not pairs:
            raise ValueError("ClassScores must be nonempty")
        labels = tuple(label for label, _ in pairs)
        probs = tuple(float(p) for _, p in pairs)
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate labels in ClassScores")
        for label, p in zip(labels, probs):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability out of [0,1] for {label!r}: {p}")
        total = math.fsum(probs)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {total}, not 1")
        self._labels = labels
        self._probs = probs

    @property
    def labels(self) -> Tuple[str, ...]:
        return self._labels

    @property
    def probs(self) -> Tuple[float, ...]:
        return self._probs

    def prob(self, label: str) -> float:
        return self._probs[self._labels.index(label)]

    def top(self) -> Tuple[str, float]:
        """Highest-probability (label, prob); first label wins exact ties."""
        best = max(range(len(self._probs)), key=lambda i: (self._probs[i], -i))
        return self._labels[best], self._probs[best]

    def items(self) -> Iterable[Tuple[str, float]]:
        return zip(self._labels, self._probs)

    def as_dict(self) -> dict:
        return dict(self.items())

    def __len__(self) -> int:
        return len(self._labels)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ClassScores)
            and self._labels == other._labels
            and self._probs == other._probs
        )

    def __repr__(self) -> str:
        top_label, top_p = self.top()
        return f"ClassScores({len(self)} classes, top={top_label!r}@{top_p:.3f})"


@dataclass(frozen=True)
class ImageRef:
    """Reference to an image on disk plus the metadata the toolkit cares about.

    Dimensions are optional because results parsed back from interchange
    formats may not know them; they are validated when present.
    """

    path: str
    width_px: Optional[int] = None
    height_px: Optional[int] = None
    capture_time: Optional[datetime] = None
    location_id: Optional[str] = None
    gps: Optional[Tuple[float, float]] = None  # (lat, lon) degrees

    def __post_init__(self):
        for dim in (self.width_px, self.height_px):
            if dim is not None and dim < 1:
                raise ValueError(f"image dimensions must be >= 1: {self}")
        if self.gps is not None:
            lat, lon = self.gps
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise ValueError(f"gps out of range: {self.gps}")
            object.__setattr__(self, "gps", (float(lat), float(lon)))

    @property
    def has_dimensions(self) -> bool:
        return self.width_px is not None and self.height_px is not None
