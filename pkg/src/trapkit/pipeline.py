"""Detection -> filter -> crop -> classify orchestration and triage.

Single images, ordered batches with per-image error isolation, and the
confidence partition used for human-in-the-loop review.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

from PIL import Image

from .backends.base import ClassifierBackend, DetectorBackend
from .core import BBox, ClassScores, Detection, DetectionCategory, ImageRef, _round_half_up
from .errors import DegenerateBox, EmptyBatch, ImageDecodeError, BackendError
from .imaging import ImageSource, load_image

ProgressSink = Callable[[int, int], None]

#: (detection, classification scores or None when the category is not classified)
ClassifiedDetection = Tuple[Detection, Optional[ClassScores]]


@dataclass(frozen=True)
class PipelineConfig:
    det_threshold: float = 0.2
    clf_threshold: float = 0.98
    crop_size_px: int = 256
    classify_categories: frozenset = frozenset({DetectionCategory.ANIMAL})

    def __post_init__(self):
        for name in ("det_threshold", "clf_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} out of [0,1]: {value}")
        if self.crop_size_px < 8:
            raise ValueError(f"crop_size_px must be >= 8: {self.crop_size_px}")
        object.__setattr__(
            self,
            "classify_categories",
            frozenset(DetectionCategory(c) for c in self.classify_categories),
        )


@dataclass
class PipelineResult:
    """Per-image outcome; error results carry a message and no detections."""

    image: ImageRef
    detections: list[ClassifiedDetection] = field(default_factory=list)
    is_empty: bool = True
    needs_review: bool = False
    error: Optional[str] = None

    @classmethod
    def build(
        cls,
        image: ImageRef,
        detections: Sequence[ClassifiedDetection],
        clf_threshold: float,
    ) -> "PipelineResult":
        detections = list(detections)
        return cls(
            image=image,
            detections=detections,
            is_empty=not detections,
            needs_review=_needs_review(detections, clf_threshold),
        )

    @classmethod
    def failed(cls, image: ImageRef, error: str) -> "PipelineResult":
        return cls(image=image, error=error)

    def max_detection_conf(self) -> float:
        return max((d.confidence for d, _ in self.detections), default=0.0)


def _needs_review(detections: Sequence[ClassifiedDetection], threshold: float) -> bool:
    return any(
        scores is not None and scores.top()[1] < threshold
        for _, scores in detections
    )


def expand_to_square(
    bbox: BBox, width_px: int, height_px: int
) -> Tuple[int, int, int, int]:
    """Pixel region for a crop: square of the box's longer side, shifted to
    stay inside the image (clipped only when the side exceeds a dimension)."""
    w = _round_half_up(bbox.width * width_px)
    h = _round_half_up(bbox.height * height_px)
    if w < 1 or h < 1:
        raise DegenerateBox(f"box {bbox} is under one pixel on {width_px}x{height_px}")
    x = _round_half_up(bbox.x_min * width_px)
    y = _round_half_up(bbox.y_min * height_px)
    side = max(w, h)

    def place(center: float, side: int, limit: int) -> Tuple[int, int]:
        if side >= limit:
            return 0, limit
        lo = min(max(0, _round_half_up(center) - side // 2), limit - side)
        return lo, side

    x0, side_x = place(x + w / 2, side, width_px)
    y0, side_y = place(y + h / 2, side, height_px)
    return x0, y0, side_x, side_y


def crop_detection(image: ImageSource, bbox: BBox, crop_size_px: int) -> Image.Image:
    """Square, aspect-preserving crop of a detection resized to crop_size_px."""
    img = load_image(image)
    x0, y0, w, h = expand_to_square(bbox, img.width, img.height)
    region = img.crop((x0, y0, x0 + w, y0 + h))
    return region.resize((crop_size_px, crop_size_px), Image.BILINEAR)


class _LockedClassifier:
    """Serializes classify() calls for backends that are not thread-safe."""

    def __init__(self, inner: ClassifierBackend):
        self._inner = inner
        self._lock = threading.Lock()
        self.info = inner.info
        self.class_labels = inner.class_labels
        self.input_size_px = inner.input_size_px

    def classify(self, crop):
        with self._lock:
            return self._inner.classify(crop)


class _LockedDetector:
    def __init__(self, inner: DetectorBackend):
        self._inner = inner
        self._lock = threading.Lock()
        self.info = inner.info

    def detect(self, image, conf_threshold=0.0):
        with self._lock:
            return self._inner.detect(image, conf_threshold)


def _serialize_if_needed(backend, wrapper):
    if backend is None:
        return None
    info = getattr(backend, "info", None)
    if info is not None and not info.supports_concurrent_inference:
        return wrapper(backend)
    return backend


def _classifier_crop_size(clf: Optional[ClassifierBackend], config: PipelineConfig) -> int:
    if clf is not None and getattr(clf, "input_size_px", None):
        return clf.input_size_px
    return config.crop_size_px


def run_image(
    image: ImageRef,
    det: DetectorBackend,
    clf: Optional[ClassifierBackend] = None,
    config: PipelineConfig = PipelineConfig(),
) -> PipelineResult:
    """Detect, then crop+classify detections of the configured categories."""
    try:
        detections = det.detect(image, conf_threshold=config.det_threshold)
    except ImageDecodeError:
        raise
    except Exception as exc:
        raise BackendError(f"detector failed on {image.path}: {exc}") from exc

    classified: list[ClassifiedDetection] = []
    pixels: Optional[Image.Image] = None
    crop_size = _classifier_crop_size(clf, config)
    for detection in detections:
        scores = None
        if clf is not None and detection.category in config.classify_categories:
            if pixels is None:
                pixels = load_image(image)
            try:
                crop = crop_detection(pixels, detection.bbox, crop_size)
            except DegenerateBox:
                crop = None
            if crop is not None:
                try:
                    scores = clf.classify(crop)
                except ImageDecodeError:
                    raise
                except Exception as exc:
                    raise BackendError(
                        f"classifier failed on {image.path}: {exc}"
                    ) from exc
        classified.append((detection, scores))
    return PipelineResult.build(image, classified, config.clf_threshold)


def run_batch(
    images: Sequence[ImageRef],
    det: DetectorBackend,
    clf: Optional[ClassifierBackend] = None,
    config: PipelineConfig = PipelineConfig(),
    progress_sink: Optional[ProgressSink] = None,
    workers: int = 1,
) -> list[PipelineResult]:
    """Run the pipeline over a batch; per-image failures become error results.

    Results come back in input order; progress_sink(done, total) is invoked
    with monotonically increasing counts regardless of worker scheduling.
    """
    if not images:
        raise EmptyBatch("run_batch needs at least one image")
    total = len(images)
    det = _serialize_if_needed(det, _LockedDetector)
    clf = _serialize_if_needed(clf, _LockedClassifier)

    results: list[Optional[PipelineResult]] = [None] * total
    done = 0
    progress_lock = threading.Lock()

    def process(index: int, image: ImageRef) -> None:
        nonlocal done
        try:
            result = run_image(image, det, clf, config)
        except Exception as exc:
            result = PipelineResult.failed(image, str(exc))
        results[index] = result
        if progress_sink is not None:
            with progress_lock:
                done += 1
                progress_sink(done, total)
        else:
            with progress_lock:
                done += 1

    if workers <= 1:
        for i, image in enumerate(images):
            process(i, image)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(process, range(total), images))
    return results  # type: ignore[return-value]


@dataclass
class TriagePartition:
    confident: list[PipelineResult]
    review: list[PipelineResult]

    def __iter__(self):
        return iter((self.confident, self.review))


def triage(results: Sequence[PipelineResult], clf_threshold: float) -> TriagePartition:
    """Split results into auto-accepted vs needs-human-review at a threshold."""
    if not 0.0 <= clf_threshold <= 1.0:
        raise ValueError(f"clf_threshold out of [0,1]: {clf_threshold}")
    confident: list[PipelineResult] = []
    review: list[PipelineResult] = []
    for result in results:
        if _needs_review(result.detections, clf_threshold):
            review.append(_with_review(result, True))
        else:
            confident.append(_with_review(result, False))
    return TriagePartition(confident=confident, review=review)


def _with_review(result: PipelineResult, needs_review: bool) -> PipelineResult:
    if result.needs_review == needs_review:
        return result
    return replace(result, needs_review=needs_review)
