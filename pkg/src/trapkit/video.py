"""Video inference: capped-rate frame sampling and majority-vote aggregation.

Two sources are supported behind one reader interface: a frame-sequence
directory (numbered frame images plus a small metadata file declaring the
native fps and frame count — the form every test uses) and, when OpenCV is
available, ordinary video containers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

from .backends.base import ClassifierBackend, DetectorBackend
from .core import ImageRef
from .errors import EmptyVote, VideoDecodeError
from .imaging import IMAGE_EXTENSIONS, image_size
from .pipeline import PipelineConfig, PipelineResult, run_image

EMPTY_LABEL = "empty"
FRAME_SEQUENCE_META = "video.json"


@dataclass(frozen=True)
class FrameSample:
    index: int
    timestamp_s: float
    image: ImageRef


@dataclass
class VideoResult:
    video: str
    frame_results: list[PipelineResult]
    vote_tally: dict[str, int]
    final_label: str
    effective_fps: float


class FrameSequenceDir:
    """Reader over a directory of numbered frames + a metadata file.

    Metadata: {"native_fps": float, "frame_count": int} (frame_count may be
    omitted when it equals the number of frame files).
    """

    def __init__(self, root: Union[str, Path]):
        root = Path(root)
        meta_path = root / FRAME_SEQUENCE_META
        if not meta_path.is_file():
            raise VideoDecodeError(f"{root} is not a frame sequence (no {FRAME_SEQUENCE_META})")
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            self.native_fps = float(meta["native_fps"])
        except (ValueError, KeyError) as exc:
            raise VideoDecodeError(f"bad metadata in {meta_path}: {exc}") from exc
        self.frames = sorted(
            p for p in root.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        declared = meta.get("frame_count")
        if declared is not None and int(declared) != len(self.frames):
            raise VideoDecodeError(
                f"{root}: metadata declares {declared} frames, found {len(self.frames)}"
            )
        if not self.frames or self.native_fps <= 0:
            raise VideoDecodeError(f"{root}: no frames or non-positive fps")
        self.root = root

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.native_fps

    def frame_ref(self, native_index: int) -> ImageRef:
        path = self.frames[native_index]
        w, h = image_size(path)
        return ImageRef(path=str(path), width_px=w, height_px=h)


class OpenCVVideoReader:
    """Reader over real video containers; frames are materialized to disk
    because downstream backends consume file-backed images."""

    def __init__(self, path: Union[str, Path], workdir: Optional[Union[str, Path]] = None):
        try:
            import cv2
        except ImportError as exc:
            raise VideoDecodeError(
                "opencv is required to decode video containers; install trapkit[video]"
            ) from exc
        self._cv2 = cv2
        self.path = Path(path)
        cap = cv2.VideoCapture(str(self.path))
        if not cap.isOpened():
            raise VideoDecodeError(f"cannot open video {self.path}")
        self.native_fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
        self.frame_count = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        if self.native_fps <= 0 or self.frame_count <= 0:
            cap.release()
            raise VideoDecodeError(f"cannot read fps/frame count from {self.path}")
        self._cap = cap
        self.workdir = Path(workdir) if workdir else self.path.parent / (self.path.stem + "_frames")
        self.workdir.mkdir(parents=True, exist_ok=True)

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.native_fps

    def frame_ref(self, native_index: int) -> ImageRef:
        out = self.workdir / f"frame_{native_index:06d}.png"
        if not out.exists():
            self._cap.set(self._cv2.CAP_PROP_POS_FRAMES, native_index)
            ok, frame = self._cap.read()
            if not ok:
                raise VideoDecodeError(f"cannot read frame {native_index} of {self.path}")
            self._cv2.imwrite(str(out), frame)
        w, h = image_size(out)
        return ImageRef(path=str(out), width_px=w, height_px=h)

    def close(self):
        self._cap.release()


def open_video(path: Union[str, Path]):
    path = Path(path)
    if path.is_dir():
        return FrameSequenceDir(path)
    if not path.exists():
        raise VideoDecodeError(f"no such video: {path}")
    return OpenCVVideoReader(path)


def extract_frames(
    video: Union[str, Path, FrameSequenceDir, OpenCVVideoReader],
    target_fps: float = 30.0,
) -> Tuple[list[FrameSample], float]:
    """Evenly-timed frame samples capped at target_fps.

    effective_fps = min(native_fps, target_fps); sample k sits at k/effective_fps
    and maps to the nearest native frame. A video always yields at least one frame.
    """
    if target_fps <= 0:
        raise ValueError(f"target_fps must be positive: {target_fps}")
    reader = video if not isinstance(video, (str, Path)) else open_video(video)
    effective_fps = min(reader.native_fps, target_fps)
    n = max(1, math.floor(reader.duration_s * effective_fps))
    samples = []
    for k in range(n):
        t = k / effective_fps
        native_index = min(round(t * reader.native_fps), reader.frame_count - 1)
        samples.append(FrameSample(index=k, timestamp_s=t, image=reader.frame_ref(native_index)))
    return samples, effective_fps


def majority_vote(labels: Sequence[Tuple[str, float]]) -> Tuple[str, dict[str, int]]:
    """Plain-count majority over (label, confidence) votes.

    Ties break toward the higher mean confidence, then the lexicographically
    smallest label. (Confidence-weighted voting would slot in here if a
    deployment ever needs it.)
    """
    if not labels:
        raise EmptyVote("majority_vote needs at least one vote")
    tally: dict[str, int] = {}
    conf_sums: dict[str, float] = {}
    for label, conf in labels:
        tally[label] = tally.get(label, 0) + 1
        conf_sums[label] = conf_sums.get(label, 0.0) + float(conf)
    winner = min(
        tally,
        key=lambda l: (-tally[l], -(conf_sums[l] / tally[l]), l),
    )
    return winner, tally


def frame_vote(result: PipelineResult) -> Tuple[str, float]:
    """A frame's vote: top class of its highest-confidence classified
    detection, or the reserved empty label when nothing was classified."""
    best: Optional[Tuple[float, str, float]] = None
    for detection, scores in result.detections:
        if scores is None:
            continue
        if best is None or detection.confidence > best[0]:
            label, prob = scores.top()
            best = (detection.confidence, label, prob)
    if best is None:
        return EMPTY_LABEL, 1.0
    return best[1], best[2]


def classify_video(
    video: Union[str, Path, FrameSequenceDir, OpenCVVideoReader],
    det: DetectorBackend,
    clf: Optional[ClassifierBackend] = None,
    config: PipelineConfig = PipelineConfig(),
    target_fps: float = 30.0,
) -> VideoResult:
    """Per-frame pipeline + one majority vote across all sampled frames."""
    reader = video if not isinstance(video, (str, Path)) else open_video(video)
    samples, effective_fps = extract_frames(reader, target_fps)
    frame_results = [run_image(s.image, det, clf, config) for s in samples]
    votes = [frame_vote(r) for r in frame_results]
    final_label, tally = majority_vote(votes)
    name = str(getattr(reader, "root", getattr(reader, "path", video)))
    return VideoResult(
        video=name,
        frame_results=frame_results,
        vote_tally=tally,
        final_label=final_label,
        effective_fps=effective_fps,
    )
