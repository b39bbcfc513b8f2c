"""Detection metrics and the model-zoo leaderboard.

Matching protocol (pinned so published numbers are reproducible):
greedy by descending confidence, each prediction claims the highest-IoU
unmatched ground truth of the same category at IoU >= threshold (IoU ties
go to the lowest ground-truth index); AP uses all-point interpolation
(precision envelope = max precision at recall >= r); mAP averages over
categories that have at least one ground truth.

The leaderboard store is append-only JSON-lines: auditable, portable, and
trivially rebuildable. Hidden test sets keep their annotations server-side;
only aggregate metrics and the public descriptor ever leave this module.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .core import Detection, DetectionCategory, iou
from .errors import (
    InvalidRating,
    MalformedSubmission,
    UnknownModel,
    UnknownTestSet,
)

# --- matching ------------------------------------------------------------------


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple          # (pred_index, gt_index) per true positive
    false_positives: tuple  # unmatched prediction indices
    false_negatives: tuple  # unmatched ground-truth indices

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.false_positives)

    @property
    def fn(self) -> int:
        return len(self.false_negatives)


def match_detections(
    preds: Sequence[Detection],
    gts: Sequence[Detection],
    iou_threshold: float = 0.5,
) -> MatchResult:
    """Greedy confidence-ordered matching of predictions to ground truth."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    claimed: set[int] = set()
    pairs = []
    fps = []
    for i in order:
        pred = preds[i]
        best_j = -1
        best_iou = 0.0
        for j, gt in enumerate(gts):
            if j in claimed or gt.category is not pred.category:
                continue
            v = iou(pred.bbox, gt.bbox)
            if v >= iou_threshold and v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0:
            claimed.add(best_j)
            pairs.append((i, best_j))
        else:
            fps.append(i)
    fns = [j for j in range(len(gts)) if j not in claimed]
    return MatchResult(tuple(pairs), tuple(fps), tuple(fns))


def precision_recall(matches: MatchResult) -> tuple:
    precision = 1.0 if matches.tp + matches.fp == 0 else matches.tp / (matches.tp + matches.fp)
    recall = 1.0 if matches.tp + matches.fn == 0 else matches.tp / (matches.tp + matches.fn)
    return precision, recall


# --- average precision ----------------------------------------------------------


def _ranked_flags(
    preds_by_image: Sequence[Sequence[Detection]],
    gts_by_image: Sequence[Sequence[Detection]],
    category: DetectionCategory,
    iou_threshold: float,
) -> tuple:
    """(tp_flags in global confidence order, total ground truths) for one category."""
    pooled = []
    for img, preds in enumerate(preds_by_image):
        for k, p in enumerate(preds):
            if p.category is category:
                pooled.append((-p.confidence, img, k, p))
    pooled.sort(key=lambda t: t[:3])

    n_gt = sum(
        sum(1 for g in image_gts if g.category is category)
        for image_gts in gts_by_image
    )

    claimed: dict[int, set] = {}
    flags = []
    for _, img, _, pred in pooled:
        image_gts = gts_by_image[img] if img < len(gts_by_image) else []
        taken = claimed.setdefault(img, set())
        best_j, best_iou = -1, 0.0
        for j, gt in enumerate(image_gts):
            if j in taken or gt.category is not category:
                continue
            v = iou(pred.bbox, gt.bbox)
            if v >= iou_threshold and v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0:
            taken.add(best_j)
            flags.append(True)
        else:
            flags.append(False)
    return flags, n_gt


def _ap_from_flags(flags: Sequence[bool], n_gt: int) -> float:
    if n_gt == 0:
        return 0.0
    recalls = []
    precisions = []
    tp = 0
    for rank, is_tp in enumerate(flags, start=1):
        if is_tp:
            tp += 1
        recalls.append(tp / n_gt)
        precisions.append(tp / rank)

    # all-point interpolation: envelope from the right, sum recall increments
    ap = 0.0
    prev_recall = 0.0
    best_ahead = 0.0
    # walk backwards to build max precision at recall >= r
    envelope = [0.0] * len(precisions)
    for i in range(len(precisions) - 1, -1, -1):
        best_ahead = max(best_ahead, precisions[i])
        envelope[i] = best_ahead
    for i in range(len(flags)):
        if flags[i]:
            ap += (recalls[i] - prev_recall) * envelope[i]
            prev_recall = recalls[i]
    return ap


def category_average_precision(
    preds_by_image: Sequence[Sequence[Detection]],
    gts_by_image: Sequence[Sequence[Detection]],
    category: DetectionCategory,
    iou_threshold: float = 0.5,
) -> float:
    flags, n_gt = _ranked_flags(preds_by_image, gts_by_image, category, iou_threshold)
    return _ap_from_flags(flags, n_gt)


def mean_average_precision(
    preds_by_image: Sequence[Sequence[Detection]],
    gts_by_image: Sequence[Sequence[Detection]],
    iou_threshold: float = 0.5,
) -> float:
    """mAP over categories with at least one ground truth; 0.0 with no ground truth."""
    if len(preds_by_image) != len(gts_by_image):
        raise ValueError("preds_by_image and gts_by_image must align")
    present = [
        c for c in DetectionCategory
        if any(g.category is c for image in gts_by_image for g in image)
    ]
    if not present:
        return 0.0
    aps = [
        category_average_precision(preds_by_image, gts_by_image, c, iou_threshold)
        for c in present
    ]
    return math.fsum(aps) / len(aps)


# --- triage metrics --------------------------------------------------------------


@dataclass(frozen=True)
class TriageMetrics:
    coverage: float
    accuracy_above: Optional[float]

    def to_json(self) -> dict:
        return {"coverage": self.coverage, "accuracy_above": self.accuracy_above}


def triage_metrics(
    predictions: Sequence[tuple],
    truths: Sequence[str],
    threshold: float,
) -> TriageMetrics:
    """predictions: (predicted_label, max_score) per item, aligned with truths.

    coverage = fraction confidently auto-accepted; accuracy_above = accuracy
    within that subset (None when nothing clears the threshold).
    """
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must align")
    if not predictions:
        return TriageMetrics(coverage=0.0, accuracy_above=None)
    above = [
        (label, truth)
        for (label, score), truth in zip(predictions, truths)
        if score >= threshold
    ]
    coverage = len(above) / len(predictions)
    if not above:
        return TriageMetrics(coverage=coverage, accuracy_above=None)
    correct = sum(1 for label, truth in above if label == truth)
    return TriageMetrics(coverage=coverage, accuracy_above=correct / len(above))


# --- leaderboard records ----------------------------------------------------------


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class EvalRecord:
    model_id: str
    parameter_count: int
    precision: float
    recall: float
    map_score: float
    test_set_id: str
    timestamp: str = field(default_factory=_utc_now)

    def __post_init__(self):
        if self.parameter_count <= 0:
            raise ValueError("parameter_count must be > 0")
        for name in ("precision", "recall", "map_score"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "parameter_count": self.parameter_count,
            "precision": self.precision,
            "recall": self.recall,
            "map_score": self.map_score,
            "test_set_id": self.test_set_id,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "EvalRecord":
        return cls(**{k: doc[k] for k in (
            "model_id", "parameter_count", "precision", "recall",
            "map_score", "test_set_id", "timestamp",
        )})


@dataclass(frozen=True)
class FeedbackEntry:
    model_id: str
    user_id: str
    verified: bool
    rating: int
    comment: str = ""

    def __post_init__(self):
        if self.rating not in (1, 2, 3, 4, 5):
            raise InvalidRating(f"rating must be an integer 1-5, got {self.rating!r}")

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "user_id": self.user_id,
            "verified": self.verified,
            "rating": self.rating,
            "comment": self.comment,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "FeedbackEntry":
        return cls(
            model_id=doc["model_id"],
            user_id=doc["user_id"],
            verified=bool(doc["verified"]),
            rating=doc["rating"],
            comment=doc.get("comment", ""),
        )


# --- hidden test sets --------------------------------------------------------------


@dataclass
class HiddenTestSet:
    """Ground truth stays inside this process; descriptor() is the public view."""

    test_set_id: str
    ground_truth: dict  # image name -> list[Detection]
    regions: tuple = ()

    def descriptor(self) -> dict:
        classes = sorted(
            {g.category.value for gts in self.ground_truth.values() for g in gts}
        )
        return {
            "test_set_id": self.test_set_id,
            "size": len(self.ground_truth),
            "regions": list(self.regions),
            "classes": classes,
        }


# --- submissions ------------------------------------------------------------------


def _submission_detections(doc: Mapping) -> dict:
    """MD-batch document -> {file: [Detection]}; structural problems raise."""
    from .core import BBox, MD_ID_TO_CATEGORY

    try:
        images = doc["images"]
        out = {}
        for entry in images:
            file = entry["file"]
            dets = []
            for d in entry.get("detections", []):
                dets.append(
                    Detection(
                        bbox=BBox(*d["bbox"]),
                        category=MD_ID_TO_CATEGORY[d["category"]],
                        confidence=d["conf"],
                    )
                )
            out[file] = dets
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedSubmission(f"bad MegaDetector-batch document: {exc}") from exc
    return out


def evaluate_submission(
    outputs: Union[Mapping, str, Path],
    test_set: HiddenTestSet,
    model_id: str,
    parameter_count: int,
    iou_threshold: float = 0.5,
) -> EvalRecord:
    """Score a MegaDetector-batch submission against hidden ground truth.

    Returns aggregates only; images absent from the submission count as
    having no predictions.
    """
    if isinstance(outputs, (str, Path)):
        outputs = json.loads(Path(outputs).read_text(encoding="utf-8"))
    per_file = _submission_detections(outputs)

    unknown = sorted(set(per_file) - set(test_set.ground_truth))
    if unknown:
        raise MalformedSubmission(
            f"submission references images not in test set: {', '.join(unknown[:5])}"
        )

    files = sorted(test_set.ground_truth)
    preds_by_image = [per_file.get(f, []) for f in files]
    gts_by_image = [test_set.ground_truth[f] for f in files]

    tp = fp = fn = 0
    for preds, gts in zip(preds_by_image, gts_by_image):
        m = match_detections(preds, gts, iou_threshold)
        tp += m.tp
        fp += m.fp
        fn += m.fn
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    map_score = mean_average_precision(preds_by_image, gts_by_image, iou_threshold)
    return EvalRecord(
        model_id=model_id,
        parameter_count=parameter_count,
        precision=precision,
        recall=recall,
        map_score=map_score,
        test_set_id=test_set.test_set_id,
    )


# --- the board ---------------------------------------------------------------------


class Leaderboard:
    """Append-only JSONL store of eval records and feedback, with hidden test sets."""

    def __init__(self, store_path: Optional[Union[str, Path]] = None):
        self._store_path = Path(store_path) if store_path else None
        self._lock = threading.Lock()
        self._records: list[EvalRecord] = []
        self._feedback: list[FeedbackEntry] = []
        self._test_sets: dict[str, HiddenTestSet] = {}
        self._models: set[str] = set()
        if self._store_path and self._store_path.is_file():
            self._load()

    def _load(self) -> None:
        for line in self._store_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            if doc["kind"] == "eval":
                record = EvalRecord.from_json(doc)
                self._records.append(record)
                self._models.add(record.model_id)
            elif doc["kind"] == "feedback":
                self._feedback.append(FeedbackEntry.from_json(doc))

    def _append(self, kind: str, payload: dict) -> None:
        if self._store_path is None:
            return
        line = json.dumps({"kind": kind, **payload}, ensure_ascii=False)
        self._store_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._store_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    # test sets

    def register_test_set(self, test_set: HiddenTestSet) -> None:
        with self._lock:
            self._test_sets[test_set.test_set_id] = test_set

    def test_set(self, test_set_id: str) -> HiddenTestSet:
        try:
            return self._test_sets[test_set_id]
        except KeyError:
            raise UnknownTestSet(f"no test set registered as {test_set_id!r}") from None

    def descriptors(self) -> list[dict]:
        return [ts.descriptor() for ts in self._test_sets.values()]

    # models + records

    def register_model(self, model_id: str) -> None:
        with self._lock:
            self._models.add(model_id)

    def add_record(self, record: EvalRecord) -> EvalRecord:
        with self._lock:
            self._records.append(record)
            self._models.add(record.model_id)
            self._append("eval", record.to_json())
        return record

    def evaluate_submission(
        self,
        outputs: Union[Mapping, str, Path],
        test_set_id: str,
        model_id: str,
        parameter_count: int,
        iou_threshold: float = 0.5,
    ) -> EvalRecord:
        record = evaluate_submission(
            outputs, self.test_set(test_set_id), model_id, parameter_count, iou_threshold
        )
        return self.add_record(record)

    def leaderboard(self, test_set_id: str) -> list[EvalRecord]:
        """Records for one test set, best mAP first, ties broken by recall."""
        with self._lock:
            rows = [r for r in self._records if r.test_set_id == test_set_id]
        return sorted(rows, key=lambda r: (-r.map_score, -r.recall))

    # feedback

    def add_feedback(self, entry: FeedbackEntry) -> FeedbackEntry:
        with self._lock:
            if entry.model_id not in self._models:
                raise UnknownModel(f"unknown model {entry.model_id!r}")
            self._feedback.append(entry)
            self._append("feedback", entry.to_json())
        return entry

    def feedback_for(self, model_id: str) -> list[FeedbackEntry]:
        with self._lock:
            return [f for f in self._feedback if f.model_id == model_id]

    def model_rating(self, model_id: str) -> Optional[float]:
        """Mean rating over verified entries only; None when there are none."""
        ratings = [f.rating for f in self.feedback_for(model_id) if f.verified]
        if not ratings:
            return None
        return math.fsum(ratings) / len(ratings)
