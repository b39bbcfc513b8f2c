"""Result serialization and post-processing.

Covers the MegaDetector-batch JSON consumed by Timelapse/EcoAssist, COCO
object-detection JSON, annotated-image rendering, separation of images into
category folders, and privacy scrubbing of GPS metadata / person images.

The MD-batch document is serialized canonically (UTF-8, fixed key order,
indent=1, LF line endings) so identical results produce identical bytes.
"""

from __future__ import annotations

import json
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from PIL import Image, ImageDraw, ImageFont

from . import __version__
from .core import (
    BBox,
    CATEGORY_TO_MD_ID,
    ClassScores,
    Detection,
    DetectionCategory,
    ImageRef,
    MD_ID_TO_CATEGORY,
    to_absolute,
)
from .errors import MissingDimensions
from .imaging import ImageSource, load_image
from .pipeline import ClassifiedDetection, PipelineResult

MD_FORMAT_VERSION = "1.0"
MD_GENERATOR = f"trapkit {__version__}"

CONF_DECIMALS = 3   # de-facto MD output precision for confidences
BBOX_DECIMALS = 4   # and for normalized box coordinates


# --- MegaDetector-batch JSON -------------------------------------------------

def _round_conf(v: float) -> float:
    return round(float(v), CONF_DECIMALS)


def _round_bbox(b: BBox) -> list[float]:
    return [round(v, BBOX_DECIMALS) for v in b.as_list()]


def _sum_preserving_round(probs: Sequence[float], decimals: int) -> list[float]:
    """Round so the rendered values sum to exactly 1 at the given precision.

    Largest-remainder apportionment over 10^decimals units; keeps parsed
    documents valid ClassScores and makes re-serialization the identity.
    """
    units = 10 ** decimals
    scaled = [p * units for p in probs]
    base = [math.floor(t) for t in scaled]
    deficit = units - sum(base)
    order = sorted(range(len(probs)), key=lambda i: (base[i] - scaled[i], i))
    for i in order[:deficit]:
        base[i] += 1
    return [b / units for b in base]


def to_md_json(results: Sequence[PipelineResult]) -> dict:
    """Results as a MegaDetector-batch document (plain dict, canonical key order)."""
    label_index: dict[str, str] = {}

    def classification_rows(scores: ClassScores) -> list[list]:
        items = list(scores.items())
        rendered = _sum_preserving_round([p for _, p in items], CONF_DECIMALS)
        # sorted on the rendered values, so parse -> serialize is stable
        rows = sorted(zip((l for l, _ in items), rendered), key=lambda r: (-r[1], r[0]))
        out = []
        for label, prob in rows:
            if label not in label_index:
                label_index[label] = str(len(label_index))
            out.append([label_index[label], prob])
        return out

    images = []
    for result in results:
        entry: dict = {"file": result.image.path}
        if result.error is not None:
            entry["failure"] = result.error
            entry["max_detection_conf"] = 0.0
            entry["detections"] = []
            images.append(entry)
            continue
        detections = []
        for detection, scores in result.detections:
            det_doc = {
                "category": CATEGORY_TO_MD_ID[detection.category],
                "conf": _round_conf(detection.confidence),
                "bbox": _round_bbox(detection.bbox),
            }
            if scores is not None:
                det_doc["classifications"] = classification_rows(scores)
            detections.append(det_doc)
        entry["max_detection_conf"] = _round_conf(result.max_detection_conf())
        entry["detections"] = detections
        images.append(entry)

    doc = {
        "images": images,
        "detection_categories": {
            md_id: category.value for category, md_id in CATEGORY_TO_MD_ID.items()
        },
    }
    if label_index:
        doc["classification_categories"] = {v: k for k, v in label_index.items()}
    doc["info"] = {"format_version": MD_FORMAT_VERSION, "generator": MD_GENERATOR}
    return doc


def md_json_bytes(doc: dict) -> bytes:
    """Canonical byte serialization of an MD-batch document."""
    return (json.dumps(doc, ensure_ascii=False, indent=1) + "\n").encode("utf-8")


def write_md_json(results_or_doc, path: Union[str, Path]) -> Path:
    doc = results_or_doc if isinstance(results_or_doc, dict) else to_md_json(results_or_doc)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(md_json_bytes(doc))
    return path


def parse_md_json(
    doc: Union[dict, str, bytes, Path],
    clf_threshold: Optional[float] = None,
) -> list[PipelineResult]:
    """Rebuild results from an MD-batch document.

    Classification scores are renormalized to sum to one (the wire format
    rounds them); needs_review is recomputed when a threshold is given.
    """
    if isinstance(doc, Path):
        doc = json.loads(doc.read_text(encoding="utf-8"))
    elif isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    if not isinstance(doc, dict) or not isinstance(doc.get("images", []), list):
        raise ValueError("document must be a mapping with an 'images' list")
    label_of = {k: v for k, v in doc.get("classification_categories", {}).items()}

    results = []
    for entry in doc.get("images", []):
        if not isinstance(entry, dict):
            raise ValueError(f"image entry must be a mapping, got {type(entry).__name__}")
        image = ImageRef(path=entry["file"])
        if "failure" in entry:
            results.append(PipelineResult.failed(image, entry["failure"]))
            continue
        detections: list[ClassifiedDetection] = []
        for det_doc in entry.get("detections", []):
            detection = Detection(
                bbox=BBox(*det_doc["bbox"]),
                category=MD_ID_TO_CATEGORY[det_doc["category"]],
                confidence=det_doc["conf"],
            )
            scores = None
            rows = det_doc.get("classifications")
            if rows:
                # our writer emits probs summing to exactly 1; only foreign
                # files (independently rounded) need rescaling
                total = math.fsum(prob for _, prob in rows)
                if total <= 0 or abs(total - 1.0) <= 1e-6:
                    total = 1.0
                scores = ClassScores(
                    [(label_of[idx], prob / total) for idx, prob in rows]
                )
            detections.append((detection, scores))
        results.append(
            PipelineResult.build(image, detections, clf_threshold)
            if clf_threshold is not None
            else PipelineResult(
                image=image,
                detections=detections,
                is_empty=not detections,
                needs_review=False,
            )
        )
    return results


# --- COCO --------------------------------------------------------------------

DEFAULT_COCO_CATEGORIES = {
    DetectionCategory.ANIMAL: 1,
    DetectionCategory.PERSON: 2,
    DetectionCategory.VEHICLE: 3,
}


def to_coco(
    results: Sequence[PipelineResult],
    category_map: Optional[Mapping[DetectionCategory, int]] = None,
) -> dict:
    """Results as a COCO object-detection document with absolute pixel boxes."""
    category_map = dict(category_map or DEFAULT_COCO_CATEGORIES)
    images = []
    annotations = []
    ann_id = 1
    for image_id, result in enumerate(results, start=1):
        ref = result.image
        if not ref.has_dimensions:
            raise MissingDimensions(f"no pixel dimensions for {ref.path}")
        images.append(
            {
                "id": image_id,
                "file_name": ref.path,
                "width": ref.width_px,
                "height": ref.height_px,
            }
        )
        for detection, _ in result.detections:
            x, y, w, h = to_absolute(detection.bbox, ref.width_px, ref.height_px)
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": category_map[detection.category],
                    "bbox": [x, y, w, h],
                    "area": w * h,
                    "iscrowd": 0,
                    "score": _round_conf(detection.confidence),
                }
            )
            ann_id += 1
    return {
        "images": images,
        "annotations": annotations,
        "categories": [
            {"id": cid, "name": category.value}
            for category, cid in sorted(category_map.items(), key=lambda kv: kv[1])
        ],
    }


def write_coco(results: Sequence[PipelineResult], path: Union[str, Path], **kwargs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(to_coco(results, **kwargs), ensure_ascii=False, indent=1) + "\n",
        encoding="utf-8",
    )
    return path


# --- annotated images --------------------------------------------------------

BOX_COLORS = {
    DetectionCategory.ANIMAL: (255, 59, 48),
    DetectionCategory.PERSON: (0, 122, 255),
    DetectionCategory.VEHICLE: (255, 204, 0),
}


def render_annotated(
    image: ImageSource,
    result: PipelineResult,
    out_path: Optional[Union[str, Path]] = None,
    line_width: int = 3,
) -> Image.Image:
    """Draw detection boxes + labels; output keeps the input's dimensions.

    With no detections the input is passed through untouched (the file is
    byte-copied when writing, so lossy formats stay pixel-identical).
    """
    img = load_image(image)
    if not result.detections:
        if out_path is not None:
            src = getattr(image, "path", image if isinstance(image, (str, Path)) else None)
            Path(out_path).parent.mkdir(parents=True, exist_ok=True)
            if src is not None and Path(src).is_file():
                shutil.copyfile(src, out_path)
            else:
                img.save(out_path)
        return img

    img = img.copy()
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()
    for detection, scores in result.detections:
        x, y, w, h = to_absolute(detection.bbox, img.width, img.height)
        color = BOX_COLORS[detection.category]
        draw.rectangle([x, y, x + w - 1, y + h - 1], outline=color, width=line_width)
        text = f"{detection.category} {detection.confidence:.2f}"
        if scores is not None:
            top_label, top_p = scores.top()
            text += f" | {top_label} {top_p:.2f}"
        tw, th = _text_size(draw, text, font)
        ty = y - th - 2 if y - th - 2 >= 0 else y + 2
        tx = min(max(0, x), max(0, img.width - tw))
        draw.rectangle([tx, ty, tx + tw + 2, ty + th + 2], fill=color)
        draw.text((tx + 1, ty + 1), text, fill=(0, 0, 0), font=font)
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        img.save(out_path)
    return img


def _text_size(draw: ImageDraw.ImageDraw, text: str, font) -> tuple[int, int]:
    left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
    return right - left, bottom - top


# --- folder separation -------------------------------------------------------

EMPTY_BUCKET = "empty"


@dataclass(frozen=True)
class FolderRouting:
    source: str
    destination: str
    bucket: str

    def to_json(self) -> dict:
        return {"source": self.source, "destination": self.destination, "bucket": self.bucket}


def separate_folders(
    results: Sequence[PipelineResult],
    out_dir: Union[str, Path],
    move: bool = False,
) -> list[FolderRouting]:
    """Copy (or move) each image into out_dir/{animal,person,vehicle,empty}/
    by its highest-confidence detection category; returns one entry per result."""
    out_dir = Path(out_dir)
    buckets = [c.value for c in DetectionCategory] + [EMPTY_BUCKET]
    for bucket in buckets:
        (out_dir / bucket).mkdir(parents=True, exist_ok=True)

    manifest = []
    taken: set[Path] = set()
    for result in results:
        if result.detections:
            top = max(result.detections, key=lambda pair: pair[0].confidence)
            bucket = top[0].category.value
        else:
            bucket = EMPTY_BUCKET
        src = Path(result.image.path)
        dst = out_dir / bucket / src.name
        n = 1
        while dst in taken or dst.exists():
            dst = out_dir / bucket / f"{src.stem}-{n}{src.suffix}"
            n += 1
        taken.add(dst)
        if move:
            shutil.move(str(src), dst)
        else:
            shutil.copy2(src, dst)
        manifest.append(FolderRouting(source=str(src), destination=str(dst), bucket=bucket))

    (out_dir / "manifest.json").write_text(
        json.dumps([m.to_json() for m in manifest], indent=1) + "\n", encoding="utf-8"
    )
    return manifest


# --- privacy scrubbing -------------------------------------------------------

GPS_IFD_TAG = 0x8825

# GPS sub-IFD tags we touch
_LAT_REF, _LAT, _LON_REF, _LON = 1, 2, 3, 4


@dataclass(frozen=True)
class ScrubPolicy:
    gps_mode: str = "remove"  # "remove" | "grid"
    grid_degrees: float = 0.1
    exclude_person_images: bool = True

    def __post_init__(self):
        if self.gps_mode not in ("remove", "grid"):
            raise ValueError(f"unknown gps_mode {self.gps_mode!r}")
        if self.gps_mode == "grid" and self.grid_degrees <= 0:
            raise ValueError("grid_degrees must be > 0 in grid mode")


def snap_to_grid(value: float, grid: float) -> float:
    """Nearest integer multiple of grid (half rounds away from zero)."""
    steps = math.floor(abs(value) / grid + 0.5)
    return math.copysign(steps * grid, value)


def _dms(value: float) -> tuple[float, float, float]:
    v = abs(value)
    d = int(v)
    m = int((v - d) * 60)
    s = round(((v - d) * 60 - m) * 60, 6)
    return float(d), float(m), s


def _from_dms(dms, ref: str, negative_refs=("S", "W")) -> float:
    d, m, s = (float(x) for x in dms)
    value = d + m / 60 + s / 3600
    return -value if ref in negative_refs else value


def read_gps(path: Union[str, Path]) -> Optional[tuple[float, float]]:
    """(lat, lon) from a file's EXIF GPS tags, or None when absent."""
    with Image.open(path) as img:
        gps = img.getexif().get_ifd(GPS_IFD_TAG)
    if not gps or _LAT not in gps or _LON not in gps:
        return None
    lat = _from_dms(gps[_LAT], gps.get(_LAT_REF, "N"))
    lon = _from_dms(gps[_LON], gps.get(_LON_REF, "E"))
    return lat, lon


def write_gps(path: Union[str, Path], lat: float, lon: float) -> None:
    """Set EXIF GPS tags on an image file in place."""
    path = Path(path)
    with Image.open(path) as img:
        img.load()
        exif = img.getexif()
        exif[GPS_IFD_TAG] = {
            _LAT_REF: "S" if lat < 0 else "N",
            _LAT: _dms(lat),
            _LON_REF: "W" if lon < 0 else "E",
            _LON: _dms(lon),
        }
        _save_with_exif(img, path, exif)


def _save_with_exif(img: Image.Image, path: Path, exif: Image.Exif) -> None:
    kwargs = {"exif": exif}
    if path.suffix.lower() in (".jpg", ".jpeg") and img.format == "JPEG":
        kwargs["quality"] = "keep"
    img.save(path, **kwargs)


@dataclass(frozen=True)
class ScrubEntry:
    source: str
    output: str
    gps_before: Optional[tuple[float, float]]
    gps_after: Optional[tuple[float, float]]

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "output": self.output,
            "gps_before": list(self.gps_before) if self.gps_before else None,
            "gps_after": list(self.gps_after) if self.gps_after else None,
        }


@dataclass
class ScrubReport:
    policy: ScrubPolicy
    outputs: list[ScrubEntry] = field(default_factory=list)
    excluded_person: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "policy": {
                "gps_mode": self.policy.gps_mode,
                "grid_degrees": self.policy.grid_degrees,
                "exclude_person_images": self.policy.exclude_person_images,
            },
            "outputs": [e.to_json() for e in self.outputs],
            "excluded_person": self.excluded_person,
        }

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")
        return path


def _has_person(result: PipelineResult) -> bool:
    return any(d.category is DetectionCategory.PERSON for d, _ in result.detections)


def scrub_metadata(
    items: Sequence[Union[PipelineResult, str, Path]],
    policy: ScrubPolicy,
    out_dir: Union[str, Path],
) -> ScrubReport:
    """Write privacy-scrubbed copies of images into out_dir.

    GPS tags are removed or snapped to a coordinate grid per the policy.
    When given pipeline results (so detections are known), images containing
    a person detection are omitted from the output set and reported.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = ScrubReport(policy=policy)

    for item in items:
        if isinstance(item, PipelineResult):
            src = Path(item.image.path)
            if policy.exclude_person_images and _has_person(item):
                report.excluded_person.append(str(src))
                continue
        else:
            src = Path(item)

        dst = out_dir / src.name
        n = 1
        while dst.exists():
            dst = out_dir / f"{src.stem}-{n}{src.suffix}"
            n += 1

        gps_before = read_gps(src)
        if gps_before is None:
            shutil.copy2(src, dst)
            report.outputs.append(ScrubEntry(str(src), str(dst), None, None))
            continue

        with Image.open(src) as img:
            img.load()
            exif = img.getexif()
            if policy.gps_mode == "remove":
                if GPS_IFD_TAG in exif:
                    del exif[GPS_IFD_TAG]
                # drop any cached sub-IFD so tobytes() can't resurrect it
                getattr(exif, "_ifds", {}).pop(GPS_IFD_TAG, None)
                gps_after = None
            else:
                lat = snap_to_grid(gps_before[0], policy.grid_degrees)
                lon = snap_to_grid(gps_before[1], policy.grid_degrees)
                exif[GPS_IFD_TAG] = {
                    _LAT_REF: "S" if lat < 0 else "N",
                    _LAT: _dms(lat),
                    _LON_REF: "W" if lon < 0 else "E",
                    _LON: _dms(lon),
                }
                gps_after = (lat, lon)
            _save_with_exif(img, dst, exif)
        report.outputs.append(ScrubEntry(str(src), str(dst), gps_before, gps_after))
    return report
