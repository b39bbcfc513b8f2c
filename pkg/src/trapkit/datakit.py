"""Dataset catalog client, leakage-aware splitting, and crop-dataset building.

Splitting strategies:
  random   - seeded shuffle, cut at fraction boundaries.
  time     - order by capture_time, cut at fraction boundaries.
  location - group-exclusive on location_id (greedy largest-group-first).
  season   - group-exclusive on a month->season table applied to capture_time.

Group-exclusive strategies guarantee no group key ever spans two splits,
which is what prevents location/season leakage between train and val.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import random
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union
from urllib.parse import urlparse

import requests

from .core import BBox, DetectionCategory, ImageRef
from .errors import (
    ChecksumMismatch,
    MissingFieldError,
    NetworkError,
    SingleGroupError,
    UnlabeledImage,
)
from .imaging import load_image
from .pipeline import PipelineResult, crop_detection

# --- catalog + fetch ---------------------------------------------------------


@dataclass(frozen=True)
class CatalogEntry:
    dataset_id: str
    download_url: str
    archive_checksum: str
    license: str = ""
    record_count: int = 0

    def __post_init__(self):
        if not self.dataset_id:
            raise ValueError("dataset_id must be nonempty")
        parsed = urlparse(self.download_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"malformed download_url {self.download_url!r}")
        if not self.archive_checksum:
            raise ValueError("archive_checksum must be present")
        object.__setattr__(self, "archive_checksum", self.archive_checksum.lower())
        if self.record_count < 0:
            raise ValueError("record_count must be >= 0")

    def to_json(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "download_url": self.download_url,
            "archive_checksum": self.archive_checksum,
            "license": self.license,
            "record_count": self.record_count,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "CatalogEntry":
        return cls(
            dataset_id=doc["dataset_id"],
            download_url=doc["download_url"],
            archive_checksum=doc["archive_checksum"],
            license=doc.get("license", ""),
            record_count=doc.get("record_count", 0),
        )


def load_catalog(path: Union[str, Path]) -> dict[str, CatalogEntry]:
    """Catalog index JSON -> entries keyed by dataset_id."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = doc["datasets"] if isinstance(doc, dict) else doc
    catalog: dict[str, CatalogEntry] = {}
    for row in rows:
        entry = CatalogEntry.from_json(row)
        if entry.dataset_id in catalog:
            raise ValueError(f"duplicate dataset_id {entry.dataset_id!r}")
        catalog[entry.dataset_id] = entry
    return catalog


@dataclass(frozen=True)
class DatasetHandle:
    entry: CatalogEntry
    archive_path: Path
    root: Path


_COMPLETE_MARKER = ".complete"


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def fetch_dataset(
    entry: CatalogEntry,
    dest_dir: Union[str, Path],
    workers: int = 1,
    timeout: float = 30.0,
) -> DatasetHandle:
    """Download (resumably), verify, and unpack a catalog dataset.

    Re-runs are no-ops once the unpacked tree's completion marker matches the
    entry checksum. A cached archive is verified and unpacked without any
    network traffic. workers > 1 splits a fresh download into concurrent
    ranged requests when the server supports them.
    """
    dest_dir = Path(dest_dir)
    dest_dir.mkdir(parents=True, exist_ok=True)
    archive = dest_dir / (Path(urlparse(entry.download_url).path).name or entry.dataset_id)
    root = dest_dir / entry.dataset_id
    marker = root / _COMPLETE_MARKER

    if marker.is_file() and marker.read_text().strip() == entry.archive_checksum:
        return DatasetHandle(entry=entry, archive_path=archive, root=root)

    if not archive.is_file():
        _download(entry.download_url, archive, workers=workers, timeout=timeout)

    actual = _sha256_file(archive)
    if actual != entry.archive_checksum:
        raise ChecksumMismatch(
            f"{archive.name}: expected {entry.archive_checksum}, got {actual}"
        )

    if root.exists():
        shutil.rmtree(root)  # partial unpack from an earlier crash
    root.mkdir(parents=True)
    shutil.unpack_archive(str(archive), str(root))
    marker.write_text(entry.archive_checksum + "\n")
    return DatasetHandle(entry=entry, archive_path=archive, root=root)


def _download(url: str, target: Path, workers: int, timeout: float) -> None:
    part = target.with_suffix(target.suffix + ".part")
    try:
        if workers > 1 and not part.exists():
            if _download_ranged(url, part, workers, timeout):
                part.rename(target)
                return
        _download_stream(url, part, timeout)
    except requests.RequestException as exc:
        raise NetworkError(f"download failed for {url}: {exc}") from exc
    part.rename(target)


def _download_stream(url: str, part: Path, timeout: float) -> None:
    headers = {}
    mode = "wb"
    if part.exists() and part.stat().st_size > 0:
        headers["Range"] = f"bytes={part.stat().st_size}-"
        mode = "ab"
    with requests.get(url, headers=headers, stream=True, timeout=timeout) as resp:
        if headers and resp.status_code == 200:
            mode = "wb"  # server ignored the range; restart
        elif resp.status_code == 416:
            return  # already have every byte
        resp.raise_for_status()
        with open(part, mode) as fh:
            for chunk in resp.iter_content(chunk_size=1 << 16):
                fh.write(chunk)


def _download_ranged(url: str, part: Path, workers: int, timeout: float) -> bool:
    head = requests.head(url, timeout=timeout)
    head.raise_for_status()
    total = int(head.headers.get("Content-Length") or 0)
    if total <= 0 or head.headers.get("Accept-Ranges", "").lower() != "bytes":
        return False

    with open(part, "wb") as fh:
        fh.truncate(total)
    span = -(-total // workers)

    def fetch(start: int) -> None:
        stop = min(start + span, total) - 1
        resp = requests.get(
            url, headers={"Range": f"bytes={start}-{stop}"}, timeout=timeout
        )
        resp.raise_for_status()
        if resp.status_code != 206:
            raise requests.RequestException("range request not honored")
        with open(part, "r+b") as fh:
            fh.seek(start)
            fh.write(resp.content)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for future in [pool.submit(fetch, s) for s in range(0, total, span)]:
            future.result()
    return True


# --- splitting ----------------------------------------------------------------

SPLIT_NAMES = ("train", "val", "test")

DEFAULT_SEASON_TABLE = {
    12: "DJF", 1: "DJF", 2: "DJF",
    3: "MAM", 4: "MAM", 5: "MAM",
    6: "JJA", 7: "JJA", 8: "JJA",
    9: "SON", 10: "SON", 11: "SON",
}


@dataclass(frozen=True)
class SplitSpec:
    strategy: str
    fractions: tuple
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("random", "location", "time", "season"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        fractions = tuple(float(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fractions)
        if len(fractions) not in (2, 3):
            raise ValueError("fractions must be (train, val) or (train, val, test)")
        if any(not 0 < f < 1 for f in fractions):
            raise ValueError("each fraction must lie in (0, 1)")
        if abs(math.fsum(fractions) - 1.0) > 1e-9:
            raise ValueError("fractions must sum to 1 within 1e-9")

    @property
    def split_names(self) -> tuple:
        return SPLIT_NAMES[: len(self.fractions)]


def _boundaries(n: int, fractions: Sequence[float]) -> list[int]:
    cumulative = 0.0
    bounds = []
    for f in fractions[:-1]:
        cumulative += f
        bounds.append(int(math.floor(n * cumulative + 0.5)))
    bounds.append(n)
    return bounds


def _require(records: Sequence[ImageRef], attr: str) -> None:
    missing = [r.path for r in records if getattr(r, attr) is None]
    if missing:
        shown = ", ".join(missing[:5])
        extra = f" (+{len(missing) - 5} more)" if len(missing) > 5 else ""
        raise MissingFieldError(f"records missing {attr}: {shown}{extra}")


def split_dataset(
    records: Sequence[ImageRef],
    spec: SplitSpec,
    season_table: Mapping[int, str] = DEFAULT_SEASON_TABLE,
) -> dict[str, list[ImageRef]]:
    """Partition records into named splits; every record lands in exactly one."""
    records = list(records)
    names = spec.split_names

    if spec.strategy == "random":
        order = list(range(len(records)))
        random.Random(spec.seed).shuffle(order)
        return _cut([records[i] for i in order], names, spec.fractions)

    if spec.strategy == "time":
        _require(records, "capture_time")
        ordered = sorted(records, key=lambda r: (r.capture_time, r.path))
        return _cut(ordered, names, spec.fractions)

    if spec.strategy == "location":
        _require(records, "location_id")
        key_of = lambda r: r.location_id
    else:  # season
        _require(records, "capture_time")
        key_of = lambda r: season_table[r.capture_time.month]

    return _split_groups(records, key_of, names, spec)


def _cut(ordered: Sequence[ImageRef], names, fractions) -> dict[str, list[ImageRef]]:
    bounds = _boundaries(len(ordered), fractions)
    splits = {}
    start = 0
    for name, stop in zip(names, bounds):
        splits[name] = list(ordered[start:stop])
        start = stop
    return splits


def _split_groups(records, key_of, names, spec: SplitSpec) -> dict[str, list[ImageRef]]:
    groups: dict[str, list[ImageRef]] = {}
    for record in records:
        groups.setdefault(key_of(record), []).append(record)
    if len(groups) < 2:
        raise SingleGroupError(
            f"group-exclusive split needs >=2 groups, found {len(groups)}"
        )

    # largest group first; equal-size order randomized by seed for fairness
    keys = list(groups)
    random.Random(spec.seed).shuffle(keys)
    keys.sort(key=lambda k: -len(groups[k]))

    total = len(records)
    targets = [f * total for f in spec.fractions]
    assigned = [0.0] * len(names)
    group_split: dict[str, str] = {}
    for key in keys:
        deficits = [t - a for t, a in zip(targets, assigned)]
        pick = max(range(len(names)), key=lambda i: (deficits[i], -i))
        group_split[key] = names[pick]
        assigned[pick] += len(groups[key])

    splits: dict[str, list[ImageRef]] = {name: [] for name in names}
    for record in records:
        splits[group_split[key_of(record)]].append(record)
    if sum(1 for name in names if splits[name]) < 2:
        raise SingleGroupError("greedy assignment left fewer than 2 nonempty splits")
    return splits


# --- crop datasets -------------------------------------------------------------


@dataclass(frozen=True)
class CropRecord:
    crop_path: str
    label: str
    source_image: str
    bbox: BBox
    confidence: float

    def __post_init__(self):
        if not self.label:
            raise ValueError("label must be nonempty")


CROP_MANIFEST = "crops.csv"
_CSV_FIELDS = ("crop_path", "label", "source_image", "bbox", "confidence")


def build_crop_dataset(
    results: Sequence[PipelineResult],
    image_labels: Mapping[str, str],
    out_dir: Union[str, Path],
    crop_size_px: int = 256,
) -> list[CropRecord]:
    """Cut classifier training crops from animal detections.

    Each crop inherits its source image's label (image-level annotation);
    person/vehicle detections never contribute. Crops land in label-named
    subdirectories with a manifest CSV alongside.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[CropRecord] = []
    used: set[Path] = set()

    for result in results:
        animal = [
            d for d, _ in result.detections
            if d.category is DetectionCategory.ANIMAL
        ]
        if not animal:
            continue
        if result.image.path not in image_labels:
            raise UnlabeledImage(f"no label for contributing image {result.image.path}")
        label = image_labels[result.image.path]
        if not label:
            raise UnlabeledImage(f"empty label for image {result.image.path}")
        (out_dir / label).mkdir(exist_ok=True)

        img = load_image(result.image)
        stem = Path(result.image.path).stem
        for j, detection in enumerate(animal):
            crop = crop_detection(img, detection.bbox, crop_size_px)
            dst = out_dir / label / f"{stem}-crop{j}.png"
            n = 1
            while dst in used or dst.exists():
                dst = out_dir / label / f"{stem}-crop{j}-{n}.png"
                n += 1
            used.add(dst)
            crop.save(dst)
            records.append(
                CropRecord(
                    crop_path=str(dst),
                    label=label,
                    source_image=result.image.path,
                    bbox=detection.bbox,
                    confidence=detection.confidence,
                )
            )

    write_crop_manifest(records, out_dir / CROP_MANIFEST)
    return records


def write_crop_manifest(records: Sequence[CropRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for r in records:
            writer.writerow(
                [
                    r.crop_path,
                    r.label,
                    r.source_image,
                    json.dumps(r.bbox.as_list()),
                    f"{r.confidence:.6f}",
                ]
            )
    return path


def read_crop_manifest(path: Union[str, Path]) -> list[CropRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != _CSV_FIELDS:
            raise ValueError(f"unexpected crop manifest header in {path}")
        for row in reader:
            records.append(
                CropRecord(
                    crop_path=row["crop_path"],
                    label=row["label"],
                    source_image=row["source_image"],
                    bbox=BBox(*json.loads(row["bbox"])),
                    confidence=float(row["confidence"]),
                )
            )
    return records
