"""Small image-loading helpers used by backends, pipeline and export."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Union

from PIL import Image, UnidentifiedImageError

from .core import ImageRef
from .errors import ImageDecodeError

ImageSource = Union[str, Path, ImageRef, Image.Image]

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp", ".gif", ".tif", ".tiff", ".webp")


def source_path(source: ImageSource) -> Path:
    """File path behind an image source; raises for in-memory images."""
    if isinstance(source, ImageRef):
        return Path(source.path)
    if isinstance(source, (str, Path)):
        return Path(source)
    if isinstance(source, Image.Image) and getattr(source, "filename", None):
        return Path(source.filename)
    raise ValueError(f"no file path behind image source {source!r}")


def load_image(source: ImageSource) -> Image.Image:
    """Open an image as RGB, raising ImageDecodeError on unreadable input."""
    if isinstance(source, Image.Image):
        return source.convert("RGB") if source.mode != "RGB" else source
    path = source_path(source)
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc


def image_size(source: ImageSource) -> tuple[int, int]:
    """(width, height) of an image file without decoding pixel data."""
    if isinstance(source, Image.Image):
        return source.size
    path = source_path(source)
    try:
        with Image.open(path) as img:
            return img.size
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc


def find_images(root: Union[str, Path], recursive: bool = True) -> list[Path]:
    """All image files under root, sorted by relative path for stable ordering."""
    root = Path(root)
    pattern = "**/*" if recursive else "*"
    return sorted(
        p for p in root.glob(pattern)
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )


def ref_for_file(path: Union[str, Path]) -> ImageRef:
    """ImageRef for an on-disk image with dimensions filled in."""
    w, h = image_size(path)
    return ImageRef(path=str(path), width_px=w, height_px=h)
