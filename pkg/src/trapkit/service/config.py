"""Service configuration: flag > env > config file > built-in default.

The config file is YAML whose keys are exactly the ServiceConfig field
names. Environment variables: TRAPKIT_CONFIG points at the file,
TRAPKIT_MODEL_DIR / TRAPKIT_DATA_DIR override the two directories.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Optional, Union

import yaml

ENV_CONFIG = "TRAPKIT_CONFIG"
ENV_MODEL_DIR = "TRAPKIT_MODEL_DIR"
ENV_DATA_DIR = "TRAPKIT_DATA_DIR"


@dataclass(frozen=True)
class ServiceConfig:
    model_dir: str = "~/.trapkit/models"
    data_dir: str = "~/.trapkit/data"
    detector_id: Optional[str] = None
    classifier_id: Optional[str] = None
    det_threshold: float = 0.2
    clf_threshold: float = 0.98
    crop_size_px: int = 256
    target_fps: float = 30.0
    workers: int = 2
    max_image_mb: int = 100
    max_video_mb: int = 2048
    host: str = "127.0.0.1"
    port: int = 8000
    operator_token: str = ""
    store_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "model_dir", str(Path(self.model_dir).expanduser()))
        object.__setattr__(self, "data_dir", str(Path(self.data_dir).expanduser()))
        for name in ("det_threshold", "clf_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} out of [0,1]: {v}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


_FIELD_NAMES = {f.name for f in fields(ServiceConfig)}


def load_config(
    path: Optional[Union[str, Path]] = None,
    env: Optional[Mapping[str, str]] = None,
    **overrides,
) -> ServiceConfig:
    """Resolve a ServiceConfig with documented precedence.

    Explicit keyword overrides (CLI flags) win over environment variables,
    which win over the config file, which wins over defaults. None-valued
    overrides are treated as unset.
    """
    env = os.environ if env is None else env

    merged: dict = {}
    file_path = path if path is not None else env.get(ENV_CONFIG)
    if file_path:
        doc = yaml.safe_load(Path(file_path).read_text(encoding="utf-8")) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"config file {file_path} must be a YAML mapping")
        unknown = set(doc) - _FIELD_NAMES
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged.update(doc)

    if env.get(ENV_MODEL_DIR):
        merged["model_dir"] = env[ENV_MODEL_DIR]
    if env.get(ENV_DATA_DIR):
        merged["data_dir"] = env[ENV_DATA_DIR]

    for key, value in overrides.items():
        if key not in _FIELD_NAMES:
            raise ValueError(f"unknown config key {key!r}")
        if value is not None:
            merged[key] = value

    return ServiceConfig(**merged)
