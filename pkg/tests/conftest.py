from __future__ import annotations

from pathlib import Path

import pytest

from trapkit.backends import load_backend
from trapkit.backends.oracle import (
    install_oracle_classifier,
    install_oracle_detector,
)

from corpus import SPECIES, build_corpus


@pytest.fixture
def zoo_dir(tmp_path: Path) -> Path:
    """Model zoo with a noise-free oracle detector and a color classifier."""
    zoo = tmp_path / "zoo"
    install_oracle_detector(zoo)
    install_oracle_classifier(zoo, SPECIES)
    return zoo


@pytest.fixture
def oracle_backends(zoo_dir: Path):
    """(detector, classifier) pair loaded through the zoo machinery."""
    from trapkit.backends.manifest import scan_zoo

    manifests = {m.model_id: m for m in scan_zoo(zoo_dir)}
    det = load_backend(manifests["oracle-detector"])
    clf = load_backend(manifests["oracle-classifier"])
    return det, clf


@pytest.fixture
def small_corpus(tmp_path: Path) -> list[Path]:
    """Twelve images covering every layout kind (two full cycles)."""
    return build_corpus(tmp_path / "images", 12)
