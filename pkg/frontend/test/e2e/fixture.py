"""Stand up a fully stocked service for the webui end-to-end tests.

Builds a throwaway corpus and model zoo (the stock oracle pair plus a noisy
"field-detector" that always adds a low-confidence spurious box), a frame
video, and a preloaded leaderboard. Prints one JSON line with the port and
paths once ready, then serves until the parent process kills it.
"""

import json
import socket
import sys
import tempfile
from pathlib import Path

# corpus builders live in the package's test suite; reuse, don't duplicate
sys.path.insert(0, str(Path(__file__).resolve().parents[3] / "tests"))

from corpus import SPECIES, build_corpus, build_frame_video  # noqa: E402

from trapkit.backends.oracle import (  # noqa: E402
    OracleNoise,
    install_oracle_classifier,
    install_oracle_detector,
)
from trapkit.core import BBox, Detection, DetectionCategory  # noqa: E402
from trapkit.evalboard import EvalRecord, HiddenTestSet, Leaderboard  # noqa: E402
from trapkit.service.app import create_app  # noqa: E402
from trapkit.service.config import ServiceConfig  # noqa: E402

TEST_SET = "galapagos-2026"
OPERATOR_TOKEN = "e2e-token"


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def main() -> None:
    root = Path(tempfile.mkdtemp(prefix="trapkit-e2e-"))
    zoo = root / "zoo"
    data = root / "data"
    images = root / "images"

    install_oracle_detector(zoo)
    install_oracle_classifier(zoo, SPECIES)
    # every image gains one spurious box with conf ~ U(0.05, 0.75), giving the
    # threshold-slider test confidences on both sides of 0.5
    install_oracle_detector(
        zoo,
        model_id="field-detector",
        noise=OracleNoise(spurious_rate=1.0),
        seed=0,
        description="Oracle detector with a guaranteed spurious extra box",
    )

    # 18 images = three repeats of the 6-kind layout cycle, so exactly three
    # uncertain-color animals (indices 5, 11, 17) land in the review bucket
    build_corpus(images, 18)
    video = build_frame_video(root / "clip-frames", native_fps=24.0, frame_labels=["paca"] * 48)

    board = Leaderboard(store_path=str(data / "leaderboard.jsonl"))
    truth = {
        "img-0001.png": [Detection(BBox(0.1, 0.1, 0.3, 0.3), DetectionCategory.ANIMAL, 1.0)]
    }
    board.register_test_set(HiddenTestSet(TEST_SET, truth, regions=("galapagos",)))
    for model_id, params, precision, recall, map_score in (
        ("megadetector-v5", 121_000_000, 0.96, 0.73, 0.85),
        ("megadetector-v6-compact", 22_000_000, 0.92, 0.85, 0.84),
    ):
        board.add_record(EvalRecord(model_id, params, precision, recall, map_score, TEST_SET))

    port = free_port()
    config = ServiceConfig(
        model_dir=str(zoo),
        data_dir=str(data),
        workers=2,
        operator_token=OPERATOR_TOKEN,
    )
    app = create_app(config, board)

    print(
        json.dumps(
            {
                "port": port,
                "base_url": f"http://127.0.0.1:{port}",
                "image_dir": str(images),
                "data_dir": str(data),
                "video_path": str(video),
                "sample_image": str(images / "img-0001.png"),
                "test_set_id": TEST_SET,
                "operator_token": OPERATOR_TOKEN,
            }
        ),
        flush=True,
    )

    import uvicorn

    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


if __name__ == "__main__":
    main()
