"""CLI: every subcommand, flag plumbing, and the machine-readable error line."""

import json
import subprocess
import sys
from pathlib import Path

import pytest
from PIL import Image

from trapkit.backends.manifest import scan_zoo
from trapkit.backends.oracle import install_oracle_classifier, install_oracle_detector
from trapkit.cli import main
from trapkit.core import BBox, ImageRef
from trapkit.datakit import CropRecord, SplitSpec, split_dataset, write_crop_manifest
from trapkit.export import parse_md_json, md_json_bytes, to_md_json

from corpus import PALETTE, SPECIES, build_corpus, build_frame_video


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    zoo = root / "zoo"
    install_oracle_detector(zoo)
    install_oracle_classifier(zoo, SPECIES)
    images = build_corpus(root / "corpus", 9)
    results = root / "results.json"
    rc = main(
        [
            "batch",
            "--model-dir", str(zoo),
            "--in", str(root / "corpus"),
            "--out", str(results),
            "--no-progress",
        ]
    )
    assert rc == 0
    return {
        "root": root,
        "zoo": str(zoo),
        "corpus": root / "corpus",
        "images": images,
        "results": results,
    }


class TestTopLevel:
    def test_version_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "trapkit" in capsys.readouterr().out

    def test_unknown_flag_prints_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["batch", "--frobnicate"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_installed_entry_point(self):
        proc = subprocess.run(
            ["trapkit", "--version"], capture_output=True, text=True, timeout=60
        )
        assert proc.returncode == 0
        assert "trapkit" in proc.stdout

    def test_error_line_is_machine_readable(self, env, capsys):
        rc = main(["triage", "--results", "/no/such.json", "--threshold", "0.5"])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert set(err) == {"error", "message"}
        assert err["error"] == "FileNotFoundError"

    def test_unknown_model_error_line(self, env, capsys):
        rc = main(
            [
                "detect",
                "--model-dir", env["zoo"],
                "--detector", "megadetector-v99",
                "--image", str(env["images"][1]),
            ]
        )
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "UnknownModel"


class TestDetect:
    def test_detect_to_stdout(self, env, capsys):
        rc = main(
            ["detect", "--model-dir", env["zoo"], "--image", str(env["images"][1])]
        )
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["file"] == str(env["images"][1])
        assert doc["detections"][0]["category"] == "animal"
        assert doc["detections"][0]["conf"] == 1.0

    def test_detect_out_and_annotate(self, env, tmp_path):
        out = tmp_path / "result.json"
        annotated = tmp_path / "annotated.png"
        rc = main(
            [
                "detect",
                "--model-dir", env["zoo"],
                "--image", str(env["images"][1]),
                "--out", str(out),
                "--annotate", str(annotated),
            ]
        )
        assert rc == 0
        assert json.loads(out.read_text())["is_empty"] is False
        assert annotated.read_bytes().startswith(b"\x89PNG")


class TestBatch:
    def test_output_is_canonical_md_json(self, env):
        results = parse_md_json(env["results"])
        assert len(results) == 9
        # writer output is the canonical form: reserializing is the identity
        doc = json.loads(env["results"].read_text(encoding="utf-8"))
        assert md_json_bytes(to_md_json(results)) == env["results"].read_bytes()
        assert list(doc)[:2] == ["images", "detection_categories"]

    def test_parallel_output_matches_serial(self, env, tmp_path):
        out = tmp_path / "parallel.json"
        rc = main(
            [
                "batch",
                "--model-dir", env["zoo"],
                "--in", str(env["corpus"]),
                "--out", str(out),
                "--workers", "3",
                "--no-progress",
            ]
        )
        assert rc == 0
        assert out.read_bytes() == env["results"].read_bytes()

    def test_summary_line(self, env, tmp_path, capsys):
        out = tmp_path / "again.json"
        main(
            [
                "batch",
                "--model-dir", env["zoo"],
                "--in", str(env["corpus"]),
                "--out", str(out),
                "--no-progress",
            ]
        )
        assert "9 images ->" in capsys.readouterr().out

    def test_empty_dir_fails(self, env, tmp_path, capsys):
        rc = main(
            [
                "batch",
                "--model-dir", env["zoo"],
                "--in", str(tmp_path),
                "--out", str(tmp_path / "r.json"),
                "--no-progress",
            ]
        )
        assert rc == 1
        assert json.loads(capsys.readouterr().err.strip())["error"] == "EmptyBatch"


class TestVideo:
    def test_prints_final_label_and_tally(self, env, tmp_path, capsys):
        clip = build_frame_video(
            tmp_path / "clip", native_fps=6.0, frame_labels=["paca", "paca", None]
        )
        out = tmp_path / "video.json"
        rc = main(
            [
                "video",
                "--model-dir", env["zoo"],
                "--in", str(clip),
                "--fps-cap", "30",
                "--out", str(out),
            ]
        )
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "final_label: paca"
        assert "  paca: 2" in lines
        doc = json.loads(out.read_text())
        assert doc["final_label"] == "paca"
        assert doc["effective_fps"] == 6.0


class TestTriage:
    def test_partition_document(self, env, tmp_path):
        out = tmp_path / "triage.json"
        rc = main(
            [
                "triage",
                "--results", str(env["results"]),
                "--threshold", "0.5",
                "--out", str(out),
            ]
        )
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["total"] == 9
        assert doc["auto_accepted"] + doc["needs_review"] == 9
        assert len(doc["review"]) == doc["needs_review"]


class TestSplit:
    def test_random_matches_library(self, env, tmp_path):
        out = tmp_path / "split.json"
        rc = main(
            [
                "split",
                "--in", str(env["corpus"]),
                "--strategy", "random",
                "--fractions", "0.7,0.3",
                "--seed", "4",
                "--out", str(out),
            ]
        )
        assert rc == 0
        doc = json.loads(out.read_text())
        refs = [ImageRef(path=str(p)) for p in env["images"]]
        expected = split_dataset(refs, SplitSpec("random", (0.7, 0.3), seed=4))
        assert doc == {name: [r.path for r in refs] for name, refs in expected.items()}

    def test_location_split_from_records_file(self, env, tmp_path):
        records = [
            {"path": f"img-{i}.png", "location_id": f"cam-{i % 3}"} for i in range(12)
        ]
        records_path = tmp_path / "records.json"
        records_path.write_text(json.dumps({"records": records}))
        out = tmp_path / "split.json"
        rc = main(
            [
                "split",
                "--records", str(records_path),
                "--strategy", "location",
                "--fractions", "0.7,0.3",
                "--out", str(out),
            ]
        )
        assert rc == 0
        doc = json.loads(out.read_text())
        assert sorted(sum(doc.values(), [])) == sorted(r["path"] for r in records)
        # group exclusivity: a camera's images never straddle splits
        cams = {
            name: {p.split("-")[1] for p in paths} for name, paths in doc.items()
        }
        assert not (cams["train"] & cams["val"])

    def test_split_size_summary_on_stderr(self, env, tmp_path, capsys):
        main(
            [
                "split",
                "--in", str(env["corpus"]),
                "--strategy", "random",
                "--fractions", "0.5,0.5",
                "--out", str(tmp_path / "s.json"),
            ]
        )
        assert "split sizes:" in capsys.readouterr().err

    def test_missing_metadata_fails_cleanly(self, env, capsys):
        rc = main(
            [
                "split",
                "--in", str(env["corpus"]),
                "--strategy", "location",
                "--fractions", "0.7,0.3",
            ]
        )
        assert rc == 1
        assert "error" in json.loads(capsys.readouterr().err.strip())


class TestCrops:
    def test_build_from_results(self, env, tmp_path, capsys):
        # image-level labels: every animal image tagged with one species
        labels = {str(p): SPECIES[i % 3] for i, p in enumerate(env["images"])}
        labels_path = tmp_path / "labels.json"
        labels_path.write_text(json.dumps(labels))
        out_dir = tmp_path / "crops"
        rc = main(
            [
                "crops",
                "--results", str(env["results"]),
                "--labels", str(labels_path),
                "--out-dir", str(out_dir),
                "--crop-size", "64",
            ]
        )
        assert rc == 0
        assert "crops ->" in capsys.readouterr().out
        assert (out_dir / "crops.csv").is_file()
        made = list(out_dir.rglob("*.png"))
        assert made
        assert all(Image.open(p).size == (64, 64) for p in made)


def _write_training_crops(root):
    """Pure-color 32px crops for each species, split into train + val manifests."""
    root.mkdir(parents=True, exist_ok=True)
    train_records, val_records = [], []
    i = 0
    for label in SPECIES:
        for k in range(10):
            path = root / f"crop-{i:03d}.png"
            Image.new("RGB", (32, 32), PALETTE[label]).save(path)
            record = CropRecord(str(path), label, f"src-{i}.png", BBox(0.1, 0.1, 0.5, 0.5), 1.0)
            (train_records if k < 7 else val_records).append(record)
            i += 1
    train_csv = root / "train.csv"
    val_csv = root / "val.csv"
    write_crop_manifest(train_records, train_csv)
    write_crop_manifest(val_records, val_csv)
    return train_csv, val_csv


@pytest.fixture(scope="module")
def tuned_zoo(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    train_csv, val_csv = _write_training_crops(root / "crops")
    out_dir = root / "run"
    zoo2 = root / "zoo2"
    rc = main(
        [
            "train",
            "--train-manifest", str(train_csv),
            "--val-manifest", str(val_csv),
            "--out-dir", str(out_dir),
            "--epochs", "6",
            "--batch-size", "8",
            "--lr", "0.05",
            "--lr-step", "2",
            "--lr-gamma", "0.5",
            "--backbone", "tiny-conv",
            "--export-id", "tuned-clf",
            "--zoo", str(zoo2),
            "--no-progress",
        ]
    )
    assert rc == 0
    return {"zoo2": zoo2, "out_dir": out_dir, "val_csv": val_csv}


class TestTrainEvalExportZoo:
    def test_train_writes_log_and_checkpoint(self, tuned_zoo):
        out_dir = tuned_zoo["out_dir"]
        lines = (out_dir / "train_log.jsonl").read_text().splitlines()
        assert len(lines) == 6
        assert (out_dir / "best.pt").is_file()

    def test_export_registers_in_zoo(self, tuned_zoo):
        manifests = scan_zoo(tuned_zoo["zoo2"])
        assert [m.model_id for m in manifests] == ["tuned-clf"]
        assert manifests[0].class_labels == tuple(sorted(SPECIES))

    def test_eval_reports_accuracy(self, tuned_zoo, tmp_path):
        report_path = tmp_path / "report.json"
        rc = main(
            [
                "eval",
                "--zoo", str(tuned_zoo["zoo2"]),
                "--crops-manifest", str(tuned_zoo["val_csv"]),
                "--out", str(report_path),
            ]
        )
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert report["accuracy"] == 1.0
        assert set(report["confusion"]) == set(SPECIES)


class TestExportCommand:
    def test_md_rewrite_is_identity(self, env, tmp_path):
        out = tmp_path / "rewritten.json"
        rc = main(["export", "--results", str(env["results"]), "--md", str(out)])
        assert rc == 0
        assert out.read_bytes() == env["results"].read_bytes()

    def test_coco_output(self, env, tmp_path):
        out = tmp_path / "coco.json"
        rc = main(["export", "--results", str(env["results"]), "--coco", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert set(doc) >= {"images", "annotations", "categories"}
        assert len(doc["images"]) == 9

    def test_folder_separation(self, env, tmp_path):
        out_dir = tmp_path / "sorted"
        rc = main(["export", "--results", str(env["results"]), "--folders", str(out_dir)])
        assert rc == 0
        assert (out_dir / "manifest.json").is_file()
        buckets = {p.name for p in out_dir.iterdir() if p.is_dir()}
        assert "empty" in buckets

    def test_annotated_copies(self, env, tmp_path):
        out_dir = tmp_path / "annotated"
        rc = main(
            ["export", "--results", str(env["results"]), "--annotate-dir", str(out_dir)]
        )
        assert rc == 0
        assert len(list(out_dir.glob("*.png"))) == 9

    def test_no_target_selected_fails(self, env, capsys):
        rc = main(["export", "--results", str(env["results"])])
        assert rc == 1
        assert "choose at least one" in json.loads(capsys.readouterr().err)["message"]


class TestScrub:
    def test_scrub_directory(self, env, tmp_path, capsys):
        out_dir = tmp_path / "clean"
        rc = main(["scrub", "--in", str(env["corpus"]), "--out-dir", str(out_dir)])
        assert rc == 0
        assert "scrubbed" in capsys.readouterr().out
        report = json.loads((out_dir / "scrub_report.json").read_text())
        assert len(report["outputs"]) == 9

    def test_scrub_with_results_excludes_person(self, env, tmp_path):
        out_dir = tmp_path / "clean"
        rc = main(
            ["scrub", "--results", str(env["results"]), "--out-dir", str(out_dir)]
        )
        assert rc == 0
        report = json.loads((out_dir / "scrub_report.json").read_text())
        excluded = {Path(p).name for p in report["excluded_person"]}
        assert excluded == {"img-0003.png"}  # the person-only frame
        assert len(report["outputs"]) == 8

    def test_keep_person_flag(self, env, tmp_path):
        out_dir = tmp_path / "clean"
        rc = main(
            [
                "scrub",
                "--results", str(env["results"]),
                "--out-dir", str(out_dir),
                "--keep-person",
            ]
        )
        assert rc == 0
        report = json.loads((out_dir / "scrub_report.json").read_text())
        assert report["excluded_person"] == []
        assert len(report["outputs"]) == 9


class TestZooCommands:
    def test_zoo_list(self, env, tmp_path, capsys):
        out = tmp_path / "models.json"
        rc = main(["zoo", "list", "--zoo", env["zoo"], "--out", str(out)])
        assert rc == 0
        ids = {m["model_id"] for m in json.loads(out.read_text())}
        assert ids == {"oracle-detector", "oracle-classifier"}

    def test_zoo_add_registers_artifact(self, env, tmp_path):
        artifact = next(Path(env["zoo"]).glob("oracle-detector-*.oracle.json"))
        zoo2 = tmp_path / "zoo2"
        rc = main(
            [
                "zoo", "add",
                "--zoo", str(zoo2),
                "--artifact", str(artifact),
                "--model-id", "copied-det",
                "--task", "detector",
                "--description", "manual registration",
            ]
        )
        assert rc == 0
        manifests = scan_zoo(zoo2)
        assert [m.model_id for m in manifests] == ["copied-det"]

    def test_zoo_score_and_board(self, env, tmp_path, capsys):
        store = tmp_path / "store.jsonl"
        record_out = tmp_path / "record.json"
        rc = main(
            [
                "zoo", "score",
                "--submission", str(env["results"]),
                "--gt", str(env["results"]),
                "--test-set", "self-check",
                "--model-id", "oracle-detector",
                "--parameter-count", "1",
                "--store", str(store),
                "--out", str(record_out),
            ]
        )
        assert rc == 0
        record = json.loads(record_out.read_text())
        assert record["precision"] == 1.0
        assert record["recall"] == 1.0
        assert record["map_score"] == 1.0

        board_out = tmp_path / "board.json"
        rc = main(
            [
                "zoo", "board",
                "--test-set", "self-check",
                "--store", str(store),
                "--out", str(board_out),
            ]
        )
        assert rc == 0
        rows = json.loads(board_out.read_text())
        assert [r["model_id"] for r in rows] == ["oracle-detector"]
