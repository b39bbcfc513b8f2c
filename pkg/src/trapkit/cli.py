"""Command-line interface.

Every flag maps 1:1 onto a config field or an operation argument. Failures
print a single machine-readable JSON line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

from tqdm import tqdm

from . import __version__
from .backends import (
    ModelManifest,
    ModelTask,
    compute_checksum,
    load_backend,
    manifest_path,
    scan_zoo,
    write_manifest,
)
from .core import ImageRef
from .datakit import (
    SplitSpec,
    build_crop_dataset,
    read_crop_manifest,
    split_dataset,
)
from .errors import EmptyBatch, UnknownModel
from .evalboard import HiddenTestSet, Leaderboard
from .export import (
    parse_md_json,
    render_annotated,
    scrub_metadata,
    separate_folders,
    to_md_json,
    write_coco,
    write_md_json,
    ScrubPolicy,
)
from .imaging import find_images, ref_for_file
from .pipeline import PipelineConfig, run_batch, run_image, triage
from .service import load_config, serve
from .service.app import result_to_json, video_result_to_json
from .video import classify_video


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a YAML config file")
    p.add_argument("--model-dir", help="model zoo directory")
    p.add_argument("--data-dir", help="working data directory")


def _config_from(args: argparse.Namespace, **extra):
    return load_config(
        path=getattr(args, "config", None),
        model_dir=getattr(args, "model_dir", None),
        data_dir=getattr(args, "data_dir", None),
        **extra,
    )


def _resolve_backend(zoo_dir: str, task: ModelTask, model_id: Optional[str]):
    zoo = Path(zoo_dir)
    manifests = [m for m in (scan_zoo(zoo) if zoo.is_dir() else []) if m.task is task]
    if model_id:
        manifests = [m for m in manifests if m.model_id == model_id]
        if not manifests:
            raise UnknownModel(f"no {task.value} named {model_id!r} in {zoo_dir}")
    if not manifests:
        return None
    manifest = sorted(manifests, key=lambda m: (m.model_id, m.version))[-1]
    return load_backend(manifest)


def _load_pair(cfg, detector_id: Optional[str], classifier_id: Optional[str]):
    det = _resolve_backend(cfg.model_dir, ModelTask.DETECTOR, detector_id or cfg.detector_id)
    if det is None:
        raise UnknownModel(f"no detector available in {cfg.model_dir}")
    clf = _resolve_backend(
        cfg.model_dir, ModelTask.CLASSIFIER, classifier_id or cfg.classifier_id
    )
    return det, clf


def _pipeline_config(cfg, args) -> PipelineConfig:
    return PipelineConfig(
        det_threshold=cfg.det_threshold if args.det_threshold is None else args.det_threshold,
        clf_threshold=cfg.clf_threshold if args.clf_threshold is None else args.clf_threshold,
        crop_size_px=cfg.crop_size_px,
    )


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--det-threshold", type=float, default=None)
    p.add_argument("--clf-threshold", type=float, default=None)
    p.add_argument("--detector", default=None, help="detector model id")
    p.add_argument("--classifier", default=None, help="classifier model id")


def _emit(doc, out: Optional[str]) -> None:
    text = json.dumps(doc, ensure_ascii=False, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


# --- commands -------------------------------------------------------------------


def cmd_detect(args) -> int:
    cfg = _config_from(args)
    det, clf = _load_pair(cfg, args.detector, args.classifier)
    result = run_image(ref_for_file(args.image), det, clf, _pipeline_config(cfg, args))
    if args.annotate:
        render_annotated(args.image, result, out_path=args.annotate)
    _emit(result_to_json(result), args.out)
    return 0


def cmd_batch(args) -> int:
    cfg = _config_from(args)
    det, clf = _load_pair(cfg, args.detector, args.classifier)
    images = find_images(args.input)
    if not images:
        raise EmptyBatch(f"no images under {args.input}")
    refs = [ref_for_file(p) for p in images]

    bar = tqdm(total=len(refs), unit="img", disable=args.no_progress)
    seen = 0

    def sink(done: int, total: int) -> None:
        nonlocal seen
        bar.update(done - seen)
        seen = done

    try:
        results = run_batch(
            refs, det, clf, _pipeline_config(cfg, args),
            progress_sink=sink, workers=args.workers,
        )
    finally:
        bar.close()
    write_md_json(results, args.out)
    failures = sum(1 for r in results if r.error)
    print(f"{len(results)} images -> {args.out} ({failures} failures)")
    return 0


def cmd_video(args) -> int:
    cfg = _config_from(args)
    det, clf = _load_pair(cfg, args.detector, args.classifier)
    vr = classify_video(
        args.input, det, clf, _pipeline_config(cfg, args), target_fps=args.fps_cap
    )
    print(f"final_label: {vr.final_label}")
    for label, count in sorted(vr.vote_tally.items(), key=lambda kv: (-kv[1], kv[0])):
        print(f"  {label}: {count}")
    if args.out:
        _emit(video_result_to_json(vr), args.out)
    return 0


def cmd_triage(args) -> int:
    results = parse_md_json(Path(args.results))
    confident, review = triage(results, args.threshold)
    _emit(
        {
            "total": len(results),
            "auto_accepted": len(confident),
            "needs_review": len(review),
            "review": [r.image.path for r in review],
        },
        args.out,
    )
    return 0


def _parse_fractions(text: str) -> tuple:
    return tuple(float(x) for x in text.split(","))


def _load_records(path: str) -> list:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = doc["records"] if isinstance(doc, dict) else doc
    records = []
    for row in rows:
        records.append(
            ImageRef(
                path=row["path"],
                location_id=row.get("location_id"),
                capture_time=(
                    datetime.fromisoformat(row["capture_time"])
                    if row.get("capture_time")
                    else None
                ),
            )
        )
    return records


def cmd_split(args) -> int:
    if args.records:
        records = _load_records(args.records)
    else:
        records = [ImageRef(path=str(p)) for p in find_images(args.input)]
    spec = SplitSpec(
        strategy=args.strategy, fractions=_parse_fractions(args.fractions), seed=args.seed
    )
    splits = split_dataset(records, spec)
    doc = {name: [r.path for r in refs] for name, refs in splits.items()}
    _emit(doc, args.out)
    print(
        "split sizes: "
        + ", ".join(f"{name}={len(refs)}" for name, refs in splits.items()),
        file=sys.stderr,
    )
    return 0


def cmd_crops(args) -> int:
    results = parse_md_json(Path(args.results))
    labels = json.loads(Path(args.labels).read_text(encoding="utf-8"))
    records = build_crop_dataset(results, labels, args.out_dir, args.crop_size)
    print(f"{len(records)} crops -> {args.out_dir}")
    return 0


def cmd_train(args) -> int:
    # imported here: training pulls in torch, which the rest of the CLI avoids
    from .finetune import TrainConfig, export_model, train

    train_crops = read_crop_manifest(args.train_manifest)
    val_crops = read_crop_manifest(args.val_manifest)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        initial_lr=args.lr,
        momentum=args.momentum,
        lr_step_epochs=args.lr_step,
        lr_gamma=args.lr_gamma,
        backbone_id=args.backbone,
        seed=args.seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bar = tqdm(total=config.epochs, unit="epoch", disable=args.no_progress)
    try:
        backend, history = train(
            train_crops,
            val_crops,
            config,
            log_path=out_dir / "train_log.jsonl",
            checkpoint_dir=out_dir,
            progress_sink=lambda done, total: bar.update(1),
        )
    finally:
        bar.close()
    print(
        f"best epoch {history.best_epoch}: "
        f"val_accuracy={history.best_val_accuracy:.4f}"
    )
    if args.export_id:
        manifest = export_model(backend, args.zoo or out_dir, args.export_id)
        print(f"exported {manifest.model_id} v{manifest.version}")
    return 0


def cmd_eval(args) -> int:
    from .finetune import evaluate_classifier

    cfg = _config_from(args)
    backend = _resolve_backend(args.zoo or cfg.model_dir, ModelTask.CLASSIFIER, args.model)
    if backend is None:
        raise UnknownModel(f"no classifier available in {args.zoo or cfg.model_dir}")
    crops = read_crop_manifest(args.crops_manifest)
    report = evaluate_classifier(backend, crops)
    _emit(report.to_json(), args.out)
    return 0


def cmd_export(args) -> int:
    results = parse_md_json(Path(args.results))
    did = False
    if args.md:
        write_md_json(results, args.md)
        print(f"md-batch -> {args.md}")
        did = True
    if args.coco:
        # parsed results carry no pixel dimensions; re-stat the files
        results = [
            replace(r, image=ref_for_file(r.image.path))
            if not r.image.has_dimensions and Path(r.image.path).is_file()
            else r
            for r in results
        ]
        write_coco(results, args.coco)
        print(f"coco -> {args.coco}")
        did = True
    if args.folders:
        manifest = separate_folders(results, args.folders, move=args.move)
        print(f"{len(manifest)} files -> {args.folders}")
        did = True
    if args.annotate_dir:
        out_dir = Path(args.annotate_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for r in results:
            render_annotated(r.image, r, out_path=out_dir / Path(r.image.path).name)
        print(f"annotated {len(results)} images -> {out_dir}")
        did = True
    if not did:
        raise ValueError("export: choose at least one of --md/--coco/--folders/--annotate-dir")
    return 0


def cmd_scrub(args) -> int:
    policy = ScrubPolicy(
        gps_mode=args.gps_mode,
        grid_degrees=args.grid_degrees,
        exclude_person_images=not args.keep_person,
    )
    if args.results:
        items = parse_md_json(Path(args.results))
    else:
        items = find_images(args.input)
    report = scrub_metadata(items, policy, args.out_dir)
    report_path = args.report or str(Path(args.out_dir) / "scrub_report.json")
    report.write(report_path)
    print(
        f"{len(report.outputs)} scrubbed, {len(report.excluded_person)} "
        f"person images excluded -> {args.out_dir}"
    )
    return 0


def cmd_zoo_list(args) -> int:
    cfg = _config_from(args)
    zoo = Path(args.zoo or cfg.model_dir)
    manifests = scan_zoo(zoo) if zoo.is_dir() else []
    _emit([m.to_json() for m in manifests], args.out)
    return 0


def cmd_zoo_add(args) -> int:
    cfg = _config_from(args)
    zoo = Path(args.zoo or cfg.model_dir)
    zoo.mkdir(parents=True, exist_ok=True)
    manifest = ModelManifest(
        model_id=args.model_id,
        version=args.version,
        task=ModelTask(args.task),
        class_labels=tuple(args.labels.split(",")) if args.labels else (),
        artifact_path=str(Path(args.artifact).resolve()),
        checksum=compute_checksum(args.artifact),
        input_size_px=args.input_size,
        description=args.description,
        region_tags=tuple(args.region_tags.split(",")) if args.region_tags else (),
    )
    path = write_manifest(manifest, manifest_path(zoo, manifest))
    print(f"added {manifest.model_id} v{manifest.version} -> {path}")
    return 0


def _gt_from_md(path: str) -> dict:
    gt = {}
    for result in parse_md_json(Path(path)):
        gt[result.image.path] = [d for d, _ in result.detections]
    return gt


def cmd_zoo_score(args) -> int:
    board = Leaderboard(store_path=args.store)
    board.register_test_set(
        HiddenTestSet(test_set_id=args.test_set, ground_truth=_gt_from_md(args.gt))
    )
    record = board.evaluate_submission(
        Path(args.submission),
        args.test_set,
        model_id=args.model_id,
        parameter_count=args.parameter_count,
    )
    _emit(record.to_json(), args.out)
    return 0


def cmd_zoo_board(args) -> int:
    board = Leaderboard(store_path=args.store)
    records = board.leaderboard(args.test_set)
    _emit([r.to_json() for r in records], args.out)
    return 0


def cmd_serve(args) -> int:
    cfg = _config_from(args, host=args.host, port=args.port, workers=args.workers)
    serve(cfg)
    return 0


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trapkit",
        description="Camera-trap detection, classification, and triage toolkit.",
    )
    parser.add_argument("--version", action="version", version=f"trapkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run the pipeline on one image")
    _add_config_flags(p)
    _add_pipeline_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--annotate", help="write an annotated copy here")
    p.add_argument("--out", help="write result JSON here instead of stdout")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("batch", help="run the pipeline over a directory")
    _add_config_flags(p)
    _add_pipeline_flags(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="MegaDetector-batch JSON output path")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-progress", action="store_true")
    p.set_defaults(fn=cmd_batch)

    p = sub.add_parser("video", help="classify a video by frame voting")
    _add_config_flags(p)
    _add_pipeline_flags(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--fps-cap", type=float, default=30.0)
    p.add_argument("--out", help="write the full video result JSON here")
    p.set_defaults(fn=cmd_video)

    p = sub.add_parser("triage", help="partition results for human review")
    p.add_argument("--results", required=True, help="MegaDetector-batch JSON")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_triage)

    p = sub.add_parser("split", help="split records into train/val[/test]")
    p.add_argument("--records", help="records JSON with location/time metadata")
    p.add_argument("--in", dest="input", help="image directory (random strategy)")
    p.add_argument(
        "--strategy", required=True, choices=["random", "location", "time", "season"]
    )
    p.add_argument("--fractions", required=True, help="e.g. 0.7,0.3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("crops", help="build a labeled crop dataset from results")
    p.add_argument("--results", required=True)
    p.add_argument("--labels", required=True, help="JSON map image path -> label")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--crop-size", type=int, default=256)
    p.set_defaults(fn=cmd_crops)

    p = sub.add_parser("train", help="fine-tune a classifier on crop manifests")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--lr-step", type=int, default=20)
    p.add_argument("--lr-gamma", type=float, default=0.1)
    p.add_argument("--backbone", default="resnet50-class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--export-id", help="also export into the zoo under this model id")
    p.add_argument("--zoo", help="zoo directory for --export-id")
    p.add_argument("--no-progress", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a classifier on a crop manifest")
    _add_config_flags(p)
    p.add_argument("--model", help="classifier model id")
    p.add_argument("--zoo", help="zoo directory")
    p.add_argument("--crops-manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export", help="convert or post-process a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--md", help="rewrite canonical MegaDetector-batch JSON here")
    p.add_argument("--coco", help="write COCO JSON here")
    p.add_argument("--folders", help="separate images into category folders here")
    p.add_argument("--move", action="store_true", help="move instead of copy")
    p.add_argument("--annotate-dir", help="write annotated copies here")
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("scrub", help="write privacy-scrubbed image copies")
    p.add_argument("--in", dest="input", help="image directory")
    p.add_argument("--results", help="results JSON (enables person exclusion)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--gps-mode", choices=["remove", "grid"], default="remove")
    p.add_argument("--grid-degrees", type=float, default=0.1)
    p.add_argument("--keep-person", action="store_true")
    p.add_argument("--report", help="scrub report path")
    p.set_defaults(fn=cmd_scrub)

    zoo = sub.add_parser("zoo", help="model zoo operations")
    zoo_sub = zoo.add_subparsers(dest="zoo_command", required=True)

    p = zoo_sub.add_parser("list", help="list zoo manifests")
    _add_config_flags(p)
    p.add_argument("--zoo")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_zoo_list)

    p = zoo_sub.add_parser("add", help="register an artifact in the zoo")
    _add_config_flags(p)
    p.add_argument("--zoo")
    p.add_argument("--artifact", required=True)
    p.add_argument("--model-id", required=True)
    p.add_argument("--version", default="1.0")
    p.add_argument("--task", required=True, choices=["detector", "classifier"])
    p.add_argument("--labels", help="comma-separated class labels")
    p.add_argument("--input-size", type=int, default=256)
    p.add_argument("--description", default="")
    p.add_argument("--region-tags", help="comma-separated region tags")
    p.set_defaults(fn=cmd_zoo_add)

    p = zoo_sub.add_parser("score", help="score a submission against ground truth")
    p.add_argument("--submission", required=True, help="MegaDetector-batch JSON")
    p.add_argument("--gt", required=True, help="ground truth as MegaDetector-batch JSON")
    p.add_argument("--test-set", required=True)
    p.add_argument("--model-id", required=True)
    p.add_argument("--parameter-count", type=int, required=True)
    p.add_argument("--store", help="leaderboard JSONL store")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_zoo_score)

    p = zoo_sub.add_parser("board", help="print the leaderboard for a test set")
    p.add_argument("--test-set", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_zoo_board)

    p = sub.add_parser("serve", help="run the HTTP service")
    _add_config_flags(p)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception as exc:
        line = json.dumps({"error": type(exc).__name__, "message": str(exc)})
        print(line, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
