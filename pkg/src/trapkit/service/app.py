"""HTTP API over the pipeline, video, triage, zoo, and leaderboard.

Single images are uploaded; batches and videos already on the server are
referenced by path (uploads are capped). Long work runs as jobs: submit,
poll GET /jobs/{id}, fetch GET /jobs/{id}/result. Batch results are written
once with the canonical MegaDetector-batch writer, and the result endpoint
returns those exact file bytes, so API and CLI outputs are interchangeable.
"""

from __future__ import annotations

import base64
import io
import json
import threading
import uuid
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse
from pydantic import BaseModel

from ..backends import (
    ModelTask,
    load_backend,
    scan_zoo,
)
from ..core import ClassScores
from ..errors import (
    ImageDecodeError,
    InvalidRating,
    TrapkitError,
    UnknownModel,
    VideoDecodeError,
)
from ..evalboard import FeedbackEntry, Leaderboard
from ..export import parse_md_json, render_annotated, write_md_json
from ..imaging import find_images, ref_for_file
from ..pipeline import PipelineConfig, PipelineResult, run_batch, run_image, triage
from ..video import classify_video
from .config import ServiceConfig
from .jobs import JobManager

MB = 1 << 20


# --- request bodies ----------------------------------------------------------


class BatchJobRequest(BaseModel):
    input_dir: str
    det_threshold: Optional[float] = None
    clf_threshold: Optional[float] = None
    detector_id: Optional[str] = None
    classifier_id: Optional[str] = None
    workers: Optional[int] = None


class TriageRequest(BaseModel):
    results_path: str
    threshold: float


class FeedbackRequest(BaseModel):
    model_id: str
    user_id: str
    rating: int
    comment: str = ""
    operator_token: Optional[str] = None


# --- JSON renderings ----------------------------------------------------------


def _scores_to_json(scores: Optional[ClassScores]):
    if scores is None:
        return None
    return [[label, prob] for label, prob in scores.items()]


def result_to_json(result: PipelineResult) -> dict:
    return {
        "file": result.image.path,
        "is_empty": result.is_empty,
        "needs_review": result.needs_review,
        "error": result.error,
        "max_detection_conf": result.max_detection_conf(),
        "detections": [
            {
                "category": d.category.value,
                "conf": d.confidence,
                "bbox": d.bbox.as_list(),
                "classifications": _scores_to_json(scores),
            }
            for d, scores in result.detections
        ],
    }


def video_result_to_json(vr) -> dict:
    return {
        "video": vr.video,
        "final_label": vr.final_label,
        "vote_tally": vr.vote_tally,
        "effective_fps": vr.effective_fps,
        "frames": [result_to_json(r) for r in vr.frame_results],
    }


# --- backend registry ----------------------------------------------------------


class _Backends:
    """Lazily loads zoo backends, one instance per (model_id, version)."""

    def __init__(self, config: ServiceConfig):
        self._config = config
        self._lock = threading.Lock()
        self._cache: dict = {}

    def manifests(self) -> list:
        zoo = Path(self._config.model_dir)
        if not zoo.is_dir():
            return []
        return scan_zoo(zoo)

    def resolve(self, task: ModelTask, model_id: Optional[str]):
        """Backend for an explicit model id, or the configured/sole default."""
        wanted = model_id or (
            self._config.detector_id
            if task is ModelTask.DETECTOR
            else self._config.classifier_id
        )
        candidates = [m for m in self.manifests() if m.task is task]
        if wanted:
            candidates = [m for m in candidates if m.model_id == wanted]
            if not candidates:
                raise HTTPException(404, f"no {task.value} named {wanted!r} in the zoo")
        if not candidates:
            return None
        manifest = sorted(candidates, key=lambda m: (m.model_id, m.version))[-1]
        with self._lock:
            if manifest.key not in self._cache:
                try:
                    self._cache[manifest.key] = load_backend(manifest)
                except TrapkitError as exc:
                    raise HTTPException(503, f"backend failed to load: {exc}")
            return self._cache[manifest.key]


def _require_detector(backends: _Backends, model_id: Optional[str]):
    det = backends.resolve(ModelTask.DETECTOR, model_id)
    if det is None:
        raise HTTPException(503, "no detector backend loaded")
    return det


def _check_threshold(name: str, value: Optional[float]) -> None:
    if value is not None and not 0.0 <= value <= 1.0:
        raise HTTPException(422, f"{name} must lie in [0, 1], got {value}")


async def _save_upload(upload: UploadFile, target: Path, cap_mb: int) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    size = 0
    with open(target, "wb") as fh:
        while True:
            chunk = await upload.read(MB)
            if not chunk:
                break
            size += len(chunk)
            if size > cap_mb * MB:
                fh.close()
                target.unlink(missing_ok=True)
                raise HTTPException(400, f"upload exceeds {cap_mb} MB cap")
            fh.write(chunk)


# --- app factory -----------------------------------------------------------------


def create_app(
    config: Optional[ServiceConfig] = None,
    board: Optional[Leaderboard] = None,
    job_manager: Optional[JobManager] = None,
) -> FastAPI:
    config = config or ServiceConfig()
    data_dir = Path(config.data_dir)
    results_dir = data_dir / "results"
    uploads_dir = data_dir / "uploads"
    if board is None:
        store = config.store_path or str(data_dir / "leaderboard.jsonl")
        board = Leaderboard(store_path=store)
    jobs = job_manager or JobManager(workers=config.workers)
    backends = _Backends(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        jobs.shutdown()

    app = FastAPI(title="trapkit service", lifespan=lifespan)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.config = config
    app.state.board = board
    app.state.jobs = jobs

    def pipeline_config(det_threshold, clf_threshold) -> PipelineConfig:
        return PipelineConfig(
            det_threshold=config.det_threshold if det_threshold is None else det_threshold,
            clf_threshold=config.clf_threshold if clf_threshold is None else clf_threshold,
            crop_size_px=config.crop_size_px,
        )

    # --- models + test sets

    @app.get("/models")
    def list_models():
        manifests = backends.manifests()
        for m in manifests:
            board.register_model(m.model_id)
        return [m.to_json() for m in manifests]

    @app.get("/testsets")
    def list_testsets():
        return board.descriptors()

    # --- single image

    @app.post("/detect")
    async def detect(
        image: UploadFile = File(...),
        det_threshold: Optional[float] = Form(None),
        clf_threshold: Optional[float] = Form(None),
        detector_id: Optional[str] = Form(None),
        classifier_id: Optional[str] = Form(None),
        annotate: bool = Form(False),
    ):
        _check_threshold("det_threshold", det_threshold)
        _check_threshold("clf_threshold", clf_threshold)
        det = _require_detector(backends, detector_id)
        clf = backends.resolve(ModelTask.CLASSIFIER, classifier_id)

        suffix = Path(image.filename or "upload.jpg").suffix or ".jpg"
        target = uploads_dir / f"{uuid.uuid4().hex}{suffix}"
        await _save_upload(image, target, config.max_image_mb)

        try:
            ref = ref_for_file(target)
        except ImageDecodeError as exc:
            raise HTTPException(400, f"cannot decode image: {exc}")
        result = run_image(ref, det, clf, pipeline_config(det_threshold, clf_threshold))
        doc = result_to_json(result)
        doc["file"] = image.filename or target.name  # server path is an implementation detail
        if annotate:
            rendered = render_annotated(target, result)
            buf = io.BytesIO()
            rendered.save(buf, format="PNG")
            doc["annotated_png_base64"] = base64.b64encode(buf.getvalue()).decode("ascii")
        return doc

    # --- jobs

    @app.post("/jobs/batch")
    def submit_batch(req: BatchJobRequest):
        _check_threshold("det_threshold", req.det_threshold)
        _check_threshold("clf_threshold", req.clf_threshold)
        input_dir = Path(req.input_dir)
        if not input_dir.is_dir():
            raise HTTPException(400, f"input_dir is not a directory: {req.input_dir}")
        images = find_images(input_dir)
        if not images:
            raise HTTPException(400, f"no images under {req.input_dir}")
        det = _require_detector(backends, req.detector_id)
        clf = backends.resolve(ModelTask.CLASSIFIER, req.classifier_id)
        pcfg = pipeline_config(req.det_threshold, req.clf_threshold)
        workers = req.workers or 1

        def run(job, progress) -> str:
            refs = [ref_for_file(p) for p in images]
            results = run_batch(
                refs, det, clf, pcfg, progress_sink=progress, workers=workers
            )
            out = results_dir / f"{job.job_id}.json"
            write_md_json(results, out)
            return str(out)

        job = jobs.submit("batch", run, total=len(images))
        return {"job_id": job.job_id}

    @app.post("/jobs/video")
    async def submit_video(
        video: Optional[UploadFile] = File(None),
        video_path: Optional[str] = Form(None),
        det_threshold: Optional[float] = Form(None),
        clf_threshold: Optional[float] = Form(None),
        detector_id: Optional[str] = Form(None),
        classifier_id: Optional[str] = Form(None),
        target_fps: Optional[float] = Form(None),
    ):
        _check_threshold("det_threshold", det_threshold)
        _check_threshold("clf_threshold", clf_threshold)
        if (video is None) == (video_path is None):
            raise HTTPException(400, "provide exactly one of video upload or video_path")
        if video is not None:
            suffix = Path(video.filename or "clip.mp4").suffix or ".mp4"
            source = uploads_dir / f"{uuid.uuid4().hex}{suffix}"
            await _save_upload(video, source, config.max_video_mb)
        else:
            source = Path(video_path)
            if not source.exists():
                raise HTTPException(400, f"no such video: {video_path}")
        det = _require_detector(backends, detector_id)
        clf = backends.resolve(ModelTask.CLASSIFIER, classifier_id)
        pcfg = pipeline_config(det_threshold, clf_threshold)
        fps = target_fps or config.target_fps

        def run(job, progress) -> str:
            try:
                vr = classify_video(source, det, clf, pcfg, target_fps=fps)
            except VideoDecodeError as exc:
                raise RuntimeError(str(exc))
            progress(len(vr.frame_results), len(vr.frame_results))
            out = results_dir / f"{job.job_id}.json"
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(
                json.dumps(video_result_to_json(vr), ensure_ascii=False, indent=1) + "\n",
                encoding="utf-8",
            )
            return str(out)

        job = jobs.submit("video", run)
        return {"job_id": job.job_id}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        try:
            return jobs.get(job_id).to_json()
        except KeyError:
            raise HTTPException(404, f"unknown job {job_id!r}")

    @app.get("/jobs/{job_id}/result")
    def job_result(job_id: str):
        try:
            job = jobs.get(job_id)
        except KeyError:
            raise HTTPException(404, f"unknown job {job_id!r}")
        if job.state == "failed":
            raise HTTPException(400, f"job failed: {job.error_message}")
        if job.state != "done" or not job.result_path:
            raise HTTPException(400, f"job {job_id} not finished (state={job.state})")
        return FileResponse(job.result_path, media_type="application/json")

    # --- triage

    @app.post("/triage")
    def triage_results(req: TriageRequest):
        if not 0.0 <= req.threshold <= 1.0:
            raise HTTPException(422, f"threshold must lie in [0, 1], got {req.threshold}")
        path = Path(req.results_path)
        if not path.is_file():
            raise HTTPException(400, f"no results file at {req.results_path}")
        try:
            results = parse_md_json(path)
        except (KeyError, ValueError) as exc:
            raise HTTPException(400, f"bad results document: {exc}")
        confident, review = triage(results, req.threshold)
        return {
            "total": len(results),
            "auto_accepted": len(confident),
            "needs_review": len(review),
            "review": [r.image.path for r in review],
        }

    # --- leaderboard + feedback

    @app.get("/leaderboard/{test_set_id}")
    def leaderboard(test_set_id: str):
        records = board.leaderboard(test_set_id)
        return {"test_set_id": test_set_id, "records": [r.to_json() for r in records]}

    @app.post("/feedback")
    def feedback(req: FeedbackRequest):
        verified = bool(config.operator_token) and req.operator_token == config.operator_token
        try:
            entry = FeedbackEntry(
                model_id=req.model_id,
                user_id=req.user_id,
                verified=verified,
                rating=req.rating,
                comment=req.comment,
            )
        except InvalidRating as exc:
            raise HTTPException(422, str(exc))
        try:
            board.add_feedback(entry)
        except UnknownModel as exc:
            raise HTTPException(404, str(exc))
        doc = entry.to_json()
        doc["aggregate_rating"] = board.model_rating(req.model_id)
        return doc

    return app


def serve(config: ServiceConfig) -> None:
    """Run the API under uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
