"""Asynchronous job manager: bounded worker pool over a FIFO queue.

State machine per job: queued -> running -> done | failed. Progress is
monotone non-decreasing; regressions from racy reporters are clamped.
"""

from __future__ import annotations

import queue
import threading
import traceback
import uuid
from dataclasses import dataclass, field
from typing import Callable, Optional

JOB_STATES = ("queued", "running", "done", "failed")


@dataclass
class Job:
    job_id: str
    kind: str  # "batch" | "video"
    state: str = "queued"
    done_count: int = 0
    total: int = 0
    result_uri: Optional[str] = None
    result_path: Optional[str] = None
    error_message: Optional[str] = None
    state_history: list = field(default_factory=lambda: ["queued"])

    def to_json(self) -> dict:
        return {
            "job_id": self.job_id,
            "kind": self.kind,
            "state": self.state,
            "progress": {"done": self.done_count, "total": self.total},
            "result_uri": self.result_uri,
            "error_message": self.error_message,
            "state_history": list(self.state_history),
        }


class JobManager:
    """Runs submitted jobs on a fixed pool of worker threads, FIFO order."""

    def __init__(self, workers: int = 2):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self._queue: queue.Queue = queue.Queue()
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._threads = [
            threading.Thread(target=self._worker, daemon=True, name=f"job-worker-{i}")
            for i in range(workers)
        ]
        for t in self._threads:
            t.start()

    def submit(
        self,
        kind: str,
        fn: Callable[["Job", Callable[[int, int], None]], str],
        total: int = 0,
    ) -> Job:
        """Queue fn(job, progress) for execution; fn returns the result path."""
        job = Job(job_id=uuid.uuid4().hex, kind=kind, total=total)
        with self._lock:
            self._jobs[job.job_id] = job
        self._queue.put((job, fn))
        return job

    def get(self, job_id: str) -> Job:
        with self._lock:
            return self._jobs[job_id]

    def _set_state(self, job: Job, state: str) -> None:
        with self._lock:
            job.state = state
            job.state_history.append(state)

    def _progress(self, job: Job) -> Callable[[int, int], None]:
        def report(done: int, total: int) -> None:
            with self._lock:
                job.done_count = max(job.done_count, done)
                job.total = max(job.total, total)

        return report

    def _worker(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                return
            job, fn = item
            self._set_state(job, "running")
            try:
                result_path = fn(job, self._progress(job))
                with self._lock:
                    job.result_path = result_path
                    job.result_uri = f"/jobs/{job.job_id}/result"
                self._set_state(job, "done")
            except Exception as exc:
                with self._lock:
                    job.error_message = f"{type(exc).__name__}: {exc}"
                traceback.print_exc()
                self._set_state(job, "failed")

    def shutdown(self) -> None:
        for _ in self._threads:
            self._queue.put(None)
        for t in self._threads:
            t.join(timeout=5)
