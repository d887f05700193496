"""HTTP service: projects, frame upload, annotation, tracking jobs, reports.

Single-user lab deployment: filesystem persistence under one data
directory, a static bearer token, and a FIFO worker pool (one job at a
time by default, tracking is memory-heavy). All endpoints live under
/api/v1 and exchange JSON mirroring the domain types.

Data layout:

    DATA_DIR/projects/<pid>/project.json
    DATA_DIR/projects/<pid>/frames/<name>.png
    DATA_DIR/projects/<pid>/annotation.json
    DATA_DIR/projects/<pid>/jobs/<jid>/{job.json, log.txt, report/}
"""

from __future__ import annotations

import io
import json
import queue
import threading
import time
import uuid
from contextlib import asynccontextmanager
from pathlib import Path

import numpy as np
from fastapi import Body, Depends, FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, PlainTextResponse
from starlette.datastructures import UploadFile
from PIL import Image

from . import annotation
from .baseline import BaselineBackend
from .pipeline import run_pipeline
from .tracking import (
    BackendFailureError,
    FrameSequence,
    RemoteBackend,
    TrackerParams,
    TrackingCancelled,
    TrackingError,
)

JOB_STATES = ("queued", "running", "done", "failed", "cancelled")
TERMINAL_STATES = ("done", "failed", "cancelled")


def _new_id() -> str:
    return uuid.uuid4().hex[:12]


class Job:
    """One tracking job with an append-only log and a cancel flag."""

    def __init__(self, job_id, project_id, backend_name, params, quality, job_dir):
        self.job_id = job_id
        self.project_id = project_id
        self.backend_name = backend_name
        self.params = params
        self.quality = quality
        self.dir = Path(job_dir)
        self.state = "queued"
        self.progress = {"frames_done": 0, "frames_total": 0}
        self.error = None
        self.cancel_event = threading.Event()
        self.lock = threading.Lock()

    def log(self, message: str) -> None:
        line = f"[{time.strftime('%Y-%m-%dT%H:%M:%S')}] {message}\n"
        with self.lock:
            with open(self.dir / "log.txt", "a", encoding="utf-8") as fh:
                fh.write(line)

    def read_log(self) -> str:
        path = self.dir / "log.txt"
        return path.read_text(encoding="utf-8") if path.exists() else ""

    def set_state(self, state: str) -> None:
        # Transitions only move forward: queued -> running -> terminal.
        with self.lock:
            order = {name: i for i, name in enumerate(("queued", "running"))}
            if self.state in TERMINAL_STATES:
                raise RuntimeError(f"job {self.job_id} already {self.state}")
            if state in order and order.get(state, 99) <= order.get(self.state, -1):
                raise RuntimeError(f"cannot move {self.state} -> {state}")
            self.state = state
        self.persist()

    def persist(self) -> None:
        doc = self.to_dict()
        with open(self.dir / "job.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "project_id": self.project_id,
            "backend": self.backend_name,
            "params": self.params,
            "quality": self.quality,
            "state": self.state,
            "progress": dict(self.progress),
            "error": self.error,
            "report": "report" if (self.dir / "report" / "manifest.json").exists() else None,
        }


class ServiceState:
    def __init__(self, data_dir, auth_token, remote_url=None, workers=1):
        self.data_dir = Path(data_dir)
        self.auth_token = auth_token
        self.remote_url = remote_url
        self.workers = workers
        self.projects_dir = self.data_dir / "projects"
        self.projects_dir.mkdir(parents=True, exist_ok=True)
        self.jobs: dict[str, Job] = {}
        self.queue: queue.Queue = queue.Queue()
        self.lock = threading.Lock()
        self.threads: list[threading.Thread] = []
        self.shutdown = threading.Event()

    # -- projects ---------------------------------------------------------

    def project_dir(self, project_id: str) -> Path:
        return self.projects_dir / project_id

    def load_project(self, project_id: str) -> dict:
        path = self.project_dir(project_id) / "project.json"
        if not path.exists():
            raise HTTPException(404, f"unknown project {project_id}")
        return json.loads(path.read_text(encoding="utf-8"))

    def save_project(self, doc: dict) -> None:
        pdir = self.project_dir(doc["project_id"])
        pdir.mkdir(parents=True, exist_ok=True)
        with open(pdir / "project.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)

    def project_has_jobs(self, project_id: str) -> bool:
        jobs_dir = self.project_dir(project_id) / "jobs"
        return jobs_dir.exists() and any(jobs_dir.iterdir())

    def load_frames(self, project_id: str) -> FrameSequence:
        doc = self.load_project(project_id)
        frames_dir = self.project_dir(project_id) / "frames"
        if not doc.get("frames"):
            raise HTTPException(422, "project has no frames")
        return FrameSequence.from_directory(frames_dir)

    # -- job worker -------------------------------------------------------

    def start_workers(self) -> None:
        for i in range(self.workers):
            t = threading.Thread(target=self._worker, name=f"job-worker-{i}", daemon=True)
            t.start()
            self.threads.append(t)

    def stop_workers(self) -> None:
        self.shutdown.set()
        for _ in self.threads:
            self.queue.put(None)
        for t in self.threads:
            t.join(timeout=5)

    def _worker(self) -> None:
        while not self.shutdown.is_set():
            item = self.queue.get()
            if item is None:
                return
            job = self.jobs.get(item)
            if job is None:
                continue
            if job.cancel_event.is_set():
                if job.state == "queued":
                    job.set_state("cancelled")
                    job.log("cancelled while queued")
                continue
            self._run_job(job)

    def _make_backend(self, job: Job):
        if job.backend_name == "baseline":
            return BaselineBackend()
        url = job.params.get("remote_url") or self.remote_url
        if not url:
            raise BackendFailureError("no remote segmenter URL configured")
        return RemoteBackend(url)

    def _run_job(self, job: Job) -> None:
        job.set_state("running")
        job.log(f"job started with backend {job.backend_name}")
        try:
            frames = self.load_frames(job.project_id)
            session = annotation.load_file(
                self.project_dir(job.project_id) / "annotation.json"
            )
            params = TrackerParams.from_dict(job.params)
            job.progress["frames_total"] = frames.n_frames

            def progress(done, total):
                job.progress["frames_done"] = done
                job.progress["frames_total"] = total
                job.persist()
                job.log(f"processed {done}/{total} frames")

            bundle = run_pipeline(
                frames, session, self._make_backend(job), params,
                job.dir / "report", quality=job.quality,
                progress=progress, cancel=job.cancel_event.is_set,
            )
            job.log(f"report written with {len(bundle.artifacts)} artifacts")
            job.set_state("done")
        except TrackingCancelled:
            job.log("cancelled during tracking")
            job.set_state("cancelled")
        except (annotation.AnnotationError, TrackingError, ValueError, OSError) as exc:
            job.error = f"{type(exc).__name__}: {exc}"
            job.log(f"job failed: {job.error}")
            job.set_state("failed")

    def get_job(self, job_id: str) -> Job:
        job = self.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        return job


def create_app(
    data_dir,
    auth_token: str,
    remote_url: str | None = None,
    workers: int = 1,
) -> FastAPI:
    state = ServiceState(data_dir, auth_token, remote_url=remote_url, workers=workers)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        state.start_workers()
        yield
        state.stop_workers()

    app = FastAPI(title="cystrack service", lifespan=lifespan)
    app.state.service = state

    def authorized(request: Request) -> None:
        header = request.headers.get("authorization", "")
        if header != f"Bearer {state.auth_token}":
            raise HTTPException(401, "missing or invalid bearer token")

    auth = Depends(authorized)

    @app.get("/api/v1/health")
    def health():
        return {"status": "ok"}

    # -- projects ---------------------------------------------------------

    @app.post("/api/v1/projects", dependencies=[auth], status_code=201)
    def create_project(payload: dict = Body(...)):
        name = payload.get("name")
        if not isinstance(name, str) or not name.strip():
            raise HTTPException(400, "project name required")
        doc = {
            "project_id": _new_id(),
            "name": name.strip(),
            "frames": [],
            "frame_width": None,
            "frame_height": None,
        }
        state.save_project(doc)
        return doc

    @app.get("/api/v1/projects", dependencies=[auth])
    def list_projects():
        out = []
        for pdir in sorted(state.projects_dir.iterdir()):
            meta = pdir / "project.json"
            if meta.exists():
                out.append(json.loads(meta.read_text(encoding="utf-8")))
        return out

    @app.get("/api/v1/projects/{project_id}", dependencies=[auth])
    def get_project(project_id: str):
        doc = state.load_project(project_id)
        doc["has_annotation"] = (
            state.project_dir(project_id) / "annotation.json"
        ).exists()
        doc["jobs"] = sorted(
            j.job_id for j in state.jobs.values() if j.project_id == project_id
        )
        return doc

    # -- frames -----------------------------------------------------------

    def _store_frames(project_id: str, named_bytes: list[tuple[str, bytes]]) -> dict:
        doc = state.load_project(project_id)
        if state.project_has_jobs(project_id):
            raise HTTPException(409, "frames are immutable once a job has run")
        if len(named_bytes) < 2:
            raise HTTPException(400, "need at least 2 frames")
        frames_dir = state.project_dir(project_id) / "frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
        for old in frames_dir.iterdir():
            old.unlink()
        dims = None
        names = []
        for name, blob in sorted(named_bytes):
            try:
                img = Image.open(io.BytesIO(blob))
                arr = np.asarray(img)
            except Exception as exc:
                raise HTTPException(400, f"frame {name} is not a readable image: {exc}")
            if arr.ndim == 3:
                arr = arr[..., 0]
            if dims is None:
                dims = arr.shape
            elif arr.shape != dims:
                raise HTTPException(400, f"frame {name} has mismatched dimensions")
            with open(frames_dir / name, "wb") as fh:
                fh.write(blob)
            names.append(name)
        doc["frames"] = names
        doc["frame_height"], doc["frame_width"] = dims
        state.save_project(doc)
        return doc

    @app.post("/api/v1/projects/{project_id}/frames", dependencies=[auth])
    async def upload_frames(project_id: str, request: Request):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            uploads = [v for v in form.getlist("files") if isinstance(v, UploadFile)]
            if not uploads:
                raise HTTPException(400, "multipart upload needs 'files' entries")
            named = [(u.filename, await u.read()) for u in uploads]
        else:
            body = await request.json()
            directory = body.get("directory") if isinstance(body, dict) else None
            if not directory:
                raise HTTPException(400, "JSON body must carry 'directory'")
            src = Path(directory)
            if not src.is_dir():
                raise HTTPException(400, f"not a directory: {directory}")
            named = [
                (p.name, p.read_bytes())
                for p in sorted(src.iterdir())
                if p.suffix.lower() in (".png", ".tif", ".tiff")
            ]
            if not named:
                raise HTTPException(400, f"no PNG/TIFF frames in {directory}")
        return _store_frames(project_id, named)

    @app.get("/api/v1/projects/{project_id}/frames/{name}", dependencies=[auth])
    def get_frame(project_id: str, name: str):
        state.load_project(project_id)
        root = (state.project_dir(project_id) / "frames").resolve()
        target = (root / name).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            raise HTTPException(404, f"no frame {name}")
        return FileResponse(target)

    # -- annotation -------------------------------------------------------

    @app.put("/api/v1/projects/{project_id}/annotation", dependencies=[auth])
    def put_annotation(project_id: str, payload: dict = Body(...)):
        doc = state.load_project(project_id)
        try:
            session = annotation.session_from_dict(payload)
            frame_dims = None
            frame_count = None
            if doc.get("frames"):
                frame_dims = (doc["frame_width"], doc["frame_height"])
                frame_count = len(doc["frames"])
            validated = annotation.validate(session, frame_dims, frame_count)
        except annotation.AnnotationError as exc:
            raise HTTPException(
                422,
                {"error": type(exc).__name__.removesuffix("Error"), "detail": str(exc)},
            )
        annotation.save_file(session, state.project_dir(project_id) / "annotation.json")
        return {
            "ok": True,
            "n_organoids": validated.n_total_organoids,
            "n_cysts": len(validated.cysts),
        }

    @app.get("/api/v1/projects/{project_id}/annotation", dependencies=[auth])
    def get_annotation(project_id: str):
        state.load_project(project_id)
        path = state.project_dir(project_id) / "annotation.json"
        if not path.exists():
            raise HTTPException(404, "project has no annotation")
        return json.loads(path.read_text(encoding="utf-8"))

    # -- jobs -------------------------------------------------------------

    @app.post("/api/v1/projects/{project_id}/jobs", dependencies=[auth], status_code=201)
    def start_job(project_id: str, payload: dict = Body(default={})):
        doc = state.load_project(project_id)
        backend_name = payload.get("backend", "baseline")
        if backend_name not in ("baseline", "remote"):
            raise HTTPException(400, f"unknown backend {backend_name!r}")
        params = payload.get("params") or {}
        if not isinstance(params, dict):
            raise HTTPException(400, "params must be an object")
        quality = payload.get("quality", "full")
        if quality not in ("preview", "full"):
            raise HTTPException(400, f"unknown quality {quality!r}")
        if not doc.get("frames"):
            raise HTTPException(422, "project has no frames")
        if not (state.project_dir(project_id) / "annotation.json").exists():
            raise HTTPException(422, "project has no annotation")

        if backend_name == "remote":
            url = params.get("remote_url") or state.remote_url
            if not url:
                raise HTTPException(503, "no remote segmenter URL configured")
            import requests

            try:
                requests.get(url.rstrip("/") + "/health", timeout=2)
            except requests.RequestException as exc:
                raise HTTPException(503, f"remote segmenter unreachable: {exc}")

        job_id = _new_id()
        job_dir = state.project_dir(project_id) / "jobs" / job_id
        job_dir.mkdir(parents=True)
        job = Job(job_id, project_id, backend_name, params, quality, job_dir)
        with state.lock:
            state.jobs[job_id] = job
        job.persist()
        job.log("job queued")
        state.queue.put(job_id)
        return {"job_id": job_id, "state": job.state}

    @app.get("/api/v1/jobs/{job_id}", dependencies=[auth])
    def job_status(job_id: str):
        return state.get_job(job_id).to_dict()

    @app.get("/api/v1/jobs/{job_id}/log", dependencies=[auth])
    def job_log(job_id: str):
        return PlainTextResponse(state.get_job(job_id).read_log())

    @app.post("/api/v1/jobs/{job_id}/cancel", dependencies=[auth])
    def cancel_job(job_id: str):
        job = state.get_job(job_id)
        job.cancel_event.set()
        if job.state == "queued":
            job.set_state("cancelled")
            job.log("cancelled while queued")
        return job.to_dict()

    # -- reports ----------------------------------------------------------

    @app.get("/api/v1/jobs/{job_id}/report", dependencies=[auth])
    def report_manifest(job_id: str):
        job = state.get_job(job_id)
        manifest_path = job.dir / "report" / "manifest.json"
        if not manifest_path.exists():
            raise HTTPException(404, "job has no report")
        return json.loads(manifest_path.read_text(encoding="utf-8"))

    @app.get("/api/v1/jobs/{job_id}/report/{artifact_path:path}", dependencies=[auth])
    def report_artifact(job_id: str, artifact_path: str):
        job = state.get_job(job_id)
        root = (job.dir / "report").resolve()
        target = (root / artifact_path).resolve()
        if not str(target).startswith(str(root)):
            raise HTTPException(400, "path escapes the report directory")
        if not target.is_file():
            raise HTTPException(404, f"no artifact {artifact_path}")
        return FileResponse(target)

    return app


def main(
    data_dir,
    auth_token: str,
    bind: str = "127.0.0.1:8000",
    remote_url: str | None = None,
    workers: int = 1,
) -> None:
    import uvicorn

    host, _, port = bind.partition(":")
    app = create_app(data_dir, auth_token, remote_url=remote_url, workers=workers)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="info")
