"""HTTP service backing the expert-annotation workflow.

Serves blinded abstracts (text only, no metadata) to raters in a
per-rater randomized order, records independent ratings in an
append-only event log, and exports the annotations file the corpus
builder consumes. Raters never see each other's labels.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from .corpus import REAL_CLASSES

REAL_CLASS_NAMES = {lbl.value for lbl in REAL_CLASSES}


class AuthError(Exception):
    pass


class ConflictError(Exception):
    pass


class ValidationError(Exception):
    pass


@dataclass
class AnnotationTask:
    task_id: str
    abstract_text: str
    assigned_rater: str
    pmid: str
    status: str = "PENDING"  # PENDING | RATED

    def payload(self, progress: dict) -> dict:
        # blinded: the abstract text is the only document content exposed
        return {"task_id": self.task_id, "abstract": self.abstract_text,
                "progress": progress}


def _rater_seed(base_seed: int, rater_id: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{rater_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class AnnotationStore:
    """Task queues plus a durable append-only event log.

    ``abstracts`` maps pmid -> abstract text (already stripped of
    metadata); every registered rater gets one task per abstract, in a
    randomized order fixed by (seed, rater).
    """

    def __init__(self, abstracts: dict, raters: list, log_path, seed: int = 0):
        self.log_path = Path(log_path)
        self.raters = list(raters)
        self._lock = threading.Lock()
        self.tasks: dict = {}
        self.order: dict = {}
        for rater in self.raters:
            pmids = sorted(abstracts)
            rng = np.random.default_rng(_rater_seed(seed, rater))
            rng.shuffle(pmids)
            self.order[rater] = []
            for pmid in pmids:
                task = AnnotationTask(
                    task_id=f"{rater}.{pmid}", abstract_text=abstracts[pmid],
                    assigned_rater=rater, pmid=pmid)
                self.tasks[task.task_id] = task
                self.order[rater].append(task.task_id)
        self.events: list = []
        self._replay()

    def _replay(self):
        if not self.log_path.exists():
            return
        with open(self.log_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                self.events.append(event)
                task = self.tasks.get(event["task_id"])
                if task is not None:
                    task.status = "RATED"

    def _check_rater(self, rater_id: str):
        if rater_id not in self.order:
            raise AuthError(f"unknown rater: {rater_id}")

    def next_task(self, rater_id: str) -> Optional[AnnotationTask]:
        self._check_rater(rater_id)
        for task_id in self.order[rater_id]:
            task = self.tasks[task_id]
            if task.status == "PENDING":
                return task
        return None

    def progress(self, rater_id: str) -> dict:
        self._check_rater(rater_id)
        ids = self.order[rater_id]
        rated = sum(1 for t in ids if self.tasks[t].status == "RATED")
        return {"rater": rater_id, "rated": rated, "total": len(ids)}

    def submit(self, rater_id: str, task_id: str, label: str) -> dict:
        self._check_rater(rater_id)
        if label not in REAL_CLASS_NAMES:
            raise ValidationError(f"label must be one of {sorted(REAL_CLASS_NAMES)}")
        task = self.tasks.get(task_id)
        if task is None or task.assigned_rater != rater_id:
            raise ValidationError(f"no such task for rater {rater_id}: {task_id}")
        with self._lock:
            if task.status != "PENDING":
                raise ConflictError(f"task already rated: {task_id}")
            event = {"task_id": task_id, "rater": rater_id, "pmid": task.pmid,
                     "label": label, "submitted_at": time.time()}
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event) + "\n")
                fh.flush()
            task.status = "RATED"
            self.events.append(event)
        return self.progress(rater_id)

    def export_annotations(self) -> list:
        """Accepted ratings in the corpus module's annotations format."""
        return [{"rater": e["rater"], "pmid": e["pmid"], "label": e["label"]}
                for e in self.events]


def create_app(store: AnnotationStore, rater_tokens: dict, admin_token: str,
               static_dir=None):
    """FastAPI app over an AnnotationStore.

    ``rater_tokens`` maps bearer token -> rater_id; the admin token gates
    the export endpoint. ``static_dir`` optionally serves the annotation
    UI bundle at /.
    """
    app = FastAPI(title="trialsent annotation api")

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status,
                            content={"code": code, "message": message})

    def rater_from(request: Request) -> str:
        auth = request.headers.get("authorization", "")
        token = auth.removeprefix("Bearer ").strip()
        if token not in rater_tokens:
            raise AuthError("invalid or missing bearer token")
        return rater_tokens[token]

    @app.exception_handler(AuthError)
    async def _auth(request, exc):
        return error(401, "unauthorized", str(exc))

    @app.exception_handler(ConflictError)
    async def _conflict(request, exc):
        return error(409, "conflict", str(exc))

    @app.exception_handler(ValidationError)
    async def _validation(request, exc):
        return error(422, "invalid", str(exc))

    @app.get("/api/tasks/next")
    async def next_task(request: Request, rater: str = ""):
        rater_id = rater_from(request)
        if rater and rater != rater_id:
            raise AuthError("rater parameter does not match token")
        task = store.next_task(rater_id)
        if task is None:
            return {"task": None, "progress": store.progress(rater_id)}
        return {"task": task.payload(store.progress(rater_id))}

    @app.post("/api/ratings")
    async def submit_rating(request: Request):
        rater_id = rater_from(request)
        try:
            body = await request.json()
        except Exception:
            raise ValidationError("request body must be JSON")
        if not isinstance(body, dict) or "task_id" not in body or "label" not in body:
            raise ValidationError("body must contain task_id and label")
        progress = store.submit(rater_id, body["task_id"], body["label"])
        return {"ok": True, "progress": progress}

    @app.get("/api/progress")
    async def progress(request: Request, rater: str = ""):
        auth = request.headers.get("authorization", "")
        token = auth.removeprefix("Bearer ").strip()
        if token == admin_token:
            return {"raters": [store.progress(r) for r in store.raters]}
        rater_id = rater_from(request)
        return store.progress(rater_id)

    @app.get("/api/export")
    async def export(request: Request):
        auth = request.headers.get("authorization", "")
        token = auth.removeprefix("Bearer ").strip()
        if token != admin_token:
            raise AuthError("export requires the admin token")
        lines = "".join(json.dumps(row) + "\n" for row in store.export_annotations())
        return PlainTextResponse(lines, media_type="application/x-ndjson")

    if static_dir is not None and Path(static_dir).exists():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(static_dir), html=True))

    return app
