"""HTTP facade for answering pending queries from a browser.

Labels buffer in the round directory (answers.json) and only reach the pool
when the round is advanced, so a half-answered round never leaks into
training.  All mutation goes through one lock: submissions are serialized and
advance is mutually exclusive with them.
"""

from __future__ import annotations

import base64
import io
import json
import threading

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from PIL import Image

from madbal.selection import QuerySet
from madbal.session import (LabelRecord, Session, append_labels,
                            write_json_atomic)

CROP = 65
HALF = CROP // 2


def _crop_b64(image: np.ndarray, row: int, col: int) -> str:
    h, w = image.shape[:2]
    rows = np.clip(np.arange(row - HALF, row + HALF + 1), 0, h - 1)
    cols = np.clip(np.arange(col - HALF, col + HALF + 1), 0, w - 1)
    crop = image[np.ix_(rows, cols)]
    buf = io.BytesIO()
    Image.fromarray(crop).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class _State:
    def __init__(self, session: Session):
        self.session = session
        self.lock = threading.Lock()
        self._images: dict[str, np.ndarray] = {}

    def image(self, image_id: str) -> np.ndarray:
        if image_id not in self._images:
            path = self.session.image_dir(image_id) / "image.png"
            if not path.exists():
                raise HTTPException(404, f"unknown image {image_id!r}")
            self._images[image_id] = np.asarray(Image.open(path).convert("RGB"))
        return self._images[image_id]

    @property
    def round_index(self) -> int:
        return self.session.manifest.round_index

    def queries(self) -> list:
        path = self.session.round_dir(self.round_index) / "queries.json"
        if not path.exists():
            return []
        return QuerySet.from_dict(json.loads(path.read_text())).queries

    def answers(self) -> dict:
        path = self.session.round_dir(self.round_index) / "answers.json"
        if not path.exists():
            return {}
        return {int(k): int(v)
                for k, v in json.loads(path.read_text())["answers"].items()}

    def save_answers(self, answers: dict) -> None:
        path = self.session.round_dir(self.round_index) / "answers.json"
        write_json_atomic(path, {"answers": {str(k): v
                                             for k, v in answers.items()}})


def build_app(session: Session) -> FastAPI:
    app = FastAPI(title="madbal annotation service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    state = _State(session)
    app.state.madbal = state

    @app.get("/api/session")
    def get_session():
        with state.lock:
            queries = state.queries()
            answers = state.answers()
            return {
                "manifest": session.manifest.to_dict(),
                "round": {
                    "index": state.round_index,
                    "queries": len(queries),
                    "answered": len(answers),
                    "open": len(queries) - len(answers),
                },
                "pool_size": len(session.labels),
            }

    @app.get("/api/queries")
    def get_queries(status: str = "open"):
        if status not in ("open", "answered", "all"):
            raise HTTPException(400, "status must be open, answered or all")
        with state.lock:
            answers = state.answers()
            out = []
            for qid, q in enumerate(state.queries()):
                answered = qid in answers
                if status == "open" and answered:
                    continue
                if status == "answered" and not answered:
                    continue
                out.append({
                    "query_id": qid,
                    "image_id": q.image_id,
                    "row": q.row,
                    "col": q.col,
                    "neighborhood": _crop_b64(state.image(q.image_id),
                                              q.row, q.col),
                    "status": "answered" if answered else "open",
                    "class_id": answers.get(qid),
                })
            return {"round": state.round_index, "queries": out}

    @app.post("/api/labels")
    def post_label(body: dict):
        if not isinstance(body, dict) or "query_id" not in body \
                or "class_id" not in body:
            raise HTTPException(400, "body must carry query_id and class_id")
        qid, cls = body["query_id"], body["class_id"]
        if not isinstance(qid, int) or not isinstance(cls, int):
            raise HTTPException(400, "query_id and class_id must be integers")
        if not 0 <= cls < session.manifest.num_classes:
            raise HTTPException(
                400, f"class_id {cls} outside [0, {session.manifest.num_classes})")
        with state.lock:
            queries = state.queries()
            if not 0 <= qid < len(queries):
                raise HTTPException(404, f"unknown query_id {qid}")
            answers = state.answers()
            if qid in answers:
                raise HTTPException(
                    409, f"query {qid} already answered; first answer retained")
            answers[qid] = cls
            state.save_answers(answers)
            return {"query_id": qid, "class_id": cls,
                    "open": len(queries) - len(answers)}

    @app.post("/api/rounds/advance")
    def advance():
        with state.lock:
            k = state.round_index
            queries = state.queries()
            if not queries:
                raise HTTPException(409, "no queries pending for this round")
            answers = state.answers()
            missing = [qid for qid in range(len(queries)) if qid not in answers]
            if missing:
                raise HTTPException(
                    409, f"{len(missing)} queries still unanswered")
            records = [LabelRecord(q.image_id, q.row, q.col, answers[qid],
                                   k, "human")
                       for qid, q in enumerate(queries)]
            append_labels(session, records)
            session.manifest.round_index = k + 1
            session.save_manifest()
            _update_report(session, k, len(records))
            return {"round": k, "labels_appended": len(records),
                    "pool_size": len(session.labels),
                    "next_round": session.manifest.round_index}

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        path = session.image_dir(image_id) / "image.png"
        if image_id not in session.manifest.image_ids or not path.exists():
            raise HTTPException(404, f"unknown image {image_id!r}")
        return Response(content=path.read_bytes(), media_type="image/png")

    return app


def _update_report(session: Session, k: int, n_labels: int) -> None:
    path = session.round_dir(k) / "report.json"
    blob = {}
    if path.exists():
        blob = json.loads(path.read_text())
    part = blob.get("round", {})
    part.update({
        "round": k,
        "queries_issued": part.get("queries_issued", n_labels),
        "labels_received": n_labels,
        "pool_size_after": len(session.labels),
        "pending": False,
    })
    part.setdefault("per_cluster_budgets", [])
    part.setdefault("miou", None)
    part.setdefault("wall_time_seconds", 0.0)
    blob["round"] = part
    write_json_atomic(path, blob)
