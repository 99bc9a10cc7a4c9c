"""HTTP service exposing records, proposals, sessions, and metrics.

Every state mutation goes through the session engine's apply_edit; the
endpoints add persistence, per-session leases, and JSON plumbing but no
review logic of their own. Session state is authoritative on disk and
reconstructed by replay, so the in-memory cache is just an optimization.
"""

from __future__ import annotations

import dataclasses
import threading
from pathlib import Path
from typing import Dict, Optional

from fastapi import Body, FastAPI, Header, HTTPException
from fastapi.responses import FileResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from . import metrics, session as session_mod
from .config import Config, make_backend
from .export import export_record
from .proposal import (
    InvalidProposalRequest,
    ProposalError,
    build_request,
    choose_mode,
    propose as run_proposal,
)
from .session import (
    EditKind,
    EditOp,
    FinalizeResult,
    SessionState,
)
from .store import LeaseHeld, SessionStore, UnknownRecord, UnknownSession, session_key

REVIEWER_HEADER = "X-Reviewer-Id"


class PortInUse(Exception):
    pass


def _error(status: int, code: str, message: str):
    return HTTPException(status_code=status, detail={"error": code, "message": message})


def create_app(
    config: Config, ui_dir: Optional[str] = None, proposal_concurrency: int = 4
) -> FastAPI:
    store = SessionStore(config.data_dir)
    app = FastAPI(title="qareview", version="0.1.0")
    cache: Dict[str, session_mod.ReviewSession] = {}
    cache_lock = threading.Lock()
    # Bounds concurrent backend calls across request handler threads.
    proposal_slots = threading.Semaphore(proposal_concurrency)

    def get_session(key: str) -> session_mod.ReviewSession:
        with cache_lock:
            if key not in cache:
                try:
                    cache[key] = store.load_session(key)
                except UnknownSession:
                    raise _error(404, "unknown_session", f"no session {key}")
            return cache[key]

    def session_payload(key: str, live: session_mod.ReviewSession) -> dict:
        payload = live.view()
        payload["session_key"] = key
        payload["finalized"] = store.read_final(key)
        return payload

    @app.get("/api/records")
    def list_records():
        out = []
        for record in store.list_records():
            out.append(
                {
                    "image_uid": record.image_uid,
                    "image_path": record.image_path,
                    "image_size": list(record.image_size) if record.image_size else None,
                    "dataset_type": record.source_metadata.get("dataset_type")
                    or record.source_metadata.get("adapter_id", ""),
                    "n_qa": len(record.qa_items),
                    "n_regions": len(record.regions),
                    "qa_ids": [q.qa_id for q in record.qa_items],
                }
            )
        return out

    @app.get("/api/records/{uid}")
    def get_record(uid: str):
        try:
            return store.load_record(uid).to_dict()
        except UnknownRecord:
            raise _error(404, "unknown_record", f"no record {uid}")

    @app.get("/api/records/{uid}/image")
    def get_image(uid: str):
        try:
            record = store.load_record(uid)
        except UnknownRecord:
            raise _error(404, "unknown_record", f"no record {uid}")
        path = Path(record.image_path)
        if not path.is_absolute():
            path = store.root / path
        if not path.exists():
            raise _error(404, "image_missing", f"image file not found: {record.image_path}")
        return FileResponse(path)

    @app.post("/api/records/{uid}/qa/{qa_id}/lease")
    def lease(
        uid: str,
        qa_id: str,
        body: dict = Body(default={}),
        reviewer: str = Header(default="anonymous", alias=REVIEWER_HEADER),
    ):
        key = session_key(uid, None if qa_id == "auto" else qa_id)
        action = body.get("action", "acquire")
        try:
            if action == "release":
                store.release_lease(key, reviewer)
                return {"session_key": key, "released": True}
            lease = store.acquire_lease(key, reviewer)
            return {"session_key": key, **lease}
        except LeaseHeld as exc:
            raise _error(423, "lease_held", str(exc))

    @app.post("/api/records/{uid}/qa/{qa_id}/propose")
    def propose_endpoint(
        uid: str,
        qa_id: str,
        body: dict = Body(default={}),
        reviewer: str = Header(default="anonymous", alias=REVIEWER_HEADER),
    ):
        try:
            record = store.load_record(uid)
        except UnknownRecord:
            raise _error(404, "unknown_record", f"no record {uid}")
        real_qa = None if qa_id == "auto" else qa_id
        if real_qa is not None and record.qa(real_qa) is None:
            raise _error(404, "unknown_qa", f"record {uid} has no QA {qa_id}")
        key = session_key(uid, real_qa)
        if store.has_session(key):
            raise _error(409, "already_proposed", f"session {key} already has a proposal")
        try:
            store.acquire_lease(key, reviewer)
        except LeaseHeld as exc:
            raise _error(423, "lease_held", str(exc))

        qa = record.qa(real_qa) if real_qa else None
        mode = choose_mode(record, qa)
        image_bytes = None
        image_path = Path(record.image_path)
        if not image_path.is_absolute():
            image_path = store.root / image_path
        if image_path.exists():
            image_bytes = image_path.read_bytes()
        try:
            request = build_request(record, qa, mode, image_bytes)
            backend = make_backend(
                dataclasses.replace(config, backend=body.get("backend", config.backend))
            )
            with proposal_slots:
                response = run_proposal(request, backend)
        except InvalidProposalRequest as exc:
            raise _error(400, "invalid_request", str(exc))
        except ProposalError as exc:
            raise _error(502, type(exc).__name__, str(exc))
        key, live = store.create_session(record, real_qa, response, mode)
        with cache_lock:
            cache[key] = live
        return session_payload(key, live)

    @app.get("/api/records/{uid}/qa/{qa_id}/session")
    def get_session_endpoint(uid: str, qa_id: str):
        key = session_key(uid, None if qa_id == "auto" else qa_id)
        return session_payload(key, get_session(key))

    @app.post("/api/records/{uid}/qa/{qa_id}/edits")
    def post_edit(
        uid: str,
        qa_id: str,
        body: dict = Body(...),
        reviewer: str = Header(default="anonymous", alias=REVIEWER_HEADER),
    ):
        key = session_key(uid, None if qa_id == "auto" else qa_id)
        if store.is_finalized(key):
            raise _error(409, "finalized", f"session {key} is finalized")
        try:
            store.acquire_lease(key, reviewer)
        except LeaseHeld as exc:
            raise _error(423, "lease_held", str(exc))
        live = get_session(key)
        try:
            op = EditOp(
                op=EditKind(body["op"]),
                target_id=body.get("target_id"),
                payload=body.get("payload", {}),
                timestamp=live.next_timestamp(),
                actor=reviewer,
            )
        except (KeyError, ValueError) as exc:
            raise _error(400, "bad_op", f"malformed edit op: {exc}")
        try:
            applied = store.apply_and_log(key, live, op)
        except session_mod.InvalidTarget as exc:
            raise _error(404, "invalid_target", str(exc))
        except (session_mod.GeometryError, session_mod.InvalidEdit) as exc:
            raise _error(400, type(exc).__name__, str(exc))
        except session_mod.IllegalInState as exc:
            raise _error(409, "illegal_in_state", str(exc))
        payload = session_payload(key, live)
        payload["applied"] = applied.to_dict()
        return payload

    @app.post("/api/records/{uid}/qa/{qa_id}/finalize")
    def post_finalize(
        uid: str,
        qa_id: str,
        body: dict = Body(default={}),
        reviewer: str = Header(default="anonymous", alias=REVIEWER_HEADER),
    ):
        key = session_key(uid, None if qa_id == "auto" else qa_id)
        live = get_session(key)
        try:
            store.acquire_lease(key, reviewer)
        except LeaseHeld as exc:
            raise _error(423, "lease_held", str(exc))
        retain_iou = float(body.get("retain_iou", config.retain_iou))
        with cache_lock:
            if store.is_finalized(key):
                raise _error(409, "finalized", f"session {key} is already finalized")
            try:
                result = session_mod.finalize(live, retain_iou=retain_iou)
            except (session_mod.NotReviewed, session_mod.UnverifiedQA,
                    session_mod.EmptyEvidence) as exc:
                raise _error(409, type(exc).__name__, str(exc))
            document = export_record(live, result)
            final = finalize_payload(live, result, document, reviewer)
            store.write_final(key, final)
        store.release_lease(key, reviewer)
        return final

    @app.get("/api/metrics/utility")
    def metrics_utility():
        per_dataset: Dict[str, list] = {}
        for final in store.finalized_sessions().values():
            counts = metrics.UtilityCounts.from_dict(final["counts"])
            per_dataset.setdefault(final.get("dataset_type") or "unknown", []).append(counts)
        return metrics.utility_rows(per_dataset) if per_dataset else []

    @app.get("/api/metrics/iaa")
    def metrics_iaa():
        labels_path = store.root / "labels.csv"
        if not labels_path.exists():
            raise _error(404, "no_labels", f"no labels file at {labels_path}")
        try:
            return metrics.iaa_rows(metrics.read_labels_csv(labels_path))
        except metrics.MetricsError as exc:
            raise _error(400, "bad_labels", str(exc))

    @app.get("/api/health", response_class=PlainTextResponse)
    def health():
        return "ok"

    if ui_dir and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def finalize_payload(
    live: session_mod.ReviewSession,
    result: FinalizeResult,
    document: dict,
    reviewer: str,
) -> dict:
    return {
        "image_uid": live.record.image_uid,
        "qa_id": result.attribution.qa_id,
        "dataset_type": live.record.source_metadata.get("dataset_type")
        or live.record.source_metadata.get("adapter_id", ""),
        "state": SessionState.FINALIZED.value,
        "reviewer": reviewer,
        "retain_iou": result.retain_iou,
        "no_evidence": result.no_evidence,
        "counts": result.counts.to_dict(),
        "evidence": list(result.attribution.evidence),
        "document": document,
    }


def serve(config: Config, ui_dir: Optional[str] = None) -> None:
    """Run the service with uvicorn. Raises BadConfig for unusable ports."""
    import errno

    import uvicorn

    app = create_app(config, ui_dir=ui_dir)
    try:
        uvicorn.run(app, host="127.0.0.1", port=config.port, log_level="info")
    except OSError as exc:
        if exc.errno in (errno.EADDRINUSE, errno.EACCES):
            raise PortInUse(f"port {config.port} is unavailable: {exc}")
        raise
