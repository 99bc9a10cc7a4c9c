"""File-backed store for records, sessions, and leases.

Layout under the data directory:

    records/<image_uid>.json            canonical full-record document
    sessions/<image_uid>__<qa>/snapshot.json
    sessions/<image_uid>__<qa>/log.jsonl    one EditOp per line, append-only
    sessions/<image_uid>__<qa>/final.json   written at finalize
    sessions/<image_uid>__<qa>/lease.json   current lease, if any

A session is reconstructed purely by replaying its log over its snapshot,
so the two live files are the complete source of truth.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .export import write_canonical
from .proposal import ProposalMode, ProposalResponse
from .schema import ImageRecord
from .session import (
    CorruptLog,
    EditOp,
    ReviewSession,
    replay,
)

LEASE_TTL_S = 15 * 60


class StoreError(Exception):
    pass


class UnknownRecord(StoreError):
    pass


class UnknownSession(StoreError):
    pass


class LeaseHeld(StoreError):
    def __init__(self, key: str, holder: str):
        self.holder = holder
        super().__init__(f"session {key} is leased by {holder!r}")


def session_key(image_uid: str, qa_id: Optional[str]) -> str:
    return f"{image_uid}__{qa_id or 'auto'}"


class SessionStore:
    """Single-writer persistence for the review workflow.

    All mutating calls go through one process-wide lock; cross-process
    exclusivity comes from the lease files.
    """

    def __init__(self, data_dir):
        self.root = Path(data_dir)
        self.records_dir = self.root / "records"
        self.sessions_dir = self.root / "sessions"
        self._lock = threading.Lock()

    # -- records -----------------------------------------------------------

    def save_record(self, record: ImageRecord) -> Path:
        path = self.records_dir / f"{record.image_uid}.json"
        write_canonical(path, record.to_dict())
        return path

    def load_record(self, image_uid: str) -> ImageRecord:
        path = self.records_dir / f"{image_uid}.json"
        if not path.exists():
            raise UnknownRecord(f"no stored record {image_uid!r}")
        with open(path, encoding="utf-8") as fh:
            return ImageRecord.from_dict(json.load(fh))

    def list_records(self) -> List[ImageRecord]:
        if not self.records_dir.exists():
            return []
        return [
            self.load_record(p.stem) for p in sorted(self.records_dir.glob("*.json"))
        ]

    # -- sessions ----------------------------------------------------------

    def session_dir(self, key: str) -> Path:
        return self.sessions_dir / key

    def has_session(self, key: str) -> bool:
        return (self.session_dir(key) / "snapshot.json").exists()

    def list_sessions(self) -> List[str]:
        if not self.sessions_dir.exists():
            return []
        return sorted(p.name for p in self.sessions_dir.iterdir() if p.is_dir())

    def write_snapshot(
        self,
        key: str,
        record: ImageRecord,
        response: ProposalResponse,
        mode: ProposalMode,
        qa_id: Optional[str],
    ) -> None:
        snapshot = {
            "session_key": key,
            "qa_id": qa_id,
            "mode": mode.value,
            "record": record.to_dict(),
            "response": response.to_dict(),
        }
        write_canonical(self.session_dir(key) / "snapshot.json", snapshot)

    def read_snapshot(self, key: str) -> dict:
        path = self.session_dir(key) / "snapshot.json"
        if not path.exists():
            raise UnknownSession(f"no session {key!r}")
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def append_op(self, key: str, op: EditOp) -> None:
        path = self.session_dir(key) / "log.jsonl"
        with open(path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(op.to_dict(), ensure_ascii=False) + "\n")

    def read_log(self, key: str) -> List[EditOp]:
        path = self.session_dir(key) / "log.jsonl"
        if not path.exists():
            return []
        ops = []
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    ops.append(EditOp.from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise CorruptLog(f"{path}:{line_no}: {exc}") from exc
        return ops

    def load_session(self, key: str) -> ReviewSession:
        """Rebuild the live session state by replay."""
        snapshot = self.read_snapshot(key)
        record = ImageRecord.from_dict(snapshot["record"])
        response = ProposalResponse.from_dict(snapshot["response"])
        mode = ProposalMode(snapshot["mode"])
        session = replay(record, (response, mode), self.read_log(key), qa_id=snapshot.get("qa_id"))
        if self.is_finalized(key):
            from .session import SessionState

            session.state = SessionState.FINALIZED
        return session

    def write_final(self, key: str, payload: dict) -> None:
        write_canonical(self.session_dir(key) / "final.json", payload)

    def read_final(self, key: str) -> Optional[dict]:
        path = self.session_dir(key) / "final.json"
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def is_finalized(self, key: str) -> bool:
        return (self.session_dir(key) / "final.json").exists()

    def finalized_sessions(self) -> Dict[str, dict]:
        out = {}
        for key in self.list_sessions():
            final = self.read_final(key)
            if final is not None:
                out[key] = final
        return out

    # -- leases ------------------------------------------------------------

    def _lease_path(self, key: str) -> Path:
        return self.session_dir(key) / "lease.json"

    def acquire_lease(self, key: str, actor: str, ttl: float = LEASE_TTL_S) -> dict:
        """Take or renew the exclusive per-session lease.

        A live lease held by someone else raises LeaseHeld; expired leases
        are taken over silently.
        """
        with self._lock:
            path = self._lease_path(key)
            now = time.time()
            if path.exists():
                with open(path, encoding="utf-8") as fh:
                    lease = json.load(fh)
                if lease["actor"] != actor and lease["expires_at"] > now:
                    raise LeaseHeld(key, lease["actor"])
            lease = {"actor": actor, "expires_at": now + ttl}
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(lease, fh)
            tmp.replace(path)
            return lease

    def release_lease(self, key: str, actor: str) -> None:
        with self._lock:
            path = self._lease_path(key)
            if not path.exists():
                return
            with open(path, encoding="utf-8") as fh:
                lease = json.load(fh)
            if lease["actor"] == actor:
                path.unlink()

    def check_lease(self, key: str, actor: str) -> bool:
        path = self._lease_path(key)
        if not path.exists():
            return False
        with open(path, encoding="utf-8") as fh:
            lease = json.load(fh)
        return lease["actor"] == actor and lease["expires_at"] > time.time()

    # -- higher-level workflow ----------------------------------------------

    def create_session(
        self,
        record: ImageRecord,
        qa_id: Optional[str],
        response: ProposalResponse,
        mode: ProposalMode,
    ) -> Tuple[str, ReviewSession]:
        from .session import attach_proposal, open_session

        key = session_key(record.image_uid, qa_id)
        session = open_session(record, qa_id)
        attach_proposal(session, response, mode)
        with self._lock:
            self.write_snapshot(key, record, response, mode, qa_id)
            # Truncate any stale log from an older snapshot.
            log_path = self.session_dir(key) / "log.jsonl"
            if log_path.exists():
                log_path.unlink()
        return key, session

    def apply_and_log(self, key: str, session: ReviewSession, op: EditOp) -> EditOp:
        from .session import apply_edit

        with self._lock:
            apply_edit(session, op)
            applied = session.edit_log[-1]
            self.append_op(key, applied)
            return applied
