"""Event-sourced review sessions over a proposal snapshot.

A session owns one QA item of one record. It starts from the immutable
proposal snapshot, applies reviewer edit operations on top, and keeps an
append-only log so the final state is always reproducible by replay.
Deleted regions are tombstoned, never erased, because the export needs to
know whether each region was proposed, edited, removed, or newly created.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Tuple

from .geometry import iou
from .metrics import UtilityCounts
from .proposal import ProposalMode, ProposalResponse
from .schema import (
    EXPORT_SOURCE_STRINGS,
    AttributionMapping,
    BBox,
    ImageRecord,
    QAStatus,
    Source,
    errors_only,
    validate_record,
)

DEFAULT_RETAIN_IOU = 0.5


class SessionError(Exception):
    pass


class UnknownQA(SessionError):
    pass


class InvalidRecord(SessionError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(f"{v.path}: {v.message}" for v in self.violations))


class AlreadyProposed(SessionError):
    pass


class InvalidTarget(SessionError):
    pass


class IllegalInState(SessionError):
    pass


class GeometryError(SessionError):
    pass


class InvalidEdit(SessionError):
    """Op payload breaks a QA or note invariant."""


class CorruptLog(SessionError):
    pass


class NotReviewed(SessionError):
    pass


class UnverifiedQA(SessionError):
    pass


class EmptyEvidence(SessionError):
    """Verified QA finalized with no evidence and no no-evidence marker."""


class SessionState(str, Enum):
    LOADED = "loaded"
    PROPOSED = "proposed"
    IN_REVIEW = "in_review"
    FLAGGED = "flagged"
    FINALIZED = "finalized"


class EditKind(str, Enum):
    SELECT_REGION = "select_region"
    DESELECT_REGION = "deselect_region"
    RESIZE_REGION = "resize_region"
    MOVE_REGION = "move_region"
    DELETE_REGION = "delete_region"
    DRAW_REGION = "draw_region"
    ADD_QA = "add_qa"
    EDIT_QA = "edit_qa"
    VERIFY_QA = "verify_qa"
    FLAG_QA = "flag_qa"
    SET_NO_EVIDENCE = "set_no_evidence"


_GEOMETRY_OPS = (EditKind.RESIZE_REGION, EditKind.MOVE_REGION, EditKind.DRAW_REGION)


@dataclass(frozen=True)
class EditOp:
    op: EditKind
    target_id: Optional[str]
    payload: Mapping[str, Any]
    timestamp: int
    actor: str = "anonymous"

    def to_dict(self) -> dict:
        return {
            "op": self.op.value,
            "target_id": self.target_id,
            "payload": dict(self.payload),
            "timestamp": self.timestamp,
            "actor": self.actor,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EditOp":
        return cls(
            op=EditKind(data["op"]),
            target_id=data.get("target_id"),
            payload=dict(data.get("payload", {})),
            timestamp=int(data["timestamp"]),
            actor=data.get("actor", "anonymous"),
        )


@dataclass
class RegionView:
    """Mutable per-session view of one region."""

    region_id: str
    bbox: BBox
    label: Optional[str]
    source: Source
    edited: bool = False
    deleted: bool = False
    selected_mark: bool = False

    @property
    def from_candidate_pool(self) -> bool:
        return self.source in (Source.GROUND_TRUTH, Source.PREDICTED, Source.MODEL_SELECTED)

    def export_source(self) -> str:
        if self.selected_mark or self.source is Source.MODEL_SELECTED:
            return "selected"
        return EXPORT_SOURCE_STRINGS[self.source]

    def to_dict(self) -> dict:
        return {
            "region_id": self.region_id,
            "bbox": self.bbox.as_list(),
            "label": self.label,
            "source": self.source.value,
            "export_source": self.export_source(),
            "edited": self.edited,
            "deleted": self.deleted,
            "selected_mark": self.selected_mark,
        }


@dataclass
class QAView:
    qa_id: str
    question_text: str
    answer_text: str
    choices: tuple = ()
    status: QAStatus = QAStatus.UNVERIFIED
    note: Optional[str] = None
    no_evidence: bool = False

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "question_text": self.question_text,
            "answer_text": self.answer_text,
            "choices": list(self.choices),
            "status": self.status.value,
            "note": self.note,
            "no_evidence": self.no_evidence,
        }


@dataclass
class FinalizeResult:
    attribution: AttributionMapping
    counts: UtilityCounts
    no_evidence: bool
    retain_iou: float

    def to_dict(self) -> dict:
        return {
            "attribution": self.attribution.to_dict(),
            "counts": self.counts.to_dict(),
            "no_evidence": self.no_evidence,
            "retain_iou": self.retain_iou,
        }


class ReviewSession:
    """Live review state: record + proposal snapshot + ordered edit log."""

    def __init__(self, record: ImageRecord, active_qa: Optional[str]):
        self.record = record
        self.active_qa = active_qa
        self.state = SessionState.LOADED
        self.edit_log: List[EditOp] = []
        self.proposal_mode: Optional[ProposalMode] = None
        self.proposal: Optional[ProposalResponse] = None
        self.proposal_ids: Tuple[str, ...] = ()
        self.proposal_geoms: Dict[str, BBox] = {}
        self.regions: Dict[str, RegionView] = {}
        self.qa: Dict[str, QAView] = {}
        self.evidence: Dict[str, List[str]] = {}
        self._region_order: List[str] = []

        for region in record.regions:
            view = RegionView(
                region_id=region.region_id,
                bbox=region.bbox,
                label=region.label,
                source=region.provenance.source,
                edited=region.provenance.edited,
            )
            self.regions[region.region_id] = view
            self._region_order.append(region.region_id)
        for item in record.qa_items:
            self.qa[item.qa_id] = QAView(
                qa_id=item.qa_id,
                question_text=item.question_text,
                answer_text=item.answer_text,
                choices=tuple(item.choices),
                status=item.status,
                note=item.note,
            )
        for mapping in record.attributions:
            self.evidence[mapping.qa_id] = list(mapping.evidence)

    # -- id allocation ----------------------------------------------------

    def _fresh_region_id(self) -> str:
        n = 1
        while f"a_{n}" in self.regions:
            n += 1
        return f"a_{n}"

    def _fresh_qa_id(self) -> str:
        n = 0
        while f"q_{n}" in self.qa:
            n += 1
        return f"q_{n}"

    # -- derived views ----------------------------------------------------

    def active_evidence(self) -> List[str]:
        if self.active_qa is None:
            return []
        return self.evidence.setdefault(self.active_qa, [])

    def evidence_regions(self) -> List[RegionView]:
        return [self.regions[rid] for rid in self.active_evidence()]

    def next_timestamp(self) -> int:
        return self.edit_log[-1].timestamp + 1 if self.edit_log else 1

    def view(self) -> dict:
        """JSON-shaped snapshot of the derived state, for the API and tests."""
        return {
            "state": self.state.value,
            "active_qa": self.active_qa,
            "mode": self.proposal_mode.value if self.proposal_mode else None,
            "qa": [self.qa[k].to_dict() for k in sorted(self.qa)],
            "regions": [self.regions[rid].to_dict() for rid in self._region_order],
            "evidence": list(self.active_evidence()),
            "proposal_ids": list(self.proposal_ids),
            "log_length": len(self.edit_log),
        }


def open_session(record: ImageRecord, qa_id: Optional[str] = None) -> ReviewSession:
    """Start a review session for one QA item (or a bare record)."""
    problems = errors_only(validate_record(record))
    if problems:
        raise InvalidRecord(problems)
    if record.qa_items:
        if qa_id is None:
            qa_id = record.qa_items[0].qa_id
        elif record.qa(qa_id) is None:
            raise UnknownQA(f"qa_id {qa_id!r} not present in record {record.image_uid!r}")
    else:
        # Bare record: QA arrives with the generation proposal.
        qa_id = None
    return ReviewSession(record, qa_id)


def attach_proposal(
    session: ReviewSession, response: ProposalResponse, mode: ProposalMode
) -> ReviewSession:
    """Install the immutable proposal snapshot and initialize the evidence set.

    Selection marks are layered onto candidate regions; the underlying pool
    source is never overwritten. Generated regions and QA items enter the
    session unverified with deterministic fresh ids, so replaying the same
    snapshot always produces the same state.
    """
    if session.state is not SessionState.LOADED:
        raise AlreadyProposed(f"session already has a proposal (state {session.state.value})")

    if mode is ProposalMode.SELECTION:
        ids = []
        for rid in response.selected_ids:
            view = session.regions.get(rid)
            if view is None:
                continue
            view.selected_mark = True
            ids.append(rid)
        session.proposal_ids = tuple(ids)
        session.evidence[session.active_qa] = list(ids)
    else:
        if mode is ProposalMode.QA_AND_REGION_GENERATION:
            qa_ids = []
            for gen in response.generated_qa:
                qa_id = session._fresh_qa_id()
                session.qa[qa_id] = QAView(
                    qa_id=qa_id,
                    question_text=gen.question_text,
                    answer_text=gen.answer_text,
                    choices=tuple(gen.choices),
                )
                qa_ids.append(qa_id)
            if qa_ids:
                session.active_qa = qa_ids[0]
        ids = []
        for gen in response.generated_regions:
            rid = session._fresh_region_id()
            session.regions[rid] = RegionView(
                region_id=rid, bbox=gen.bbox, label=gen.label, source=Source.MODEL_GENERATED
            )
            session._region_order.append(rid)
            ids.append(rid)
        session.proposal_ids = tuple(ids)
        if session.active_qa is not None:
            session.evidence[session.active_qa] = list(ids)

    session.proposal_geoms = {rid: session.regions[rid].bbox for rid in session.proposal_ids}
    session.proposal = response
    session.proposal_mode = mode
    session.state = SessionState.PROPOSED
    return session


def _require_bbox(payload: Mapping[str, Any], record: ImageRecord) -> BBox:
    try:
        bbox = BBox.from_list(payload["bbox"])
    except (KeyError, TypeError, ValueError):
        raise GeometryError(f"op payload needs a bbox [x, y, w, h], got {payload!r}")
    if bbox.w <= 0 or bbox.h <= 0:
        raise GeometryError(f"degenerate box: w={bbox.w}, h={bbox.h}")
    if bbox.x < 0 or bbox.y < 0:
        raise GeometryError(f"negative origin: x={bbox.x}, y={bbox.y}")
    if record.image_size is not None:
        width, height = record.image_size
        if bbox.x + bbox.w > width + 0.5 or bbox.y + bbox.h > height + 0.5:
            raise GeometryError(f"box {bbox.as_list()} exceeds image bounds {record.image_size}")
    return bbox


def _live_region(session: ReviewSession, target_id: Optional[str]) -> RegionView:
    view = session.regions.get(target_id) if target_id else None
    if view is None or view.deleted:
        raise InvalidTarget(f"no live region {target_id!r}")
    return view


def _target_qa(session: ReviewSession, target_id: Optional[str]) -> QAView:
    qa_id = target_id or session.active_qa
    view = session.qa.get(qa_id) if qa_id else None
    if view is None:
        raise InvalidTarget(f"no QA item {qa_id!r}")
    return view


def apply_edit(session: ReviewSession, op: EditOp) -> ReviewSession:
    """Validate and apply one reviewer operation, then append it to the log.

    The log is only appended after the op succeeds, so a rejected op leaves
    the session exactly as it was.
    """
    if session.state not in (SessionState.PROPOSED, SessionState.IN_REVIEW, SessionState.FLAGGED):
        raise IllegalInState(f"edits not accepted in state {session.state.value}")
    if session.edit_log and op.timestamp <= session.edit_log[-1].timestamp:
        raise CorruptLog(
            f"timestamp {op.timestamp} not after {session.edit_log[-1].timestamp}"
        )

    evidence = session.active_evidence()
    kind = op.op

    if kind is EditKind.SELECT_REGION:
        view = _live_region(session, op.target_id)
        if view.region_id not in evidence:
            evidence.append(view.region_id)
    elif kind is EditKind.DESELECT_REGION:
        view = _live_region(session, op.target_id)
        if view.region_id in evidence:
            evidence.remove(view.region_id)
    elif kind in (EditKind.RESIZE_REGION, EditKind.MOVE_REGION):
        view = _live_region(session, op.target_id)
        bbox = _require_bbox(op.payload, session.record)
        view.bbox = bbox
        view.edited = True
    elif kind is EditKind.DELETE_REGION:
        view = _live_region(session, op.target_id)
        view.deleted = True
        if view.region_id in evidence:
            evidence.remove(view.region_id)
    elif kind is EditKind.DRAW_REGION:
        bbox = _require_bbox(op.payload, session.record)
        rid = op.target_id or session._fresh_region_id()
        if rid in session.regions:
            raise InvalidTarget(f"region id {rid!r} already exists")
        session.regions[rid] = RegionView(
            region_id=rid,
            bbox=bbox,
            label=op.payload.get("label"),
            source=Source.REVIEWER_ADDED,
        )
        session._region_order.append(rid)
        evidence.append(rid)
        op = EditOp(kind, rid, op.payload, op.timestamp, op.actor)
    elif kind is EditKind.ADD_QA:
        question = str(op.payload.get("question_text", "")).strip()
        if not question:
            raise InvalidEdit("add_qa requires non-empty question_text")
        qa_id = op.target_id or session._fresh_qa_id()
        if qa_id in session.qa:
            raise InvalidTarget(f"qa id {qa_id!r} already exists")
        session.qa[qa_id] = QAView(
            qa_id=qa_id,
            question_text=question,
            answer_text=str(op.payload.get("answer_text", "")),
            choices=tuple(op.payload.get("choices", ())),
        )
        op = EditOp(kind, qa_id, op.payload, op.timestamp, op.actor)
    elif kind is EditKind.EDIT_QA:
        view = _target_qa(session, op.target_id)
        if "question_text" in op.payload:
            view.question_text = str(op.payload["question_text"])
        if "answer_text" in op.payload:
            view.answer_text = str(op.payload["answer_text"])
        if "choices" in op.payload:
            view.choices = tuple(op.payload["choices"])
        view.status = QAStatus.UNVERIFIED
    elif kind is EditKind.VERIFY_QA:
        view = _target_qa(session, op.target_id)
        if not view.question_text.strip():
            raise InvalidEdit("cannot verify a QA item with empty question text")
        view.status = QAStatus.VERIFIED
        view.note = None
    elif kind is EditKind.FLAG_QA:
        view = _target_qa(session, op.target_id)
        note = str(op.payload.get("note", "")).strip()
        if not note:
            raise InvalidEdit("flag_qa requires a non-empty note")
        view.status = QAStatus.FLAGGED
        view.note = note
    elif kind is EditKind.SET_NO_EVIDENCE:
        view = _target_qa(session, op.target_id)
        view.no_evidence = True
    else:  # pragma: no cover - enum is exhaustive
        raise InvalidEdit(f"unsupported op {kind}")

    session.edit_log.append(op)
    if kind is EditKind.FLAG_QA:
        session.state = SessionState.FLAGGED
    else:
        session.state = SessionState.IN_REVIEW
    return session


def replay(
    record: ImageRecord,
    snapshot: Optional[Tuple[ProposalResponse, ProposalMode]],
    edit_log,
    qa_id: Optional[str] = None,
) -> ReviewSession:
    """Rebuild a session purely from its inputs.

    Produces exactly the state the live session reached, or CorruptLog when
    timestamps are non-monotonic or an op no longer resolves.
    """
    session = open_session(record, qa_id)
    if snapshot is not None:
        response, mode = snapshot
        attach_proposal(session, response, mode)
    last = 0
    for op in edit_log:
        if op.timestamp <= last:
            raise CorruptLog(f"timestamp {op.timestamp} not after {last}")
        last = op.timestamp
        try:
            apply_edit(session, op)
        except (InvalidTarget, InvalidEdit, GeometryError, IllegalInState) as exc:
            raise CorruptLog(f"op at timestamp {op.timestamp} no longer applies: {exc}") from exc
    return session


def session_equal(a: ReviewSession, b: ReviewSession) -> bool:
    return a.view() == b.view()


def finalize(session: ReviewSession, retain_iou: float = DEFAULT_RETAIN_IOU) -> FinalizeResult:
    """Close the session and classify the final evidence against the proposal.

    A proposed region still in evidence counts as retained only while its
    final geometry overlaps its proposed geometry at IoU >= retain_iou;
    dragged further than that it counts once as effectively removed and
    once as newly drawn, which keeps both conservation identities:
    |final| = retained + added_gt + new_drawn and
    |proposed| = retained + effective_removed.
    """
    if session.state is not SessionState.IN_REVIEW:
        raise NotReviewed(f"cannot finalize from state {session.state.value}")
    qa_view = session.qa.get(session.active_qa) if session.active_qa else None
    if qa_view is None:
        raise UnverifiedQA("session has no active QA item")
    if qa_view.status is not QAStatus.VERIFIED and not qa_view.no_evidence:
        raise UnverifiedQA(f"QA {qa_view.qa_id} is {qa_view.status.value}")

    final_ids = list(session.active_evidence())
    if not final_ids and not qa_view.no_evidence:
        raise EmptyEvidence(
            f"QA {qa_view.qa_id} verified with no evidence; record set_no_evidence to confirm"
        )

    proposed = set(session.proposal_ids)
    final_set = set(final_ids)
    retained = removed = added_gt = new_drawn = 0
    for rid in session.proposal_ids:
        if rid in final_set:
            overlap = iou(session.regions[rid].bbox, session.proposal_geoms[rid])
            if overlap >= retain_iou:
                retained += 1
            else:
                removed += 1
                new_drawn += 1
        else:
            removed += 1
    for rid in final_ids:
        if rid in proposed:
            continue
        if session.regions[rid].from_candidate_pool:
            added_gt += 1
        else:
            new_drawn += 1

    session.state = SessionState.FINALIZED
    counts = UtilityCounts(
        retained_pred_count=retained,
        effective_removed_count=removed,
        added_gt_count=added_gt,
        new_drawn_count=new_drawn,
    )
    return FinalizeResult(
        attribution=AttributionMapping(qa_id=qa_view.qa_id, evidence=tuple(final_ids)),
        counts=counts,
        no_evidence=qa_view.no_evidence,
        retain_iou=retain_iou,
    )
