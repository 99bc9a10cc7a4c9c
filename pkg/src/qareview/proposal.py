"""QA-conditioned evidence proposal via a pluggable multimodal backend.

Three operating modes: choose a subset of existing candidate regions,
generate regions when the record has none, or generate both QA items and
regions when the record is bare. The backend is anything speaking the
JSON wire contract below; a deterministic mock ships for offline runs and
tests. Backend replies are parsed leniently: an unusable reply degrades to
an empty proposal with a warning flag rather than failing the session.
"""

from __future__ import annotations

import base64
import json
import logging
import mimetypes
import random
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Protocol, Sequence, Tuple

import httpx

from .geometry import clip_to_image
from .schema import BBox, ImageRecord, QAItem

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 60.0
# Virtual canvas for generation when the record carries no dimensions.
DEFAULT_CANVAS = (1000, 800)

_WORD = re.compile(r"[a-z0-9]+")


class ProposalError(Exception):
    pass


class InvalidProposalRequest(ProposalError):
    """Request breaks a mode invariant before any backend call."""


class BackendTimeout(ProposalError):
    pass


class BackendUnavailable(ProposalError):
    pass


class AllRegionsDegenerate(ProposalError):
    """Every generated box was invalid after clipping to the image."""


class NoQAGenerated(ProposalError):
    """Backend produced no usable QA items in QA-generation mode."""


class ProposalMode(str, Enum):
    SELECTION = "selection"
    REGION_GENERATION = "region_generation"
    QA_AND_REGION_GENERATION = "qa_and_region_generation"


@dataclass(frozen=True)
class Candidate:
    region_id: str
    bbox: BBox
    label: Optional[str] = None


@dataclass(frozen=True)
class ProposalRequest:
    mode: ProposalMode
    image_uid: str
    image_base64: str = ""
    media_type: str = ""
    image_size: Optional[Tuple[float, float]] = None
    qa: Optional[Tuple[str, str, tuple]] = None  # (question, answer, choices)
    candidates: Tuple[Candidate, ...] = ()

    def to_wire(self) -> dict:
        question, answer, choices = self.qa if self.qa else ("", "", ())
        return {
            "mode": self.mode.value,
            "image_uid": self.image_uid,
            "image": {"base64": self.image_base64, "media_type": self.media_type},
            "image_size": list(self.image_size) if self.image_size else None,
            "question": question,
            "answer": answer,
            "choices": list(choices),
            "candidates": [
                {"id": c.region_id, "bbox": c.bbox.as_list(), "label": c.label}
                for c in self.candidates
            ],
        }


@dataclass(frozen=True)
class GeneratedRegion:
    bbox: BBox
    label: Optional[str] = None


@dataclass(frozen=True)
class GeneratedQA:
    question_text: str
    answer_text: str
    choices: tuple = ()


@dataclass(frozen=True)
class ProposalResponse:
    selected_ids: Tuple[str, ...] = ()
    generated_regions: Tuple[GeneratedRegion, ...] = ()
    generated_qa: Tuple[GeneratedQA, ...] = ()
    backend_meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def degraded(self) -> bool:
        return bool(self.backend_meta.get("warnings"))

    def to_dict(self) -> dict:
        return {
            "selected_ids": list(self.selected_ids),
            "regions": [
                {"bbox": r.bbox.as_list(), "label": r.label} for r in self.generated_regions
            ],
            "qa": [
                {"question": q.question_text, "answer": q.answer_text, "choices": list(q.choices)}
                for q in self.generated_qa
            ],
            "meta": dict(self.backend_meta),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProposalResponse":
        return cls(
            selected_ids=tuple(data.get("selected_ids", ())),
            generated_regions=tuple(
                GeneratedRegion(BBox.from_list(r["bbox"]), r.get("label"))
                for r in data.get("regions", ())
            ),
            generated_qa=tuple(
                GeneratedQA(q.get("question", ""), q.get("answer", ""), tuple(q.get("choices", ())))
                for q in data.get("qa", ())
            ),
            backend_meta=dict(data.get("meta", {})),
        )


def choose_mode(record: ImageRecord, qa: Optional[QAItem] = None) -> ProposalMode:
    """Pick the operating mode from what the record provides."""
    if not record.qa_items:
        return ProposalMode.QA_AND_REGION_GENERATION
    if qa is not None and record.candidate_regions():
        return ProposalMode.SELECTION
    return ProposalMode.REGION_GENERATION


def build_request(
    record: ImageRecord,
    qa: Optional[QAItem],
    mode: ProposalMode,
    image_bytes: Optional[bytes] = None,
) -> ProposalRequest:
    """Assemble the wire request for one record/QA pair."""
    if mode is ProposalMode.QA_AND_REGION_GENERATION:
        if record.qa_items:
            raise InvalidProposalRequest("QA generation requires a record without QA items")
        qa_tuple = None
    else:
        if qa is None:
            raise InvalidProposalRequest(f"mode {mode.value} requires a QA item")
        qa_tuple = (qa.question_text, qa.answer_text, tuple(qa.choices))
    candidates: Tuple[Candidate, ...] = ()
    if mode is ProposalMode.SELECTION:
        candidates = tuple(
            Candidate(r.region_id, r.bbox, r.label) for r in record.candidate_regions()
        )
        if not candidates:
            raise InvalidProposalRequest("selection mode requires a non-empty candidate pool")
    encoded, media_type = "", ""
    if image_bytes is not None:
        encoded = base64.b64encode(image_bytes).decode("ascii")
        media_type = mimetypes.guess_type(record.image_path)[0] or "application/octet-stream"
    return ProposalRequest(
        mode=mode,
        image_uid=record.image_uid,
        image_base64=encoded,
        media_type=media_type,
        image_size=record.image_size,
        qa=qa_tuple,
        candidates=candidates,
    )


class ProposalBackend(Protocol):
    def propose(self, request: ProposalRequest) -> Any:
        """Return a wire-shaped reply dict (or raw text to be parsed leniently)."""


class MockBackend:
    """Deterministic stand-in backend: pure function of (request, seed).

    Selection picks candidates whose label occurs as a case-insensitive
    token in the question or answer. Generation proposes the box covering
    the central quarter of the image (half width, half height, centered).
    """

    name = "mock"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _canvas(self, request: ProposalRequest) -> Tuple[float, float]:
        return request.image_size if request.image_size else DEFAULT_CANVAS

    def _center_box(self, request: ProposalRequest) -> list:
        width, height = self._canvas(request)
        return [width / 4, height / 4, width / 2, height / 2]

    def propose(self, request: ProposalRequest) -> dict:
        meta = {"backend": self.name, "seed": self.seed}
        if request.mode is ProposalMode.SELECTION:
            question, answer, _ = request.qa
            tokens = set(_WORD.findall(f"{question} {answer}".lower()))
            selected = [
                c.region_id
                for c in request.candidates
                if c.label and set(_WORD.findall(c.label.lower())) and
                set(_WORD.findall(c.label.lower())) <= tokens
            ]
            return {"selected_ids": selected, "regions": [], "qa": [], "meta": meta}
        if request.mode is ProposalMode.REGION_GENERATION:
            return {
                "selected_ids": [],
                "regions": [{"bbox": self._center_box(request), "label": None}],
                "qa": [],
                "meta": meta,
            }
        return {
            "selected_ids": [],
            "regions": [{"bbox": self._center_box(request), "label": None}],
            "qa": [
                {
                    "question": "What does this image show?",
                    "answer": f"placeholder answer for {request.image_uid}",
                    "choices": [],
                }
            ],
            "meta": meta,
        }


def extract_first_json_object(text: str) -> Optional[dict]:
    """Pull the first balanced JSON object out of free-form reply text."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        parsed = json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(parsed, dict):
                        return parsed
                    break
        start = text.find("{", start + 1)
    return None


class HttpBackend:
    """Client for a proposal service speaking the JSON wire contract.

    One POST per request, one retry with jitter on transport failures.
    The prompt rendered from the template file travels with the request so
    a bridge in front of a vision-model chat API can forward it as-is.
    """

    name = "http"

    def __init__(
        self,
        url: str,
        token: Optional[str] = None,
        timeout: float = DEFAULT_TIMEOUT_S,
        retries: int = 1,
        prompt_template_path: Optional[str] = None,
        rng: Optional[random.Random] = None,
    ):
        self.url = url
        self.token = token
        self.timeout = timeout
        self.retries = retries
        self._templates = _load_prompt_templates(prompt_template_path)
        self._rng = rng or random.Random()

    def _render_prompt(self, request: ProposalRequest) -> str:
        template = self._templates.get(request.mode.value, "")
        question, answer, choices = request.qa if request.qa else ("", "", ())
        candidates = "\n".join(
            f"- {c.region_id}: {c.bbox.as_list()} {c.label or ''}".rstrip()
            for c in request.candidates
        )
        return template.format(
            question=question,
            answer=answer,
            choices=", ".join(choices),
            candidates=candidates,
        )

    def propose(self, request: ProposalRequest) -> Any:
        body = request.to_wire()
        body["prompt"] = self._render_prompt(request)
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last_error: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            try:
                reply = httpx.post(self.url, json=body, headers=headers, timeout=self.timeout)
                reply.raise_for_status()
                try:
                    return reply.json()
                except (json.JSONDecodeError, ValueError):
                    return reply.text
            except httpx.TimeoutException as exc:
                last_error = BackendTimeout(f"backend timed out after {self.timeout}s")
                last_error.__cause__ = exc
            except (httpx.ConnectError, httpx.HTTPStatusError, httpx.TransportError) as exc:
                last_error = BackendUnavailable(f"backend unavailable: {exc}")
                last_error.__cause__ = exc
            if attempt < self.retries:
                time.sleep(self._rng.uniform(0.1, 0.5))
        raise last_error


def _load_prompt_templates(path: Optional[str] = None) -> dict:
    if path is None:
        path = Path(__file__).parent / "data" / "prompt_template.json"
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _parse_reply(raw: Any, meta: dict) -> Optional[dict]:
    """Coerce a backend reply into the wire response shape, or None."""
    if isinstance(raw, Mapping):
        return dict(raw)
    if isinstance(raw, str):
        parsed = extract_first_json_object(raw)
        if parsed is not None:
            return parsed
        meta["raw_reply"] = raw
    else:
        meta["raw_reply"] = repr(raw)
    return None


def _degraded(meta: dict, warning: str) -> ProposalResponse:
    meta.setdefault("warnings", []).append(warning)
    logger.warning("proposal degraded: %s", warning)
    return ProposalResponse(backend_meta=meta)


def select_evidence(request: ProposalRequest, backend: ProposalBackend) -> ProposalResponse:
    """Selection mode: the reply may only reference existing candidate ids."""
    if request.mode is not ProposalMode.SELECTION:
        raise InvalidProposalRequest(f"expected selection mode, got {request.mode.value}")
    if not request.candidates:
        raise InvalidProposalRequest("selection mode requires candidates")
    if request.qa is None or not request.qa[0].strip():
        raise InvalidProposalRequest("selection mode requires a non-empty question")

    meta: dict = {}
    reply = _parse_reply(backend.propose(request), meta)
    if reply is None:
        return _degraded(meta, "malformed backend reply; selection left empty")
    meta.update(reply.get("meta", {}))

    known = {c.region_id for c in request.candidates}
    raw_ids = reply.get("selected_ids", ())
    if not isinstance(raw_ids, Sequence) or isinstance(raw_ids, (str, bytes)):
        return _degraded(meta, "selected_ids missing or not a list; selection left empty")
    selected = tuple(str(i) for i in raw_ids if str(i) in known)
    unknown = [str(i) for i in raw_ids if str(i) not in known]
    if unknown:
        meta.setdefault("warnings", []).append(f"unknown ids filtered: {unknown}")
    return ProposalResponse(selected_ids=selected, backend_meta=meta)


def _collect_regions(reply: dict, request: ProposalRequest, meta: dict) -> tuple:
    regions = []
    proposed = reply.get("regions", ())
    clipped_ids = []
    for i, entry in enumerate(proposed):
        try:
            bbox = BBox.from_list([float(v) for v in entry["bbox"]])
        except (KeyError, TypeError, ValueError):
            meta.setdefault("warnings", []).append(f"unparseable region entry {i} dropped")
            continue
        if request.image_size is not None:
            kept = clip_to_image(bbox, request.image_size)
            if kept is None:
                continue
            if kept != bbox:
                clipped_ids.append(i)
                bbox = kept
        if bbox.w <= 0 or bbox.h <= 0:
            continue
        regions.append(GeneratedRegion(bbox, entry.get("label")))
    if clipped_ids:
        meta["clipped"] = clipped_ids
    return tuple(regions), len(proposed)


def generate_regions(request: ProposalRequest, backend: ProposalBackend) -> ProposalResponse:
    """Region-generation mode: propose fresh boxes, clipped to the image."""
    if request.mode is not ProposalMode.REGION_GENERATION:
        raise InvalidProposalRequest(f"expected region_generation mode, got {request.mode.value}")
    if request.qa is None or not request.qa[0].strip():
        raise InvalidProposalRequest("region generation requires a non-empty question")

    meta: dict = {}
    reply = _parse_reply(backend.propose(request), meta)
    if reply is None:
        return _degraded(meta, "malformed backend reply; no regions proposed")
    meta.update(reply.get("meta", {}))

    regions, n_proposed = _collect_regions(reply, request, meta)
    if n_proposed and not regions:
        raise AllRegionsDegenerate(f"all {n_proposed} generated boxes invalid after clipping")
    return ProposalResponse(generated_regions=regions, backend_meta=meta)


def generate_qa_and_regions(request: ProposalRequest, backend: ProposalBackend) -> ProposalResponse:
    """Bare-record mode: propose QA items first, then evidence regions."""
    if request.mode is not ProposalMode.QA_AND_REGION_GENERATION:
        raise InvalidProposalRequest(f"expected qa_and_region_generation, got {request.mode.value}")
    if request.qa is not None:
        raise InvalidProposalRequest("QA generation request must not carry a QA item")

    meta: dict = {}
    reply = _parse_reply(backend.propose(request), meta)
    if reply is None:
        return _degraded(meta, "malformed backend reply; nothing proposed")
    meta.update(reply.get("meta", {}))

    qa_items = []
    for entry in reply.get("qa", ()):
        question = str(entry.get("question", "")).strip()
        if not question:
            continue
        qa_items.append(
            GeneratedQA(question, str(entry.get("answer", "")), tuple(entry.get("choices", ())))
        )
    if not qa_items:
        raise NoQAGenerated("backend returned no usable QA items")

    regions, n_proposed = _collect_regions(reply, request, meta)
    if n_proposed and not regions:
        raise AllRegionsDegenerate(f"all {n_proposed} generated boxes invalid after clipping")
    return ProposalResponse(
        generated_regions=regions, generated_qa=tuple(qa_items), backend_meta=meta
    )


def propose(request: ProposalRequest, backend: ProposalBackend) -> ProposalResponse:
    """Dispatch to the mode-specific operation."""
    if request.mode is ProposalMode.SELECTION:
        return select_evidence(request, backend)
    if request.mode is ProposalMode.REGION_GENERATION:
        return generate_regions(request, backend)
    return generate_qa_and_regions(request, backend)
