"""Writers for the unified per-image output document and vector overlays.

Output documents follow one fixed schema regardless of the source dataset:
dataset_type, image, qa {question, answer, choices}, annotations
[{id, bbox [x, y, w, h], label, meta {source, kind}}], metadata
{annotation_path, ground_truth_path, answers}. Serialization is canonical
(fixed key order, exponent-free numbers, LF endings) so re-exporting an
unchanged session is byte-identical.
"""

from __future__ import annotations

import json
from decimal import Decimal
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Tuple

from .schema import EXPORT_ID_PATTERN, EXPORT_SOURCE_STRINGS, ImageRecord
from .session import FinalizeResult, ReviewSession, SessionState


class ExportError(Exception):
    pass


class NotFinalized(ExportError):
    pass


class MissingImageSize(ExportError):
    pass


# ---------------------------------------------------------------------------
# Canonical JSON
# ---------------------------------------------------------------------------


def _format_number(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    text = repr(float(value))
    if "e" in text or "E" in text:
        text = format(Decimal(text), "f")
    return text


def dumps_canonical(obj, indent: int = 0) -> str:
    """Serialize with insertion-order keys and exponent-free numbers."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, float)):
        return _format_number(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        parts = [
            f"{inner}{json.dumps(str(k), ensure_ascii=False)}: {dumps_canonical(v, indent + 1)}"
            for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(parts) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        parts = [f"{inner}{dumps_canonical(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(parts) + f"\n{pad}]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_canonical(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(obj) + "\n")


# ---------------------------------------------------------------------------
# Output documents
# ---------------------------------------------------------------------------


def _canonical_ids(region_ids: Iterable[str]) -> dict:
    """Map arbitrary region ids onto the exported a_<n> id space.

    Ids already in canonical form are kept; everything else gets the next
    free number in evidence order.
    """
    region_ids = list(region_ids)
    kept = {rid for rid in region_ids if EXPORT_ID_PATTERN.match(rid)}
    mapping = {}
    n = 1
    for rid in region_ids:
        if rid in kept:
            mapping[rid] = rid
            continue
        while f"a_{n}" in kept:
            n += 1
        mapping[rid] = f"a_{n}"
        kept.add(f"a_{n}")
    return mapping


def _annotation_entry(exported_id: str, bbox_values: list, label, source: str) -> dict:
    return {
        "id": exported_id,
        "bbox": bbox_values,
        "label": label if label is not None else "",
        "meta": {"source": source, "kind": "bbox"},
    }


def _metadata_block(record: ImageRecord, no_evidence: bool = False) -> dict:
    meta = record.source_metadata
    block = {
        "annotation_path": meta.get("annotation_path", ""),
        "ground_truth_path": meta.get("ground_truth_path", ""),
        "answers": meta.get("answers", {}),
    }
    if no_evidence:
        block["no_evidence"] = True
    return block


def _dataset_type(record: ImageRecord) -> str:
    meta = record.source_metadata
    return meta.get("dataset_type") or meta.get("adapter_id") or ""


def export_record(session: ReviewSession, result: FinalizeResult) -> dict:
    """Build the per-image output document for a finalized session.

    Annotations appear in evidence-set order; tombstoned regions are gone.
    """
    if session.state is not SessionState.FINALIZED:
        raise NotFinalized(f"session is {session.state.value}, not finalized")
    qa_view = session.qa[result.attribution.qa_id]
    evidence = list(result.attribution.evidence)
    id_map = _canonical_ids(evidence)
    annotations = []
    for rid in evidence:
        view = session.regions[rid]
        annotations.append(
            _annotation_entry(id_map[rid], view.bbox.as_list(), view.label, view.export_source())
        )
    return {
        "dataset_type": _dataset_type(session.record),
        "image": session.record.image_path,
        "qa": {
            "question": qa_view.question_text,
            "answer": qa_view.answer_text,
            "choices": list(qa_view.choices),
        },
        "annotations": annotations,
        "metadata": _metadata_block(session.record, no_evidence=result.no_evidence),
    }


def record_document(record: ImageRecord, qa_id: Optional[str] = None) -> dict:
    """Output document for a record outside any session (the generic writer).

    Used for round-trips of ingested data: every region appears, in record
    order, with its pool source string.
    """
    qa = record.qa(qa_id) if qa_id else (record.qa_items[0] if record.qa_items else None)
    id_map = _canonical_ids(r.region_id for r in record.regions)
    annotations = [
        _annotation_entry(
            id_map[r.region_id],
            r.bbox.as_list(),
            r.label,
            EXPORT_SOURCE_STRINGS[r.provenance.source],
        )
        for r in record.regions
    ]
    return {
        "dataset_type": _dataset_type(record),
        "image": record.image_path,
        "qa": {
            "question": qa.question_text if qa else "",
            "answer": qa.answer_text if qa else "",
            "choices": list(qa.choices) if qa else [],
        },
        "annotations": annotations,
        "metadata": _metadata_block(record),
    }


def export_paths(out_dir, image_uid: str, qa_id: str) -> Tuple[Path, Path]:
    base = Path(out_dir) / f"{image_uid}__{qa_id}"
    return base.with_suffix(".json"), base.with_suffix(".svg")


# ---------------------------------------------------------------------------
# Vector overlay
# ---------------------------------------------------------------------------

OVERLAY_COLORS = {
    "ground_truth": "#2e7d32",
    "predicted": "#ef6c00",
    "selected": "#1565c0",
    "generated": "#6a1b9a",
    "added": "#c62828",
}


def export_overlay(
    image_path: str,
    image_size: Optional[Tuple[float, float]],
    regions: List[Tuple[str, list, str]],
) -> str:
    """SVG overlay: one rect per evidence region, stroke keyed by source.

    ``regions`` holds (exported id, bbox values, source string) tuples with
    geometry identical to the exported document.
    """
    if image_size is None:
        raise MissingImageSize("overlay export requires known image dimensions")
    width, height = image_size
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'width="{_format_number(width)}" height="{_format_number(height)}" '
        f'viewBox="0 0 {_format_number(width)} {_format_number(height)}">',
        f'  <image xlink:href="{image_path}" x="0" y="0" '
        f'width="{_format_number(width)}" height="{_format_number(height)}"/>',
    ]
    for exported_id, bbox, source in regions:
        x, y, w, h = (_format_number(v) for v in bbox)
        color = OVERLAY_COLORS.get(source, "#555555")
        lines.append(
            f'  <rect x="{x}" y="{y}" width="{w}" height="{h}" fill="none" '
            f'stroke="{color}" stroke-width="2" data-id="{exported_id}" data-source="{source}"/>'
        )
    lines.append('  <g class="legend" font-size="12" font-family="sans-serif">')
    for i, (source, color) in enumerate(OVERLAY_COLORS.items()):
        y = 16 + i * 18
        lines.append(
            f'    <rect x="8" y="{y - 10}" width="12" height="12" fill="none" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        lines.append(f'    <text x="26" y="{y}">{source}</text>')
    lines.append("  </g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def overlay_for_document(document: dict, image_size) -> str:
    regions = [
        (ann["id"], ann["bbox"], ann["meta"]["source"]) for ann in document["annotations"]
    ]
    return export_overlay(document["image"], image_size, regions)


# ---------------------------------------------------------------------------
# Internal record codec (full-record canonical form)
# ---------------------------------------------------------------------------


def encode_record(record: ImageRecord) -> str:
    return dumps_canonical(record.to_dict()) + "\n"


def decode_record(text: str) -> ImageRecord:
    return ImageRecord.from_dict(json.loads(text))
