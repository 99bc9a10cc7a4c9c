"""Unified in-memory representation of an image record under review.

Every dataset shape is adapted into these types before any interface,
session, or metric logic touches it. All types are immutable values;
mutation happens in the review session's derived state, never here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional, Sequence

EXPORT_ID_PATTERN = re.compile(r"^a_[1-9]\d*$")

# Bounds checks allow this much slack for rounded pixel coordinates.
BOUNDS_TOLERANCE_PX = 0.5

FRACTIONAL_COORDS_KEY = "coords"
FRACTIONAL_COORDS_VALUE = "fractional"


class Source(str, Enum):
    """Where a region came from."""

    GROUND_TRUTH = "ground_truth"
    PREDICTED = "predicted"
    MODEL_SELECTED = "model_selected"
    MODEL_GENERATED = "model_generated"
    REVIEWER_ADDED = "reviewer_added"


class QAStatus(str, Enum):
    UNVERIFIED = "unverified"
    VERIFIED = "verified"
    FLAGGED = "flagged"


# Source values as they appear in exported documents. Regions that carry the
# model-selection mark export as "selected" regardless of their pool source.
EXPORT_SOURCE_STRINGS = {
    Source.GROUND_TRUTH: "ground_truth",
    Source.PREDICTED: "predicted",
    Source.MODEL_SELECTED: "selected",
    Source.MODEL_GENERATED: "generated",
    Source.REVIEWER_ADDED: "added",
}

SOURCE_FROM_EXPORT_STRING = {v: k for k, v in EXPORT_SOURCE_STRINGS.items()}


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle: top-left origin, pixel units, [x, y, w, h].

    Components are real-valued; integer inputs are kept as ints so that
    serialization reproduces them verbatim.
    """

    x: float
    y: float
    w: float
    h: float

    def as_list(self) -> list:
        return [self.x, self.y, self.w, self.h]

    def corners(self) -> tuple:
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        x, y, w, h = values
        return cls(x, y, w, h)


@dataclass(frozen=True)
class Provenance:
    """Origin of a region plus whether its geometry changed after creation.

    ``source`` never changes once the region exists; ``edited`` may only go
    from False to True.
    """

    source: Source
    edited: bool = False

    def to_dict(self) -> dict:
        return {"source": self.source.value, "edited": self.edited}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Provenance":
        return cls(source=Source(data["source"]), edited=bool(data.get("edited", False)))


@dataclass(frozen=True)
class Region:
    region_id: str
    bbox: BBox
    label: Optional[str] = None
    provenance: Provenance = Provenance(Source.GROUND_TRUTH)

    def to_dict(self) -> dict:
        doc = {"region_id": self.region_id, "bbox": self.bbox.as_list()}
        doc["label"] = self.label
        doc.update(self.provenance.to_dict())
        return doc

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Region":
        return cls(
            region_id=data["region_id"],
            bbox=BBox.from_list(data["bbox"]),
            label=data.get("label"),
            provenance=Provenance.from_dict(data),
        )


@dataclass(frozen=True)
class QAItem:
    qa_id: str
    question_text: str
    answer_text: str
    choices: tuple = ()
    status: QAStatus = QAStatus.UNVERIFIED
    note: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "question_text": self.question_text,
            "answer_text": self.answer_text,
            "choices": list(self.choices),
            "status": self.status.value,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QAItem":
        return cls(
            qa_id=data["qa_id"],
            question_text=data["question_text"],
            answer_text=data.get("answer_text", ""),
            choices=tuple(data.get("choices", ())),
            status=QAStatus(data.get("status", "unverified")),
            note=data.get("note"),
        )


@dataclass(frozen=True)
class AttributionMapping:
    """Links one QA item to the region ids that support its answer."""

    qa_id: str
    evidence: tuple = ()

    def to_dict(self) -> dict:
        return {"qa_id": self.qa_id, "evidence": list(self.evidence)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AttributionMapping":
        return cls(qa_id=data["qa_id"], evidence=tuple(data.get("evidence", ())))


@dataclass(frozen=True)
class ImageRecord:
    """One image plus its QA items, candidate regions, and attributions.

    ``source_metadata`` preserves every original field the adapter did not
    map, so nothing from the source record is lost.
    """

    image_uid: str
    image_path: str
    image_size: Optional[tuple] = None
    qa_items: tuple = ()
    regions: tuple = ()
    attributions: tuple = ()
    source_metadata: Mapping[str, Any] = field(default_factory=dict)

    def qa(self, qa_id: str) -> Optional[QAItem]:
        for item in self.qa_items:
            if item.qa_id == qa_id:
                return item
        return None

    def region(self, region_id: str) -> Optional[Region]:
        for region in self.regions:
            if region.region_id == region_id:
                return region
        return None

    def candidate_regions(self) -> tuple:
        """Regions eligible for selection: the pre-existing candidate pool."""
        pool = (Source.GROUND_TRUTH, Source.PREDICTED)
        return tuple(r for r in self.regions if r.provenance.source in pool)

    def to_dict(self) -> dict:
        return {
            "image_uid": self.image_uid,
            "image_path": self.image_path,
            "image_size": list(self.image_size) if self.image_size else None,
            "qa_items": [q.to_dict() for q in self.qa_items],
            "regions": [r.to_dict() for r in self.regions],
            "attributions": [a.to_dict() for a in self.attributions],
            "source_metadata": dict(self.source_metadata),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ImageRecord":
        size = data.get("image_size")
        return cls(
            image_uid=data["image_uid"],
            image_path=data.get("image_path", ""),
            image_size=tuple(size) if size else None,
            qa_items=tuple(QAItem.from_dict(q) for q in data.get("qa_items", ())),
            regions=tuple(Region.from_dict(r) for r in data.get("regions", ())),
            attributions=tuple(
                AttributionMapping.from_dict(a) for a in data.get("attributions", ())
            ),
            source_metadata=dict(data.get("source_metadata", {})),
        )


@dataclass(frozen=True)
class Violation:
    """One invariant breach found by validate_record.

    ``severity`` is "error" for invariant breaches and "warning" for
    conditions that are flagged but do not invalidate the record (for
    example fractional coordinates retained because the image size was
    unknown at ingest).
    """

    path: str
    message: str
    severity: str = "error"

    def to_dict(self) -> dict:
        return {"path": self.path, "message": self.message, "severity": self.severity}


def _region_key(index: int, region: Region) -> str:
    # Keyed by id so the violation multiset is stable under permutation.
    return region.region_id if region.region_id else str(index)


def _qa_key(index: int, item: QAItem) -> str:
    return item.qa_id if item.qa_id else str(index)


def _validate_bbox(path: str, bbox: BBox, image_size: Optional[tuple]) -> list:
    out = []
    if bbox.w <= 0:
        out.append(Violation(f"{path}.w", f"width must be positive, got {bbox.w}"))
    if bbox.h <= 0:
        out.append(Violation(f"{path}.h", f"height must be positive, got {bbox.h}"))
    if bbox.x < 0:
        out.append(Violation(f"{path}.x", f"x must be non-negative, got {bbox.x}"))
    if bbox.y < 0:
        out.append(Violation(f"{path}.y", f"y must be non-negative, got {bbox.y}"))
    if image_size is not None:
        width, height = image_size
        if bbox.x + bbox.w > width + BOUNDS_TOLERANCE_PX:
            out.append(
                Violation(path, f"box right edge {bbox.x + bbox.w} exceeds image width {width}")
            )
        if bbox.y + bbox.h > height + BOUNDS_TOLERANCE_PX:
            out.append(
                Violation(path, f"box bottom edge {bbox.y + bbox.h} exceeds image height {height}")
            )
    return out


def validate_record(record: ImageRecord) -> list:
    """Check every invariant of the unified representation.

    Returns an ordered list of Violations; no errors means the record is
    valid. Violations are data, not exceptions, so callers can report all
    problems at once. Deterministic for a given record, and the violation
    multiset does not depend on collection ordering because paths are keyed
    by region/qa id.
    """
    violations: list = []

    if not record.image_uid:
        violations.append(Violation("image_uid", "image_uid must be non-empty"))

    seen_regions: set = set()
    for i, region in enumerate(record.regions):
        key = _region_key(i, region)
        if region.region_id in seen_regions:
            violations.append(
                Violation(f"regions[{key}].region_id", f"duplicate region_id {region.region_id!r}")
            )
        seen_regions.add(region.region_id)
        if not region.region_id:
            violations.append(Violation(f"regions[{key}].region_id", "region_id must be non-empty"))
        violations.extend(_validate_bbox(f"regions[{key}].bbox", region.bbox, record.image_size))

    seen_qa: set = set()
    for i, item in enumerate(record.qa_items):
        key = _qa_key(i, item)
        if item.qa_id in seen_qa:
            violations.append(
                Violation(f"qa_items[{key}].qa_id", f"duplicate qa_id {item.qa_id!r}")
            )
        seen_qa.add(item.qa_id)
        if item.status is QAStatus.VERIFIED and not item.question_text:
            violations.append(
                Violation(
                    f"qa_items[{key}].question_text",
                    "verified QA items must have non-empty question text",
                )
            )
        if item.status is QAStatus.FLAGGED and not item.note:
            violations.append(
                Violation(f"qa_items[{key}].note", "flagged QA items must carry a reviewer note")
            )

    for i, mapping in enumerate(record.attributions):
        key = mapping.qa_id if mapping.qa_id else str(i)
        if mapping.qa_id not in seen_qa:
            violations.append(
                Violation(
                    f"attributions[{key}].qa_id",
                    f"attribution references unknown qa_id {mapping.qa_id!r}",
                )
            )
        for region_id in mapping.evidence:
            if region_id not in seen_regions:
                violations.append(
                    Violation(
                        f"attributions[{key}].evidence",
                        f"evidence references unknown region_id {region_id!r}",
                    )
                )

    if record.source_metadata.get(FRACTIONAL_COORDS_KEY) == FRACTIONAL_COORDS_VALUE:
        violations.append(
            Violation(
                "source_metadata.coords",
                "bounding boxes retained as fractional coordinates (image size unknown at ingest)",
                severity="warning",
            )
        )

    return violations


def errors_only(violations: Sequence[Violation]) -> list:
    return [v for v in violations if v.severity == "error"]
