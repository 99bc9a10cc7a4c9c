"""Dataset loading, shape detection, and bounding-box normalization.

Incoming files are JSON arrays of per-image records whose field layout
differs by dataset family. A registry of adapters, each keyed by a
structural fingerprint (a set of required keys, never a dataset name),
maps every shape into the unified ImageRecord representation. Boxes are
normalized from five wire conventions into canonical pixel-space
[x, y, w, h].
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, List, Mapping, Optional, Sequence, Tuple

from .schema import (
    FRACTIONAL_COORDS_KEY,
    FRACTIONAL_COORDS_VALUE,
    SOURCE_FROM_EXPORT_STRING,
    AttributionMapping,
    BBox,
    ImageRecord,
    Provenance,
    QAItem,
    Region,
    Source,
    errors_only,
    validate_record,
)

logger = logging.getLogger(__name__)

# Origins this close to zero are treated as rounding noise and clamped.
CLAMP_TOLERANCE_PX = 0.5


class IngestError(Exception):
    pass


class NotAnArray(IngestError):
    """Top level of the input file is not a JSON array."""


class UnrecognizedShape(IngestError):
    """No adapter fingerprint matches the record."""

    def __init__(self, index: Optional[int] = None, keys: Sequence[str] = ()):
        self.index = index
        self.keys = tuple(keys)
        where = f"record {index}" if index is not None else "record"
        super().__init__(f"{where} matches no registered adapter (keys: {sorted(self.keys)})")


class UnrecognizedBoxFormat(IngestError):
    """Raw box value fits none of the supported conventions."""


class DegenerateBox(IngestError):
    """Box has non-positive width or height after conversion."""


class MissingImageSize(IngestError):
    """Fractional coordinates cannot be scaled without image dimensions."""


class NegativeOrigin(IngestError):
    """Box origin is negative beyond the clamp tolerance."""


class DuplicateImageUid(IngestError):
    pass


class AdaptationFailed(IngestError):
    """The adapted record breaks meta-schema invariants."""

    def __init__(self, image_uid: str, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{v.path}: {v.message}" for v in self.violations)
        super().__init__(f"record {image_uid!r} failed validation: {lines}")


class BBoxVariant(str, Enum):
    ARRAY_XYWH = "array_xywh"
    ARRAY_CORNERS = "array_corners"
    NAMED_LTWH = "named_ltwh"
    NAMED_CORNERS = "named_corners"
    FRACTIONAL_XYWH = "fractional_xywh"


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def detect_bbox_variant(
    raw: Any,
    hint: Optional[BBoxVariant] = None,
    sniff_fractional: bool = False,
) -> BBoxVariant:
    """Classify a raw box value into one of the five wire conventions.

    Named (dict) boxes are unambiguous. For length-4 numeric arrays, a
    ``hint`` from the adapter is authoritative for the component order;
    with ``sniff_fractional`` an all-in-[0, 1] array is still read as
    fractional even under an [x, y, w, h] hint. Without a hint the
    documented precedence applies: fractional when all components lie in
    [0, 1], corners when the third component is below the first (or the
    fourth below the second), [x, y, w, h] otherwise. Adapters that know
    their convention should hint rather than rely on that guess.
    """
    if isinstance(raw, Mapping):
        keys = set(raw.keys())
        if {"left", "top", "width", "height"} <= keys:
            return BBoxVariant.NAMED_LTWH
        if {"x1", "y1", "x2", "y2"} <= keys:
            return BBoxVariant.NAMED_CORNERS
        raise UnrecognizedBoxFormat(f"unsupported box keys {sorted(keys)}")
    if isinstance(raw, Sequence) and not isinstance(raw, (str, bytes)):
        if len(raw) != 4 or not all(_is_number(v) for v in raw):
            raise UnrecognizedBoxFormat(f"expected 4 numeric components, got {raw!r}")
        fractional = all(0 <= v <= 1 for v in raw)
        if hint is not None:
            if fractional and sniff_fractional:
                return BBoxVariant.FRACTIONAL_XYWH
            return hint
        if fractional:
            return BBoxVariant.FRACTIONAL_XYWH
        if raw[2] < raw[0] or raw[3] < raw[1]:
            return BBoxVariant.ARRAY_CORNERS
        return BBoxVariant.ARRAY_XYWH
    raise UnrecognizedBoxFormat(f"unsupported box value {raw!r}")


def _components(raw: Any, variant: BBoxVariant) -> Tuple[float, float, float, float]:
    if variant is BBoxVariant.NAMED_LTWH:
        return raw["left"], raw["top"], raw["width"], raw["height"]
    if variant is BBoxVariant.NAMED_CORNERS:
        x1, y1, x2, y2 = raw["x1"], raw["y1"], raw["x2"], raw["y2"]
        return x1, y1, x2 - x1, y2 - y1
    if variant is BBoxVariant.ARRAY_CORNERS:
        x1, y1, x2, y2 = raw
        return x1, y1, x2 - x1, y2 - y1
    # ARRAY_XYWH and FRACTIONAL_XYWH are positional [x, y, w, h].
    x, y, w, h = raw
    return x, y, w, h


def normalize_bbox(
    raw: Any,
    image_size: Optional[Tuple[float, float]] = None,
    variant: Optional[BBoxVariant] = None,
) -> BBox:
    """Convert a raw box into a canonical pixel-space BBox.

    Corner conventions convert via w = x2 - x1, h = y2 - y1; fractional
    coordinates scale by the image dimensions and therefore require
    ``image_size``. Negative origins within the clamp tolerance are snapped
    to zero with a warning; anything further out is an error.
    """
    if variant is None:
        variant = detect_bbox_variant(raw)
    x, y, w, h = _components(raw, variant)
    if not all(math.isfinite(v) for v in (x, y, w, h)):
        raise UnrecognizedBoxFormat(f"non-finite box component in {raw!r}")

    if variant is BBoxVariant.FRACTIONAL_XYWH:
        if image_size is None:
            raise MissingImageSize("fractional box requires image dimensions")
        iw, ih = image_size
        x, y, w, h = x * iw, y * ih, w * iw, h * ih

    if w <= 0 or h <= 0:
        raise DegenerateBox(f"non-positive extent after conversion: w={w}, h={h}")

    for name, value in (("x", x), ("y", y)):
        if value < 0:
            if value > -CLAMP_TOLERANCE_PX:
                logger.warning("clamping %s=%s to 0 (rounding noise)", name, value)
            else:
                raise NegativeOrigin(f"{name}={value} is negative beyond tolerance")
    x = max(0, x)
    y = max(0, y)
    return BBox(x, y, w, h)


# ---------------------------------------------------------------------------
# Adapters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Adapter:
    """One dataset-shape mapping: fingerprint keys plus a build function."""

    name: str
    required: frozenset
    build: Callable[[Mapping[str, Any]], ImageRecord]


class _RecordBuilder:
    """Accumulates normalized parts of one ImageRecord.

    Region ids from the source are kept verbatim; boxes without ids get
    canonical ``a_<n>`` ids, skipping any taken by source ids.
    """

    def __init__(self, image_uid: str, image_path: str, image_size=None):
        self.image_uid = image_uid
        self.image_path = image_path
        self.image_size = tuple(image_size) if image_size else None
        self.regions: List[Region] = []
        self.qa_items: List[QAItem] = []
        self.attributions: List[AttributionMapping] = []
        self.metadata: dict = {}
        self._taken_ids: set = set()
        self._next_region = 1
        self._fractional_retained = False

    def _fresh_region_id(self) -> str:
        while f"a_{self._next_region}" in self._taken_ids:
            self._next_region += 1
        rid = f"a_{self._next_region}"
        self._next_region += 1
        return rid

    def add_box(
        self,
        raw_box: Any,
        source: Source,
        label: Optional[str] = None,
        region_id: Optional[str] = None,
        variant: Optional[BBoxVariant] = None,
        sniff_fractional: bool = False,
    ) -> Region:
        resolved = detect_bbox_variant(raw_box, hint=variant, sniff_fractional=sniff_fractional)
        try:
            bbox = normalize_bbox(raw_box, self.image_size, resolved)
        except MissingImageSize:
            # Fractional coordinates with unknown dimensions: keep the raw
            # values rather than dropping data, and mark the record so
            # validate_record flags it.
            x, y, w, h = _components(raw_box, resolved)
            if w <= 0 or h <= 0:
                raise DegenerateBox(f"non-positive extent: w={w}, h={h}")
            bbox = BBox(x, y, w, h)
            self._fractional_retained = True
        if region_id is None:
            region_id = self._fresh_region_id()
        else:
            self._taken_ids.add(region_id)
        region = Region(region_id, bbox, label=label, provenance=Provenance(source))
        self.regions.append(region)
        return region

    def add_qa(self, question: str, answer: str, choices=()) -> QAItem:
        item = QAItem(
            qa_id=f"q_{len(self.qa_items)}",
            question_text=question,
            answer_text=answer,
            choices=tuple(choices),
        )
        self.qa_items.append(item)
        return item

    def keep_metadata(self, raw: Mapping[str, Any], consumed: set) -> None:
        for key, value in raw.items():
            if key not in consumed:
                self.metadata[key] = value

    def finish(self) -> ImageRecord:
        if self._fractional_retained:
            self.metadata[FRACTIONAL_COORDS_KEY] = FRACTIONAL_COORDS_VALUE
        return ImageRecord(
            image_uid=self.image_uid,
            image_path=self.image_path,
            image_size=self.image_size,
            qa_items=tuple(self.qa_items),
            regions=tuple(self.regions),
            attributions=tuple(self.attributions),
            source_metadata=self.metadata,
        )


def _adapt_generic_v1(raw: Mapping[str, Any]) -> ImageRecord:
    # The native input format uses canonical [x, y, w, h]; fractional boxes
    # are still recognized and retained per the fractional-coordinate policy.
    b = _RecordBuilder(raw["image_uid"], raw["image_path"])
    for box in raw.get("bbox", ()):
        b.add_box(box, Source.GROUND_TRUTH, variant=BBoxVariant.ARRAY_XYWH,
                  sniff_fractional=True)
    for box in raw.get("predicted_boxes", ()):
        b.add_box(box, Source.PREDICTED, variant=BBoxVariant.ARRAY_XYWH,
                  sniff_fractional=True)
    for q in raw.get("questions", ()):
        b.add_qa(q.get("question_text", ""), q.get("answer_text", ""), q.get("choices", ()))
    b.keep_metadata(raw, {"image_uid", "image_path", "bbox", "predicted_boxes", "questions"})
    return b.finish()


def _adapt_meta_output_v1(raw: Mapping[str, Any]) -> ImageRecord:
    """Re-ingests the unified per-image export document."""
    b = _RecordBuilder(raw.get("image_uid") or Path(raw["image"]).stem, raw["image"])
    qa = raw["qa"]
    item = b.add_qa(qa.get("question", ""), qa.get("answer", ""), qa.get("choices", ()))
    evidence = []
    for ann in raw.get("annotations", ()):
        source = SOURCE_FROM_EXPORT_STRING.get(ann.get("meta", {}).get("source"))
        if source is None:
            source = Source.GROUND_TRUTH
        region = b.add_box(
            ann["bbox"],
            source,
            label=ann.get("label") or None,
            region_id=ann.get("id"),
            variant=BBoxVariant.ARRAY_XYWH,
        )
        evidence.append(region.region_id)
    b.attributions.append(AttributionMapping(qa_id=item.qa_id, evidence=tuple(evidence)))
    if raw.get("dataset_type"):
        b.metadata["dataset_type"] = raw["dataset_type"]
    meta = raw.get("metadata", {})
    for key in ("annotation_path", "ground_truth_path"):
        if meta.get(key):
            b.metadata[key] = meta[key]
    if meta.get("answers"):
        b.metadata["answers"] = meta["answers"]
    return b.finish()


def _adapt_chart_style(raw: Mapping[str, Any]) -> ImageRecord:
    size = (raw["width"], raw["height"]) if "width" in raw and "height" in raw else None
    b = _RecordBuilder(raw["chart_id"], raw["img"], size)
    for mark in raw.get("marks", ()):
        b.add_box(mark["box"], Source.GROUND_TRUTH, label=mark.get("text"))
    for q in raw.get("qa_pairs", ()):
        b.add_qa(q.get("query", ""), q.get("response", ""))
    b.keep_metadata(raw, {"chart_id", "img", "width", "height", "marks", "qa_pairs"})
    return b.finish()


def _adapt_map_style(raw: Mapping[str, Any]) -> ImageRecord:
    size = raw.get("size")
    size = (size["w"], size["h"]) if size else None
    b = _RecordBuilder(raw["uid"], raw["image_file"], size)
    for region in raw.get("regions", ()):
        b.add_box(region, Source.GROUND_TRUTH, label=region.get("name"))
    for q in raw.get("questions", ()):
        b.add_qa(q.get("q", ""), q.get("a", ""), q.get("options", ()))
    b.keep_metadata(raw, {"uid", "image_file", "size", "regions", "questions"})
    return b.finish()


def _adapt_choropleth_style(raw: Mapping[str, Any]) -> ImageRecord:
    canvas = raw.get("canvas")
    b = _RecordBuilder(raw["map_uid"], raw["image"], tuple(canvas) if canvas else None)
    for area in raw.get("areas", ()):
        b.add_box(area["bounds"], Source.GROUND_TRUTH, label=area.get("label"))
    for q in raw.get("prompts", ()):
        b.add_qa(q.get("question", ""), q.get("answer", ""))
    b.keep_metadata(raw, {"map_uid", "image", "canvas", "areas", "prompts"})
    return b.finish()


def _adapt_diagram_style(raw: Mapping[str, Any]) -> ImageRecord:
    size = raw.get("image_size")
    b = _RecordBuilder(raw["id"], raw["image_name"], tuple(size) if size else None)
    for box in raw.get("gt_boxes", ()):
        b.add_box(box, Source.GROUND_TRUTH, variant=BBoxVariant.ARRAY_XYWH)
    for box in raw.get("pred_boxes", ()):
        b.add_box(box, Source.PREDICTED, variant=BBoxVariant.ARRAY_XYWH)
    for q in raw.get("qas", ()):
        b.add_qa(q.get("question", ""), q.get("answer", ""), q.get("choices", ()))
    b.keep_metadata(raw, {"id", "image_name", "image_size", "gt_boxes", "pred_boxes", "qas"})
    return b.finish()


def _adapt_circuit_style(raw: Mapping[str, Any]) -> ImageRecord:
    dims = raw.get("dims")
    size = (dims["width"], dims["height"]) if dims else None
    b = _RecordBuilder(raw["circuit_id"], raw["path"], size)
    for comp in raw.get("components", ()):
        # Component pins are corner coordinates by convention in this shape.
        b.add_box(
            comp["pins"],
            Source.GROUND_TRUTH,
            label=comp.get("kind"),
            region_id=comp.get("ref"),
            variant=BBoxVariant.ARRAY_CORNERS,
        )
    for q in raw.get("question_list", ()):
        b.add_qa(q.get("text", ""), q.get("answer", ""))
    b.keep_metadata(raw, {"circuit_id", "path", "dims", "components", "question_list"})
    return b.finish()


def _adapt_infographic_style(raw: Mapping[str, Any]) -> ImageRecord:
    page = raw.get("page_size")
    size = (page["width"], page["height"]) if page else None
    b = _RecordBuilder(raw["doc_id"], raw["image"], size)
    for box in raw.get("evidence_boxes", ()):
        b.add_box(
            box["region"],
            Source.GROUND_TRUTH,
            label=box.get("caption"),
            region_id=box.get("box_id"),
            variant=BBoxVariant.ARRAY_XYWH,
            sniff_fractional=True,
        )
    for q in raw.get("qa", ()):
        b.add_qa(q.get("question_text", ""), q.get("answer_text", ""), q.get("choices", ()))
    b.keep_metadata(raw, {"doc_id", "image", "page_size", "evidence_boxes", "qa"})
    return b.finish()


# Registry order is the documented tie-break for equally specific matches.
ADAPTERS: Tuple[Adapter, ...] = (
    Adapter("generic_v1", frozenset({"image_uid", "image_path"}), _adapt_generic_v1),
    Adapter("meta_output_v1", frozenset({"image", "qa", "annotations"}), _adapt_meta_output_v1),
    Adapter("chart_style", frozenset({"chart_id", "img", "marks"}), _adapt_chart_style),
    Adapter("map_style", frozenset({"uid", "image_file", "regions"}), _adapt_map_style),
    Adapter("choropleth_style", frozenset({"map_uid", "image", "areas"}), _adapt_choropleth_style),
    Adapter("diagram_style", frozenset({"id", "image_name", "gt_boxes"}), _adapt_diagram_style),
    Adapter("circuit_style", frozenset({"circuit_id", "path", "components"}), _adapt_circuit_style),
    Adapter(
        "infographic_style",
        frozenset({"doc_id", "image", "evidence_boxes"}),
        _adapt_infographic_style,
    ),
)

_BY_NAME = {a.name: a for a in ADAPTERS}


def detect_schema(raw: Mapping[str, Any]) -> str:
    """Pick the adapter whose fingerprint matches with highest specificity.

    Purely a function of the record's key structure; values never matter.
    """
    keys = set(raw.keys())
    best = None
    for adapter in ADAPTERS:
        if adapter.required <= keys:
            if best is None or len(adapter.required) > len(best.required):
                best = adapter
    if best is None:
        raise UnrecognizedShape(keys=tuple(keys))
    return best.name


def load_dataset(path) -> List[Tuple[Mapping[str, Any], str]]:
    """Parse a multi-image JSON file into (raw record, adapter id) pairs.

    Entries come back in file order and nothing is dropped: a record no
    adapter recognizes raises UnrecognizedShape with its index.
    """
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise NotAnArray(f"top level of {path} must be a JSON array")
    out = []
    for i, raw in enumerate(data):
        if not isinstance(raw, Mapping):
            raise UnrecognizedShape(index=i)
        try:
            adapter = detect_schema(raw)
        except UnrecognizedShape:
            raise UnrecognizedShape(index=i, keys=tuple(raw.keys()))
        out.append((raw, adapter))
    return out


def adapt_record(raw: Mapping[str, Any], adapter_id: str) -> ImageRecord:
    """Map one raw record into the unified representation and validate it."""
    adapter = _BY_NAME[adapter_id]
    record = adapter.build(raw)
    record = ImageRecord(
        image_uid=record.image_uid,
        image_path=record.image_path,
        image_size=record.image_size,
        qa_items=record.qa_items,
        regions=record.regions,
        attributions=record.attributions,
        source_metadata={**record.source_metadata, "adapter_id": adapter_id},
    )
    problems = errors_only(validate_record(record))
    if problems:
        raise AdaptationFailed(record.image_uid, problems)
    return record


def ingest_file(path) -> List[ImageRecord]:
    """Load, adapt, and cross-check a dataset file end to end."""
    records = [adapt_record(raw, adapter) for raw, adapter in load_dataset(path)]
    seen: set = set()
    for record in records:
        if record.image_uid in seen:
            raise DuplicateImageUid(f"image_uid {record.image_uid!r} appears more than once")
        seen.add(record.image_uid)
    return records
