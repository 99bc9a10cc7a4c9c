from __future__ import annotations

from pathlib import Path

import pytest

from qareview.schema import (
    AttributionMapping,
    BBox,
    ImageRecord,
    Provenance,
    QAItem,
    Region,
    Source,
)

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

ALL_FIXTURES = [
    "generic_v1.json",
    "chart_style.json",
    "map_style.json",
    "choropleth_style.json",
    "diagram_style.json",
    "circuit_style.json",
    "infographic_style.json",
]


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def make_region(region_id: str, x=0, y=0, w=10, h=10, source=Source.GROUND_TRUTH, label=None):
    return Region(region_id, BBox(x, y, w, h), label=label, provenance=Provenance(source))


def make_record(
    uid="img_t",
    regions=(),
    qa=(),
    attributions=(),
    image_size=None,
    metadata=None,
) -> ImageRecord:
    return ImageRecord(
        image_uid=uid,
        image_path=f"images/{uid}.png",
        image_size=image_size,
        qa_items=tuple(qa),
        regions=tuple(regions),
        attributions=tuple(attributions),
        source_metadata=metadata or {},
    )


def make_qa(qa_id="q_0", question="What is shown?", answer="a thing", choices=()):
    return QAItem(qa_id=qa_id, question_text=question, answer_text=answer, choices=tuple(choices))


def simple_attribution(qa_id, *region_ids):
    return AttributionMapping(qa_id=qa_id, evidence=tuple(region_ids))
