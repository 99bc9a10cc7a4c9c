"""Review-first workbench for visual-evidence attribution in diagram QA."""

from .schema import (
    AttributionMapping,
    BBox,
    ImageRecord,
    Provenance,
    QAItem,
    QAStatus,
    Region,
    Source,
    Violation,
    validate_record,
)
from .ingest import adapt_record, detect_schema, ingest_file, load_dataset, normalize_bbox
from .proposal import (
    MockBackend,
    ProposalMode,
    ProposalRequest,
    ProposalResponse,
    build_request,
    choose_mode,
)
from .session import (
    EditKind,
    EditOp,
    ReviewSession,
    apply_edit,
    attach_proposal,
    finalize,
    open_session,
    replay,
)
from .metrics import (
    UtilityCounts,
    UtilityScores,
    aggregate_micro,
    cohens_kappa,
    compute_utility,
    fn_breakdown,
    percent_agreement,
)
from .export import export_record, export_overlay

__version__ = "0.1.0"

__all__ = [
    "AttributionMapping",
    "BBox",
    "ImageRecord",
    "Provenance",
    "QAItem",
    "QAStatus",
    "Region",
    "Source",
    "Violation",
    "validate_record",
    "adapt_record",
    "detect_schema",
    "ingest_file",
    "load_dataset",
    "normalize_bbox",
    "MockBackend",
    "ProposalMode",
    "ProposalRequest",
    "ProposalResponse",
    "build_request",
    "choose_mode",
    "EditKind",
    "EditOp",
    "ReviewSession",
    "apply_edit",
    "attach_proposal",
    "finalize",
    "open_session",
    "replay",
    "UtilityCounts",
    "UtilityScores",
    "aggregate_micro",
    "cohens_kappa",
    "compute_utility",
    "fn_breakdown",
    "percent_agreement",
    "export_record",
    "export_overlay",
    "__version__",
]
