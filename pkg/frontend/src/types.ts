// Wire types mirroring the review service payloads.

export type SourceString = 'ground_truth' | 'predicted' | 'selected' | 'generated' | 'added';

export type SessionLifecycle = 'loaded' | 'proposed' | 'in_review' | 'flagged' | 'finalized';

export type EditOpKind =
  | 'select_region'
  | 'deselect_region'
  | 'resize_region'
  | 'move_region'
  | 'delete_region'
  | 'draw_region'
  | 'add_qa'
  | 'edit_qa'
  | 'verify_qa'
  | 'flag_qa'
  | 'set_no_evidence';

export type BBox = [number, number, number, number]; // x, y, w, h

export interface EditOpBody {
  op: EditOpKind;
  target_id?: string | null;
  payload?: Record<string, unknown>;
}

export interface RegionView {
  region_id: string;
  bbox: BBox;
  label: string | null;
  source: string;
  export_source: SourceString;
  edited: boolean;
  deleted: boolean;
  selected_mark: boolean;
}

export interface QAView {
  qa_id: string;
  question_text: string;
  answer_text: string;
  choices: string[];
  status: 'unverified' | 'verified' | 'flagged';
  note: string | null;
  no_evidence: boolean;
}

export interface SessionView {
  session_key: string;
  state: SessionLifecycle;
  active_qa: string | null;
  mode: string | null;
  qa: QAView[];
  regions: RegionView[];
  evidence: string[];
  proposal_ids: string[];
  log_length: number;
  finalized: FinalizedPayload | null;
  applied?: AppliedOp;
}

export interface AppliedOp {
  op: EditOpKind;
  target_id: string | null;
  payload: Record<string, unknown>;
  timestamp: number;
  actor: string;
}

export interface UtilityCounts {
  retained_pred_count: number;
  effective_removed_count: number;
  added_gt_count: number;
  new_drawn_count: number;
}

export interface FinalizedPayload {
  image_uid: string;
  qa_id: string;
  dataset_type: string;
  state: 'finalized';
  reviewer: string;
  retain_iou: number;
  no_evidence: boolean;
  counts: UtilityCounts;
  evidence: string[];
  document: ExportDocument;
}

export interface ExportDocument {
  dataset_type: string;
  image: string;
  qa: { question: string; answer: string; choices: string[] };
  annotations: Array<{
    id: string;
    bbox: BBox;
    label: string;
    meta: { source: SourceString; kind: 'bbox' };
  }>;
  metadata: Record<string, unknown>;
}

export interface RecordSummary {
  image_uid: string;
  image_path: string;
  image_size: [number, number] | null;
  dataset_type: string;
  n_qa: number;
  n_regions: number;
  qa_ids: string[];
}

export interface RecordDetail {
  image_uid: string;
  image_path: string;
  image_size: [number, number] | null;
  qa_items: Array<{ qa_id: string; question_text: string; answer_text: string }>;
  regions: unknown[];
  source_metadata: Record<string, unknown>;
}

export interface LeaseInfo {
  session_key: string;
  actor?: string;
  expires_at?: number;
  released?: boolean;
}
