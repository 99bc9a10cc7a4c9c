import { ApiError, ReviewApi } from './api';
import type { BBox, EditOpBody, FinalizedPayload, SessionView } from './types';

export type StoreEvent =
  | { kind: 'view'; view: SessionView }
  | { kind: 'rejected'; op: EditOpBody; error: ApiError }
  | { kind: 'lease-lost'; error: ApiError }
  | { kind: 'finalized'; payload: FinalizedPayload };

type Listener = (event: StoreEvent) => void;

/**
 * Session state with optimistic echo and server reconciliation.
 *
 * The server's derived view is the single source of truth. Each gesture
 * produces exactly one edit op: the op is echoed locally for immediate
 * feedback, queued, and POSTed in order; every acknowledgement replaces the
 * whole view with the server's version, and a rejection rolls the view back
 * to the last acknowledged state so mistakes are visible, not silent.
 */
export class SessionStore {
  api: ReviewApi;
  uid = '';
  qaId = '';
  view: SessionView | null = null;
  leaseLost = false;

  private serverView: SessionView | null = null;
  private queue: Promise<void> = Promise.resolve();
  private pendingCount = 0;
  private listeners = new Set<Listener>();
  private drawCounter = 0;

  constructor(api: ReviewApi) {
    this.api = api;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private emit(event: StoreEvent): void {
    for (const listener of this.listeners) listener(event);
  }

  get pending(): number {
    return this.pendingCount;
  }

  /** Loads (or creates, via propose) the session for one record/QA pair. */
  async open(uid: string, qaId: string, backend?: string): Promise<SessionView> {
    this.uid = uid;
    this.qaId = qaId;
    this.leaseLost = false;
    let view: SessionView;
    try {
      view = await this.api.getSession(uid, qaId);
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) {
        view = await this.api.propose(uid, qaId, backend);
      } else {
        throw error;
      }
    }
    this.acceptServerView(view);
    return view;
  }

  /** Re-reads the derived state from the service (reload safety). */
  async refresh(): Promise<SessionView> {
    const view = await this.api.getSession(this.uid, this.qaId);
    this.acceptServerView(view);
    return view;
  }

  private acceptServerView(view: SessionView): void {
    this.serverView = view;
    this.view = structuredClone(view);
    this.emit({ kind: 'view', view: this.view });
  }

  /** Applies one edit op optimistically and posts it in order. */
  apply(op: EditOpBody): Promise<void> {
    if (!this.view) throw new Error('no session open');
    echoOp(this.view, op, `draft_${++this.drawCounter}`);
    this.emit({ kind: 'view', view: this.view });
    this.pendingCount += 1;
    this.queue = this.queue.then(async () => {
      try {
        const view = await this.api.postEdit(this.uid, this.qaId, op);
        this.serverView = view;
        if (this.pendingCount === 1) {
          // Nothing else in flight: the server view is up to date.
          this.view = structuredClone(view);
          this.emit({ kind: 'view', view: this.view });
        }
      } catch (error) {
        const apiError = error instanceof ApiError
          ? error
          : new ApiError(0, 'network', String(error));
        // Roll back to the last acknowledged state, visibly.
        this.view = this.serverView ? structuredClone(this.serverView) : this.view;
        if (this.view) this.emit({ kind: 'view', view: this.view });
        if (apiError.status === 423) {
          this.leaseLost = true;
          this.emit({ kind: 'lease-lost', error: apiError });
        } else {
          this.emit({ kind: 'rejected', op, error: apiError });
        }
      } finally {
        this.pendingCount -= 1;
      }
    });
    return this.queue;
  }

  async finalize(retainIou?: number): Promise<FinalizedPayload> {
    const payload = await this.api.finalize(this.uid, this.qaId, retainIou);
    await this.refresh();
    this.emit({ kind: 'finalized', payload });
    return payload;
  }

  async heartbeat(): Promise<void> {
    try {
      await this.api.lease(this.uid, this.qaId, 'renew');
      this.leaseLost = false;
    } catch (error) {
      if (error instanceof ApiError && error.status === 423) {
        this.leaseLost = true;
        this.emit({ kind: 'lease-lost', error });
      }
    }
  }

  // -- derived helpers -------------------------------------------------------

  activeQa() {
    if (!this.view) return null;
    return this.view.qa.find((q) => q.qa_id === this.view!.active_qa) ?? null;
  }

  canFinalize(): boolean {
    const qa = this.activeQa();
    if (!this.view || !qa || this.view.state === 'finalized') return false;
    // Mirrors the server gate: a no-evidence marker stands on its own,
    // otherwise the QA must be verified and the evidence set non-empty.
    if (qa.no_evidence) return true;
    return qa.status === 'verified' && this.view.evidence.length > 0;
  }

  /** Proposal was degraded (e.g. unusable backend reply): show a banner. */
  proposalDegraded(): boolean {
    return Boolean(
      this.view &&
      this.view.state !== 'loaded' &&
      this.view.proposal_ids.length === 0 &&
      this.view.mode !== null &&
      this.view.regions.length === 0 &&
      this.view.evidence.length === 0,
    );
  }
}

/**
 * Local echo of one op over a view. Intentionally minimal: the server's
 * acknowledgement replaces the whole view, so this only needs to keep the
 * canvas honest for the in-flight moment.
 */
export function echoOp(view: SessionView, op: EditOpBody, draftId: string): void {
  const evidence = view.evidence;
  const region = (id: string | null | undefined) =>
    view.regions.find((r) => r.region_id === id && !r.deleted);

  switch (op.op) {
    case 'select_region': {
      const target = region(op.target_id);
      if (target && !evidence.includes(target.region_id)) evidence.push(target.region_id);
      break;
    }
    case 'deselect_region': {
      const index = evidence.indexOf(op.target_id ?? '');
      if (index >= 0) evidence.splice(index, 1);
      break;
    }
    case 'delete_region': {
      const target = region(op.target_id);
      if (target) {
        target.deleted = true;
        const index = evidence.indexOf(target.region_id);
        if (index >= 0) evidence.splice(index, 1);
      }
      break;
    }
    case 'draw_region': {
      const bbox = (op.payload?.bbox ?? [0, 0, 1, 1]) as BBox;
      view.regions.push({
        region_id: draftId,
        bbox,
        label: (op.payload?.label as string) ?? null,
        source: 'reviewer_added',
        export_source: 'added',
        edited: false,
        deleted: false,
        selected_mark: false,
      });
      evidence.push(draftId);
      break;
    }
    case 'resize_region':
    case 'move_region': {
      const target = region(op.target_id);
      if (target && op.payload?.bbox) {
        target.bbox = op.payload.bbox as BBox;
        target.edited = true;
      }
      break;
    }
    case 'verify_qa': {
      const qa = view.qa.find((q) => q.qa_id === (op.target_id ?? view.active_qa));
      if (qa) qa.status = 'verified';
      if (view.state !== 'finalized') view.state = 'in_review';
      break;
    }
    case 'flag_qa': {
      const qa = view.qa.find((q) => q.qa_id === (op.target_id ?? view.active_qa));
      if (qa) {
        qa.status = 'flagged';
        qa.note = (op.payload?.note as string) ?? null;
      }
      view.state = 'flagged';
      break;
    }
    case 'set_no_evidence': {
      const qa = view.qa.find((q) => q.qa_id === (op.target_id ?? view.active_qa));
      if (qa) qa.no_evidence = true;
      break;
    }
    default:
      break;
  }
  if (op.op !== 'flag_qa' && view.state === 'proposed') {
    view.state = 'in_review';
  }
  view.log_length += 1;
}
