import { ApiError, ReviewApi } from './api';
import { fitViewport, render, screenToImage, zoomAt, Viewport } from './canvas';
import { SOURCE_LEGEND } from './colors';
import { DragTracker, gestureToOp, Tool } from './interaction';
import { actionForKey, nextRegionId, SHORTCUTS } from './keyboard';
import { SessionStore } from './store';
import type { RecordSummary } from './types';

const HEARTBEAT_MS = 60_000;

export class App {
  api: ReviewApi;
  store: SessionStore;

  private canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private viewport: Viewport = { zoom: 1, panX: 0, panY: 0 };
  private tool: Tool = 'select';
  private selectedId: string | null = null;
  private drag: DragTracker | null = null;
  private image: HTMLImageElement | null = null;
  private imageSize: [number, number] | null = null;
  private records: RecordSummary[] = [];
  private heartbeatTimer: number | null = null;
  private panning: { sx: number; sy: number; panX: number; panY: number } | null = null;

  constructor(root: Document) {
    const reviewer = localStorage.getItem('reviewer-id') ?? `reviewer_${Date.now() % 10000}`;
    localStorage.setItem('reviewer-id', reviewer);
    this.api = new ReviewApi('', reviewer);
    this.store = new SessionStore(this.api);
    this.canvas = root.getElementById('canvas') as HTMLCanvasElement;
    this.ctx = this.canvas.getContext('2d')!;
    this.store.subscribe((event) => {
      if (event.kind === 'view') this.redraw();
      if (event.kind === 'rejected') {
        this.banner(`edit rejected: ${event.error.message}`, 'warn');
        this.redraw();
      }
      if (event.kind === 'lease-lost') {
        this.banner('lease lost: another reviewer holds this session', 'error');
        this.redraw();
      }
      if (event.kind === 'finalized') {
        this.banner(`finalized: ${JSON.stringify(event.payload.counts)}`, 'ok');
        this.redraw();
      }
    });
  }

  async start(): Promise<void> {
    this.bindToolbar();
    this.bindCanvas();
    this.bindKeyboard();
    this.renderLegend();
    this.records = await this.api.listRecords();
    this.renderRecordList();
    if (this.records.length > 0) {
      const first = this.records[0];
      await this.openSession(first.image_uid, first.qa_ids[0] ?? 'auto');
    }
  }

  // -- session lifecycle -----------------------------------------------------

  async openSession(uid: string, qaId: string): Promise<void> {
    try {
      await this.api.lease(uid, qaId, 'acquire');
    } catch (error) {
      if (error instanceof ApiError && error.status === 423) {
        this.banner(`session ${uid}/${qaId} leased by someone else`, 'error');
        return;
      }
    }
    await this.store.open(uid, qaId);
    this.selectedId = null;
    const record = this.records.find((r) => r.image_uid === uid);
    this.imageSize = record?.image_size ?? null;
    this.loadImage(uid);
    if (this.imageSize) {
      this.viewport = fitViewport(this.imageSize, this.canvas.width, this.canvas.height);
    } else {
      this.viewport = { zoom: 1, panX: 20, panY: 20 };
    }
    if (this.store.proposalDegraded()) {
      this.banner('backend proposal degraded or empty: review manually', 'warn');
    }
    if (this.heartbeatTimer !== null) clearInterval(this.heartbeatTimer);
    this.heartbeatTimer = setInterval(() => void this.store.heartbeat(), HEARTBEAT_MS) as
      unknown as number;
    this.renderQaPanel();
    this.redraw();
  }

  private loadImage(uid: string): void {
    this.image = null;
    const img = new Image();
    img.onload = () => {
      this.image = img;
      if (!this.imageSize) {
        this.imageSize = [img.naturalWidth, img.naturalHeight];
        this.viewport = fitViewport(this.imageSize, this.canvas.width, this.canvas.height);
      }
      this.redraw();
    };
    img.onerror = () => {
      // Records whose image files are absent still render as wireframes.
      this.redraw();
    };
    img.src = this.api.imageUrl(uid);
  }

  // -- DOM wiring --------------------------------------------------------------

  private bindToolbar(): void {
    const drawButton = document.getElementById('tool-draw')!;
    drawButton.addEventListener('click', () => this.setTool(this.tool === 'draw' ? 'select' : 'draw'));
    document.getElementById('verify')!.addEventListener('click', () => this.verify());
    document.getElementById('flag')!.addEventListener('click', () => this.flag());
    document.getElementById('no-evidence')!.addEventListener('click', () => {
      void this.store.apply({ op: 'set_no_evidence', target_id: this.store.view?.active_qa });
      this.renderQaPanel();
    });
    document.getElementById('finalize')!.addEventListener('click', () => void this.finalize());
  }

  private bindCanvas(): void {
    this.canvas.addEventListener('pointerdown', (event) => {
      if (!this.store.view) return;
      if (event.button === 1 || event.shiftKey) {
        this.panning = { sx: event.offsetX, sy: event.offsetY,
                         panX: this.viewport.panX, panY: this.viewport.panY };
        return;
      }
      const point = screenToImage(this.viewport, event.offsetX, event.offsetY);
      this.drag = new DragTracker(this.imageSize);
      this.drag.begin(point, this.tool, this.liveRegions(), this.selectedId);
      this.canvas.setPointerCapture(event.pointerId);
    });
    this.canvas.addEventListener('pointermove', (event) => {
      if (this.panning) {
        this.viewport.panX = this.panning.panX + (event.offsetX - this.panning.sx);
        this.viewport.panY = this.panning.panY + (event.offsetY - this.panning.sy);
        this.redraw();
        return;
      }
      if (this.drag?.active) {
        this.drag.move(screenToImage(this.viewport, event.offsetX, event.offsetY));
        this.redraw();
      }
    });
    this.canvas.addEventListener('pointerup', (event) => {
      if (this.panning) {
        this.panning = null;
        return;
      }
      if (!this.drag) return;
      const point = screenToImage(this.viewport, event.offsetX, event.offsetY);
      const gesture = this.drag.end(point);
      this.drag = null;
      if (gesture.kind === 'click') {
        if (gesture.id && this.tool === 'select') {
          const inEvidence = this.store.view!.evidence.includes(gesture.id);
          if (this.selectedId === gesture.id) {
            // Second click on the highlighted region toggles its membership.
            void this.store.apply({
              op: inEvidence ? 'deselect_region' : 'select_region',
              target_id: gesture.id,
            });
          }
          this.selectedId = gesture.id;
        } else {
          this.selectedId = null;
        }
      } else {
        const op = gestureToOp(gesture);
        if (op) void this.store.apply(op);
        if (gesture.kind === 'draw') this.setTool('select');
      }
      this.redraw();
    });
    this.canvas.addEventListener('wheel', (event) => {
      event.preventDefault();
      const factor = event.deltaY < 0 ? 1.15 : 1 / 1.15;
      this.viewport = zoomAt(this.viewport, event.offsetX, event.offsetY, factor);
      this.redraw();
    }, { passive: false });
  }

  private bindKeyboard(): void {
    document.addEventListener('keydown', (event) => {
      if ((event.target as HTMLElement)?.tagName === 'INPUT') return;
      if (event.key === 'Escape') {
        this.drag?.cancel();
        this.setTool('select');
        this.redraw();
        return;
      }
      const action = actionForKey(event.key, this.store.view, this.selectedId);
      switch (action.kind) {
        case 'ops':
          for (const op of action.ops) void this.store.apply(op);
          if (action.ops.some((op) => op.op === 'delete_region')) this.selectedId = null;
          break;
        case 'select-next':
          this.selectedId = this.store.view ? nextRegionId(this.store.view, this.selectedId)
                                            : null;
          this.redraw();
          break;
        case 'toggle-draw-mode':
          this.setTool(this.tool === 'draw' ? 'select' : 'draw');
          break;
        case 'verify':
          this.verify();
          break;
        case 'flag':
          this.flag();
          break;
        default:
          break;
      }
    });
  }

  // -- actions ---------------------------------------------------------------

  private verify(): void {
    const qa = this.store.view?.active_qa;
    if (qa) {
      void this.store.apply({ op: 'verify_qa', target_id: qa }).then(() => this.renderQaPanel());
    }
  }

  private flag(): void {
    const qa = this.store.view?.active_qa;
    if (!qa) return;
    const note = window.prompt('Arbitration note (required to flag):');
    if (!note || !note.trim()) return;
    void this.store
      .apply({ op: 'flag_qa', target_id: qa, payload: { note: note.trim() } })
      .then(() => this.renderQaPanel());
  }

  private async finalize(): Promise<void> {
    if (!this.store.canFinalize()) {
      this.banner('finalize blocked: verify the QA (or mark no-evidence) first', 'warn');
      return;
    }
    try {
      await this.store.finalize();
      this.renderQaPanel();
    } catch (error) {
      const message = error instanceof ApiError ? error.message : String(error);
      this.banner(`finalize failed: ${message}`, 'error');
    }
  }

  private setTool(tool: Tool): void {
    this.tool = tool;
    document.getElementById('tool-draw')!.classList.toggle('active', tool === 'draw');
    this.canvas.style.cursor = tool === 'draw' ? 'crosshair' : 'default';
  }

  // -- rendering ---------------------------------------------------------------

  private liveRegions() {
    return (this.store.view?.regions ?? []).filter((r) => !r.deleted);
  }

  private redraw(): void {
    if (!this.store.view) return;
    render(this.ctx, this.store.view, this.viewport, {
      selectedId: this.selectedId,
      preview: this.drag?.preview() ?? null,
      image: this.image,
      imageSize: this.imageSize,
    });
    this.renderStatus();
  }

  private renderStatus(): void {
    const view = this.store.view;
    if (!view) return;
    const badge = document.getElementById('state-badge')!;
    badge.textContent = view.state;
    badge.dataset.state = view.state;
    document.getElementById('pending')!.textContent =
      this.store.pending > 0 ? `${this.store.pending} pending` : '';
    const finalizeButton = document.getElementById('finalize') as HTMLButtonElement;
    finalizeButton.disabled = !this.store.canFinalize();
  }

  private renderRecordList(): void {
    const list = document.getElementById('record-list')!;
    list.innerHTML = '';
    for (const record of this.records) {
      const qaIds = record.qa_ids.length ? record.qa_ids : ['auto'];
      for (const qaId of qaIds) {
        const item = document.createElement('li');
        item.textContent = `${record.image_uid} / ${qaId} (${record.n_regions} boxes)`;
        item.addEventListener('click', () => void this.openSession(record.image_uid, qaId));
        list.appendChild(item);
      }
    }
  }

  private renderQaPanel(): void {
    const view = this.store.view;
    const panel = document.getElementById('qa-panel')!;
    if (!view) {
      panel.textContent = 'no session';
      return;
    }
    const qa = this.store.activeQa();
    panel.innerHTML = '';
    if (!qa) {
      panel.textContent = 'no QA item yet';
      return;
    }
    const question = document.createElement('p');
    question.className = 'question';
    question.textContent = qa.question_text;
    const answer = document.createElement('p');
    answer.className = 'answer';
    answer.textContent = `answer: ${qa.answer_text}`;
    const status = document.createElement('p');
    status.className = `qa-status ${qa.status}`;
    status.textContent = qa.status + (qa.no_evidence ? ' (no evidence required)' : '');
    panel.append(question, answer, status);
    if (qa.note) {
      const note = document.createElement('p');
      note.className = 'note';
      note.textContent = `note: ${qa.note}`;
      panel.append(note);
    }
    this.renderStatus();
  }

  private renderLegend(): void {
    const legend = document.getElementById('legend')!;
    legend.innerHTML = '';
    for (const { source, color } of SOURCE_LEGEND) {
      const entry = document.createElement('span');
      entry.className = 'legend-entry';
      const swatch = document.createElement('span');
      swatch.className = 'swatch';
      swatch.style.borderColor = color;
      entry.append(swatch, document.createTextNode(source));
      legend.appendChild(entry);
    }
    const help = document.getElementById('shortcuts')!;
    help.title = Object.entries(SHORTCUTS).map(([k, v]) => `${k}: ${v}`).join('\n');
  }

  private banner(message: string, level: 'ok' | 'warn' | 'error'): void {
    const element = document.getElementById('banner')!;
    element.textContent = message;
    element.className = `banner ${level}`;
    if (level === 'ok') {
      setTimeout(() => {
        if (element.textContent === message) element.className = 'banner hidden';
      }, 4000);
    }
  }
}
