import type { BBox, EditOpBody, RegionView } from './types';

// Pointer gestures over the canvas, kept DOM-free so the state machine is
// unit-testable. Coordinates here are image-space pixels; the canvas layer
// converts from screen space before calling in.

export type Tool = 'select' | 'draw';

export interface Point {
  x: number;
  y: number;
}

export type Handle = 'nw' | 'ne' | 'sw' | 'se';

export type HitResult =
  | { type: 'handle'; id: string; handle: Handle }
  | { type: 'region'; id: string }
  | { type: 'empty' };

export type Gesture =
  | { kind: 'click'; id: string | null }
  | { kind: 'draw'; bbox: BBox }
  | { kind: 'move'; id: string; bbox: BBox }
  | { kind: 'resize'; id: string; bbox: BBox }
  | { kind: 'none' };

const MIN_DRAW_PX = 3;

export function handlePoints(bbox: BBox): Array<{ handle: Handle; x: number; y: number }> {
  const [x, y, w, h] = bbox;
  return [
    { handle: 'nw', x, y },
    { handle: 'ne', x: x + w, y },
    { handle: 'sw', x, y: y + h },
    { handle: 'se', x: x + w, y: y + h },
  ];
}

/** Topmost hit wins; handles of the selected region take priority. */
export function hitTest(
  regions: RegionView[],
  point: Point,
  selectedId: string | null,
  handleRadius = 6,
): HitResult {
  if (selectedId) {
    const selected = regions.find((r) => r.region_id === selectedId && !r.deleted);
    if (selected) {
      for (const { handle, x, y } of handlePoints(selected.bbox)) {
        if (Math.abs(point.x - x) <= handleRadius && Math.abs(point.y - y) <= handleRadius) {
          return { type: 'handle', id: selected.region_id, handle };
        }
      }
    }
  }
  for (let i = regions.length - 1; i >= 0; i--) {
    const r = regions[i];
    if (r.deleted) continue;
    const [x, y, w, h] = r.bbox;
    if (point.x >= x && point.x <= x + w && point.y >= y && point.y <= y + h) {
      return { type: 'region', id: r.region_id };
    }
  }
  return { type: 'empty' };
}

function normalized(bbox: BBox): BBox {
  let [x, y, w, h] = bbox;
  if (w < 0) {
    x += w;
    w = -w;
  }
  if (h < 0) {
    y += h;
    h = -h;
  }
  return [x, y, w, h];
}

/** Intersection with the image; the server rejects out-of-bounds geometry. */
export function clampBBox(bbox: BBox, imageSize: [number, number] | null): BBox {
  let [x, y, w, h] = normalized(bbox);
  if (!imageSize) {
    return [Math.max(0, x), Math.max(0, y), w, h];
  }
  const [iw, ih] = imageSize;
  const x1 = Math.max(0, x);
  const y1 = Math.max(0, y);
  const x2 = Math.min(iw, x + w);
  const y2 = Math.min(ih, y + h);
  return [x1, y1, Math.max(0, x2 - x1), Math.max(0, y2 - y1)];
}

/** Keeps the box size and slides it back inside the image (for moves). */
export function slideInside(bbox: BBox, imageSize: [number, number] | null): BBox {
  const [x, y, w, h] = normalized(bbox);
  if (!imageSize) {
    return [Math.max(0, x), Math.max(0, y), w, h];
  }
  const [iw, ih] = imageSize;
  if (w > iw || h > ih) {
    return clampBBox([x, y, w, h], imageSize);
  }
  return [Math.min(Math.max(0, x), iw - w), Math.min(Math.max(0, y), ih - h), w, h];
}

function resizedBBox(original: BBox, handle: Handle, to: Point): BBox {
  const [x, y, w, h] = original;
  const x2 = x + w;
  const y2 = y + h;
  switch (handle) {
    case 'nw':
      return [to.x, to.y, x2 - to.x, y2 - to.y];
    case 'ne':
      return [x, to.y, to.x - x, y2 - to.y];
    case 'sw':
      return [to.x, y, x2 - to.x, to.y - y];
    case 'se':
      return [x, y, to.x - x, to.y - y];
  }
}

interface DragState {
  start: Point;
  mode:
    | { kind: 'draw' }
    | { kind: 'maybe-move'; id: string; original: BBox }
    | { kind: 'resize'; id: string; handle: Handle; original: BBox };
}

/**
 * One pointer drag = at most one gesture. begin/move/end mirror
 * pointerdown/pointermove/pointerup; end() returns what happened.
 */
export class DragTracker {
  private state: DragState | null = null;
  private current: Point | null = null;
  private imageSize: [number, number] | null;

  constructor(imageSize: [number, number] | null) {
    this.imageSize = imageSize;
  }

  begin(point: Point, tool: Tool, regions: RegionView[], selectedId: string | null): void {
    const hit = hitTest(regions, point, selectedId);
    if (tool === 'draw') {
      this.state = { start: point, mode: { kind: 'draw' } };
    } else if (hit.type === 'handle') {
      const region = regions.find((r) => r.region_id === hit.id)!;
      this.state = {
        start: point,
        mode: { kind: 'resize', id: hit.id, handle: hit.handle, original: [...region.bbox] },
      };
    } else if (hit.type === 'region') {
      const region = regions.find((r) => r.region_id === hit.id)!;
      this.state = {
        start: point,
        mode: { kind: 'maybe-move', id: hit.id, original: [...region.bbox] },
      };
    } else {
      this.state = null;
      this.current = null;
      return;
    }
    this.current = point;
  }

  move(point: Point): void {
    if (this.state) this.current = point;
  }

  /** Live geometry for rendering while the drag is in progress. */
  preview(): { id: string | null; bbox: BBox } | null {
    if (!this.state || !this.current) return null;
    const gesture = this.resolve();
    if (gesture.kind === 'draw') return { id: null, bbox: gesture.bbox };
    if (gesture.kind === 'move' || gesture.kind === 'resize') {
      return { id: gesture.id, bbox: gesture.bbox };
    }
    return null;
  }

  end(point: Point): Gesture {
    this.current = point;
    const gesture = this.resolve();
    this.state = null;
    this.current = null;
    return gesture;
  }

  cancel(): void {
    this.state = null;
    this.current = null;
  }

  get active(): boolean {
    return this.state !== null;
  }

  private resolve(): Gesture {
    if (!this.state || !this.current) return { kind: 'none' };
    const { start, mode } = this.state;
    const dx = this.current.x - start.x;
    const dy = this.current.y - start.y;
    const moved = Math.abs(dx) >= MIN_DRAW_PX || Math.abs(dy) >= MIN_DRAW_PX;

    if (mode.kind === 'draw') {
      if (!moved) return { kind: 'click', id: null };
      const bbox = clampBBox(
        [Math.min(start.x, this.current.x), Math.min(start.y, this.current.y),
         Math.abs(dx), Math.abs(dy)],
        this.imageSize,
      );
      return bbox[2] > 0 && bbox[3] > 0 ? { kind: 'draw', bbox } : { kind: 'none' };
    }
    if (mode.kind === 'maybe-move') {
      if (!moved) return { kind: 'click', id: mode.id };
      const [x, y, w, h] = mode.original;
      return {
        kind: 'move',
        id: mode.id,
        bbox: slideInside([x + dx, y + dy, w, h], this.imageSize),
      };
    }
    const bbox = clampBBox(resizedBBox(mode.original, mode.handle, this.current), this.imageSize);
    if (bbox[2] <= 0 || bbox[3] <= 0) return { kind: 'none' };
    return { kind: 'resize', id: mode.id, bbox };
  }
}

/** Exactly one edit op per completed gesture; clicks select locally only. */
export function gestureToOp(gesture: Gesture): EditOpBody | null {
  switch (gesture.kind) {
    case 'draw':
      return { op: 'draw_region', payload: { bbox: gesture.bbox } };
    case 'move':
      return { op: 'move_region', target_id: gesture.id, payload: { bbox: gesture.bbox } };
    case 'resize':
      return { op: 'resize_region', target_id: gesture.id, payload: { bbox: gesture.bbox } };
    default:
      return null;
  }
}
