import { colorFor } from './colors';
import type { Point } from './interaction';
import type { BBox, SessionView } from './types';

// Canvas rendering and screen<->image coordinate transforms. All review
// logic lives elsewhere; this layer only draws the current view.

export interface Viewport {
  zoom: number;
  panX: number;
  panY: number;
}

export function screenToImage(viewport: Viewport, sx: number, sy: number): Point {
  return { x: (sx - viewport.panX) / viewport.zoom, y: (sy - viewport.panY) / viewport.zoom };
}

export function fitViewport(
  imageSize: [number, number],
  canvasWidth: number,
  canvasHeight: number,
): Viewport {
  const [iw, ih] = imageSize;
  const zoom = Math.min(canvasWidth / iw, canvasHeight / ih) * 0.95 || 1;
  return {
    zoom,
    panX: (canvasWidth - iw * zoom) / 2,
    panY: (canvasHeight - ih * zoom) / 2,
  };
}

export function zoomAt(viewport: Viewport, sx: number, sy: number, factor: number): Viewport {
  const zoom = Math.min(16, Math.max(0.05, viewport.zoom * factor));
  const scale = zoom / viewport.zoom;
  return {
    zoom,
    panX: sx - (sx - viewport.panX) * scale,
    panY: sy - (sy - viewport.panY) * scale,
  };
}

export interface RenderExtras {
  selectedId: string | null;
  preview: { id: string | null; bbox: BBox } | null;
  image: CanvasImageSource | null;
  imageSize: [number, number] | null;
}

export function render(
  ctx: CanvasRenderingContext2D,
  view: SessionView,
  viewport: Viewport,
  extras: RenderExtras,
): void {
  const { canvas } = ctx;
  ctx.setTransform(1, 0, 0, 1, 0, 0);
  ctx.fillStyle = '#1c1f26';
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.setTransform(viewport.zoom, 0, 0, viewport.zoom, viewport.panX, viewport.panY);

  if (extras.image && extras.imageSize) {
    ctx.drawImage(extras.image, 0, 0, extras.imageSize[0], extras.imageSize[1]);
  } else if (extras.imageSize) {
    ctx.fillStyle = '#2a2e38';
    ctx.fillRect(0, 0, extras.imageSize[0], extras.imageSize[1]);
  }

  const evidence = new Set(view.evidence);
  for (const region of view.regions) {
    if (region.deleted) continue;
    const overridden = extras.preview && extras.preview.id === region.region_id;
    const [x, y, w, h] = overridden ? extras.preview!.bbox : region.bbox;
    const color = colorFor(region.export_source);
    const inEvidence = evidence.has(region.region_id);
    ctx.lineWidth = 2 / viewport.zoom;
    ctx.strokeStyle = color;
    ctx.setLineDash(inEvidence ? [] : [6 / viewport.zoom, 4 / viewport.zoom]);
    ctx.globalAlpha = inEvidence ? 1.0 : 0.55;
    ctx.strokeRect(x, y, w, h);
    if (inEvidence) {
      ctx.globalAlpha = 0.12;
      ctx.fillStyle = color;
      ctx.fillRect(x, y, w, h);
    }
    ctx.globalAlpha = 1.0;
    if (region.region_id === extras.selectedId) {
      ctx.setLineDash([]);
      ctx.strokeStyle = '#ffffff';
      ctx.lineWidth = 1 / viewport.zoom;
      ctx.strokeRect(x - 2 / viewport.zoom, y - 2 / viewport.zoom,
                     w + 4 / viewport.zoom, h + 4 / viewport.zoom);
      const size = 8 / viewport.zoom;
      ctx.fillStyle = '#ffffff';
      for (const [hx, hy] of [[x, y], [x + w, y], [x, y + h], [x + w, y + h]]) {
        ctx.fillRect(hx - size / 2, hy - size / 2, size, size);
      }
    }
    if (region.label) {
      ctx.setLineDash([]);
      ctx.fillStyle = color;
      ctx.font = `${12 / viewport.zoom}px sans-serif`;
      ctx.fillText(region.label, x, y - 4 / viewport.zoom);
    }
  }

  if (extras.preview && extras.preview.id === null) {
    const [x, y, w, h] = extras.preview.bbox;
    ctx.setLineDash([4 / viewport.zoom, 3 / viewport.zoom]);
    ctx.strokeStyle = colorFor('added');
    ctx.lineWidth = 2 / viewport.zoom;
    ctx.strokeRect(x, y, w, h);
  }
  ctx.setLineDash([]);
}
