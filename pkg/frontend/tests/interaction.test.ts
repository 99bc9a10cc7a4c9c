import { describe, expect, it } from 'vitest';

import {
  clampBBox,
  DragTracker,
  gestureToOp,
  hitTest,
  slideInside,
} from '../src/interaction';
import type { RegionView } from '../src/types';

function region(id: string, bbox: [number, number, number, number]): RegionView {
  return {
    region_id: id,
    bbox,
    label: null,
    source: 'ground_truth',
    export_source: 'ground_truth',
    edited: false,
    deleted: false,
    selected_mark: false,
  };
}

describe('hitTest', () => {
  const regions = [region('a_1', [10, 10, 40, 40]), region('a_2', [30, 30, 40, 40])];

  it('topmost region wins on overlap', () => {
    expect(hitTest(regions, { x: 35, y: 35 }, null)).toEqual({ type: 'region', id: 'a_2' });
  });

  it('misses empty space', () => {
    expect(hitTest(regions, { x: 200, y: 200 }, null)).toEqual({ type: 'empty' });
  });

  it('selected region handles take priority', () => {
    const hit = hitTest(regions, { x: 10, y: 10 }, 'a_1');
    expect(hit).toEqual({ type: 'handle', id: 'a_1', handle: 'nw' });
  });

  it('deleted regions are not hit', () => {
    const gone = [{ ...region('a_1', [10, 10, 40, 40]), deleted: true }];
    expect(hitTest(gone, { x: 20, y: 20 }, null)).toEqual({ type: 'empty' });
  });
});

describe('clampBBox', () => {
  it('normalizes negative extents', () => {
    expect(clampBBox([50, 50, -20, -10], null)).toEqual([30, 40, 20, 10]);
  });

  it('clips to image bounds', () => {
    expect(clampBBox([90, 90, 30, 30], [100, 100])).toEqual([90, 90, 10, 10]);
    expect(clampBBox([-5, -5, 20, 20], [100, 100])).toEqual([0, 0, 15, 15]);
  });
});

describe('slideInside', () => {
  it('keeps size and slides moves back into the image', () => {
    expect(slideInside([95, 95, 20, 20], [100, 100])).toEqual([80, 80, 20, 20]);
    expect(slideInside([-10, 5, 20, 20], [100, 100])).toEqual([0, 5, 20, 20]);
  });

  it('falls back to clipping when the box exceeds the image', () => {
    expect(slideInside([-10, -10, 200, 50], [100, 100])).toEqual([0, 0, 100, 40]);
  });
});

describe('DragTracker', () => {
  it('draw drag produces a draw gesture with the dragged bbox', () => {
    const tracker = new DragTracker([200, 200]);
    tracker.begin({ x: 10, y: 20 }, 'draw', [], null);
    tracker.move({ x: 60, y: 80 });
    const gesture = tracker.end({ x: 60, y: 80 });
    expect(gesture).toEqual({ kind: 'draw', bbox: [10, 20, 50, 60] });
  });

  it('tiny drag is a click, not a draw', () => {
    const tracker = new DragTracker(null);
    tracker.begin({ x: 10, y: 10 }, 'draw', [], null);
    const gesture = tracker.end({ x: 11, y: 11 });
    expect(gesture).toEqual({ kind: 'click', id: null });
  });

  it('dragging a region body moves it', () => {
    const regions = [region('a_1', [10, 10, 40, 40])];
    const tracker = new DragTracker([500, 500]);
    tracker.begin({ x: 20, y: 20 }, 'select', regions, null);
    const gesture = tracker.end({ x: 50, y: 25 });
    expect(gesture).toEqual({ kind: 'move', id: 'a_1', bbox: [40, 15, 40, 40] });
  });

  it('dragging a handle resizes', () => {
    const regions = [region('a_1', [10, 10, 40, 40])];
    const tracker = new DragTracker([500, 500]);
    tracker.begin({ x: 50, y: 50 }, 'select', regions, 'a_1'); // se handle
    const gesture = tracker.end({ x: 80, y: 70 });
    expect(gesture).toEqual({ kind: 'resize', id: 'a_1', bbox: [10, 10, 70, 60] });
  });

  it('click on a region selects without emitting an op', () => {
    const regions = [region('a_1', [10, 10, 40, 40])];
    const tracker = new DragTracker(null);
    tracker.begin({ x: 20, y: 20 }, 'select', regions, null);
    const gesture = tracker.end({ x: 21, y: 20 });
    expect(gesture).toEqual({ kind: 'click', id: 'a_1' });
    expect(gestureToOp(gesture)).toBeNull();
  });

  it('preview tracks the in-flight geometry', () => {
    const tracker = new DragTracker(null);
    tracker.begin({ x: 0, y: 0 }, 'draw', [], null);
    tracker.move({ x: 30, y: 40 });
    expect(tracker.preview()).toEqual({ id: null, bbox: [0, 0, 30, 40] });
  });
});

describe('gestureToOp', () => {
  it('one gesture maps to exactly one op', () => {
    expect(gestureToOp({ kind: 'draw', bbox: [1, 2, 3, 4] })).toEqual({
      op: 'draw_region',
      payload: { bbox: [1, 2, 3, 4] },
    });
    expect(gestureToOp({ kind: 'move', id: 'a_1', bbox: [1, 2, 3, 4] })).toEqual({
      op: 'move_region',
      target_id: 'a_1',
      payload: { bbox: [1, 2, 3, 4] },
    });
    expect(gestureToOp({ kind: 'resize', id: 'a_1', bbox: [1, 2, 3, 4] })).toEqual({
      op: 'resize_region',
      target_id: 'a_1',
      payload: { bbox: [1, 2, 3, 4] },
    });
    expect(gestureToOp({ kind: 'none' })).toBeNull();
  });
});
