import type { EditOpBody, SessionView } from './types';

// Keyboard shortcuts resolve against the current view into zero or more
// actions; the app layer dispatches ops and local UI changes.

export type KeyAction =
  | { kind: 'ops'; ops: EditOpBody[] }
  | { kind: 'select-next' }
  | { kind: 'toggle-draw-mode' }
  | { kind: 'verify' }
  | { kind: 'flag' }
  | { kind: 'none' };

export const SHORTCUTS: Record<string, string> = {
  a: 'accept all proposals',
  n: 'next region',
  Delete: 'delete selected region',
  Backspace: 'delete selected region',
  d: 'toggle draw mode',
  v: 'verify QA',
  f: 'flag QA (asks for a note)',
  Escape: 'cancel drag / leave draw mode',
};

export function actionForKey(
  key: string,
  view: SessionView | null,
  selectedId: string | null,
): KeyAction {
  if (!view || view.state === 'finalized') return { kind: 'none' };
  switch (key) {
    case 'a': {
      // Re-select every proposal the reviewer deselected; one op each.
      const missing = view.proposal_ids.filter((id) => {
        const region = view.regions.find((r) => r.region_id === id);
        return region && !region.deleted && !view.evidence.includes(id);
      });
      return {
        kind: 'ops',
        ops: missing.map((id) => ({ op: 'select_region', target_id: id })),
      };
    }
    case 'n':
      return { kind: 'select-next' };
    case 'Delete':
    case 'Backspace':
      if (!selectedId) return { kind: 'none' };
      return { kind: 'ops', ops: [{ op: 'delete_region', target_id: selectedId }] };
    case 'd':
      return { kind: 'toggle-draw-mode' };
    case 'v':
      return { kind: 'verify' };
    case 'f':
      return { kind: 'flag' };
    default:
      return { kind: 'none' };
  }
}

export function nextRegionId(view: SessionView, selectedId: string | null): string | null {
  const live = view.regions.filter((r) => !r.deleted).map((r) => r.region_id);
  if (live.length === 0) return null;
  const index = selectedId ? live.indexOf(selectedId) : -1;
  return live[(index + 1) % live.length];
}
