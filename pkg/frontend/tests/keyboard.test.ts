import { describe, expect, it } from 'vitest';

import { actionForKey, nextRegionId } from '../src/keyboard';
import type { RegionView, SessionView } from '../src/types';

function region(id: string, inEvidence = false): RegionView {
  return {
    region_id: id,
    bbox: [0, 0, 10, 10],
    label: null,
    source: 'ground_truth',
    export_source: inEvidence ? 'selected' : 'ground_truth',
    edited: false,
    deleted: false,
    selected_mark: inEvidence,
  };
}

function view(overrides: Partial<SessionView> = {}): SessionView {
  return {
    session_key: 'u__q_0',
    state: 'in_review',
    active_qa: 'q_0',
    mode: 'selection',
    qa: [{
      qa_id: 'q_0', question_text: 'q?', answer_text: 'a', choices: [],
      status: 'unverified', note: null, no_evidence: false,
    }],
    regions: [region('a_1', true), region('a_2', true), region('a_3')],
    evidence: ['a_1'],
    proposal_ids: ['a_1', 'a_2'],
    log_length: 0,
    finalized: null,
    ...overrides,
  };
}

describe('actionForKey', () => {
  it('accept-all re-selects deselected proposals only', () => {
    const action = actionForKey('a', view(), null);
    expect(action).toEqual({
      kind: 'ops',
      ops: [{ op: 'select_region', target_id: 'a_2' }],
    });
  });

  it('accept-all skips deleted proposals', () => {
    const v = view();
    v.regions[1].deleted = true;
    const action = actionForKey('a', v, null);
    expect(action).toEqual({ kind: 'ops', ops: [] });
  });

  it('delete requires a selection', () => {
    expect(actionForKey('Delete', view(), null)).toEqual({ kind: 'none' });
    expect(actionForKey('Delete', view(), 'a_1')).toEqual({
      kind: 'ops',
      ops: [{ op: 'delete_region', target_id: 'a_1' }],
    });
  });

  it('draw mode toggle and next-region are local actions', () => {
    expect(actionForKey('d', view(), null)).toEqual({ kind: 'toggle-draw-mode' });
    expect(actionForKey('n', view(), null)).toEqual({ kind: 'select-next' });
  });

  it('everything is inert once finalized', () => {
    expect(actionForKey('a', view({ state: 'finalized' }), null)).toEqual({ kind: 'none' });
    expect(actionForKey('Delete', view({ state: 'finalized' }), 'a_1')).toEqual({ kind: 'none' });
  });
});

describe('nextRegionId', () => {
  it('cycles through live regions', () => {
    const v = view();
    expect(nextRegionId(v, null)).toBe('a_1');
    expect(nextRegionId(v, 'a_1')).toBe('a_2');
    expect(nextRegionId(v, 'a_3')).toBe('a_1');
  });

  it('skips deleted regions', () => {
    const v = view();
    v.regions[1].deleted = true;
    expect(nextRegionId(v, 'a_1')).toBe('a_3');
  });

  it('empty view yields null', () => {
    expect(nextRegionId(view({ regions: [] }), null)).toBeNull();
  });
});
