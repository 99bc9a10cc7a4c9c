import type { SourceString } from './types';

// Must stay identical to the SVG export overlay legend.
export const SOURCE_COLORS: Record<SourceString, string> = {
  ground_truth: '#2e7d32',
  predicted: '#ef6c00',
  selected: '#1565c0',
  generated: '#6a1b9a',
  added: '#c62828',
};

export const SOURCE_LEGEND: Array<{ source: SourceString; color: string }> = (
  Object.keys(SOURCE_COLORS) as SourceString[]
).map((source) => ({ source, color: SOURCE_COLORS[source] }));

export function colorFor(source: string): string {
  return SOURCE_COLORS[source as SourceString] ?? '#555555';
}
