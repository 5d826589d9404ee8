/** Split passage text into segments annotated with the entity spans covering
 * them. Overlapping spans simply stack: a segment lists every entity id that
 * covers it, and the view renders stacked badges. Pure string computation so
 * it is testable without a DOM. */

export interface HighlightSpan {
  start: number;
  end: number;
  entityId: string;
}

export interface Segment {
  text: string;
  entityIds: string[];
}

export function segmentText(text: string, spans: HighlightSpan[]): Segment[] {
  const boundaries = new Set<number>([0, text.length]);
  const clipped = spans
    .map((span) => ({
      ...span,
      start: Math.max(0, Math.min(span.start, text.length)),
      end: Math.max(0, Math.min(span.end, text.length)),
    }))
    .filter((span) => span.start < span.end);
  for (const span of clipped) {
    boundaries.add(span.start);
    boundaries.add(span.end);
  }
  const points = [...boundaries].sort((a, b) => a - b);
  const segments: Segment[] = [];
  for (let i = 0; i < points.length - 1; i += 1) {
    const start = points[i]!;
    const end = points[i + 1]!;
    const covering = clipped
      .filter((span) => span.start <= start && end <= span.end)
      .map((span) => span.entityId);
    segments.push({ text: text.slice(start, end), entityIds: [...new Set(covering)] });
  }
  return segments;
}

/** Concatenating segment texts must reproduce the passage byte for byte. */
export function reassemble(segments: Segment[]): string {
  return segments.map((segment) => segment.text).join("");
}
