/** Pure timeline geometry: turning a fetched timeline document into rows of
 * positioned bars.  Kept free of DOM so the invariants (every span in the
 * document yields exactly one row; filters are cumulative by level) are
 * directly testable.
 */

import type { TimelineDoc, TimelineNode } from "./types";
import { LEVEL_FRAMEWORK, LEVEL_SYSTEM } from "./types";

export interface SpanRow {
  node: TimelineNode;
  depth: number;
}

/** Highest span level shown for each filter setting; coarser levels always
 * stay visible (zooming in adds detail, it never hides the pipeline). */
const MAX_LEVEL: Record<string, number> = {
  model: 1,
  framework: 2,
  system: 3,
  all: Infinity,
};

/** Depth-first flattening in document order, one row per visible span. */
export function flattenTimeline(doc: TimelineDoc, levelFilter = "all"): SpanRow[] {
  const maxLevel = MAX_LEVEL[levelFilter] ?? Infinity;
  const rows: SpanRow[] = [];
  const walk = (node: TimelineNode, depth: number) => {
    if (node.level <= maxLevel) rows.push({ node, depth });
    for (const child of node.children) walk(child, depth + 1);
  };
  for (const root of doc.roots) walk(root, 0);
  return rows;
}

export function countSpans(doc: TimelineDoc): number {
  let count = 0;
  const walk = (node: TimelineNode) => {
    count += 1;
    node.children.forEach(walk);
  };
  doc.roots.forEach(walk);
  return count;
}

export function timelineBounds(doc: TimelineDoc): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  const walk = (node: TimelineNode) => {
    lo = Math.min(lo, node.start_ns);
    hi = Math.max(hi, node.end_ns);
    node.children.forEach(walk);
  };
  doc.roots.forEach(walk);
  if (!Number.isFinite(lo)) return [0, 1];
  return [lo, Math.max(hi, lo + 1)];
}

export interface BarGeometry {
  /** Left edge and width as fractions of the viewport, both in [0, 1]. */
  left: number;
  width: number;
  /** True when no part of the span lies inside the zoom window. */
  outside: boolean;
}

/** Projects a span interval onto a zoom window.  Bars are clipped to the
 * window; fully-outside spans are flagged so callers can dim or skip them
 * while keeping one row per span. */
export function barGeometry(
  node: Pick<TimelineNode, "start_ns" | "end_ns">,
  zoom: [number, number],
): BarGeometry {
  const [z0, z1] = zoom;
  const width = z1 - z0;
  const start = Math.max(node.start_ns, z0);
  const end = Math.min(node.end_ns, z1);
  if (end <= start && (node.end_ns <= z0 || node.start_ns >= z1)) {
    return { left: 0, width: 0, outside: true };
  }
  const clippedStart = Math.min(Math.max(start, z0), z1);
  const clippedEnd = Math.min(Math.max(end, z0), z1);
  return {
    left: (clippedStart - z0) / width,
    width: Math.max((clippedEnd - clippedStart) / width, 0),
    outside: false,
  };
}

export interface KernelAttribution {
  kernels: TimelineNode[];
  dominant: TimelineNode | null;
}

/** The system-level spans under a framework span, longest first; the
 * dominant kernel is the longest one (ties broken by name for stability). */
export function correlatedKernels(layer: TimelineNode): KernelAttribution {
  const kernels = layer.children
    .filter((child) => child.level === LEVEL_SYSTEM)
    .slice()
    .sort((a, b) => {
      const byDuration = b.end_ns - b.start_ns - (a.end_ns - a.start_ns);
      return byDuration !== 0 ? byDuration : a.name.localeCompare(b.name);
    });
  return { kernels, dominant: kernels[0] ?? null };
}

export function isExpandableLayer(node: TimelineNode): boolean {
  return (
    node.level === LEVEL_FRAMEWORK &&
    node.children.some((child) => child.level === LEVEL_SYSTEM)
  );
}

const LEVEL_NAMES: Record<number, string> = {
  1: "model",
  2: "framework",
  3: "system",
};

export function levelName(level: number): string {
  return LEVEL_NAMES[level] ?? `level-${level}`;
}
