/** The single piece of mutable client state shared across pages.
 *
 * Everything else is either a DOM subtree owned by one page or a value
 * fetched on demand.  Tracked job ids survive reloads within the tab via
 * sessionStorage so the compare page can find recent work.
 */

export interface CatalogFilters {
  task: string;
  model: string;
  framework: string;
  agent: string;
}

export interface OpenTimeline {
  traceId: string;
  /** Full extent of the fetched timeline, nanoseconds. */
  bounds: [number, number];
  /** Visible window; always within bounds, always at least 1 ns wide. */
  zoom: [number, number];
  /** "model" | "framework" | "system" | "all" — cumulative, coarse→fine. */
  levelFilter: string;
}

const JOBS_KEY = "benchrig.activeJobs";

export class ViewState {
  filters: CatalogFilters = { task: "", model: "", framework: "", agent: "" };
  activeJobIds: string[] = [];
  openTimeline: OpenTimeline | null = null;

  constructor(private storage: Pick<Storage, "getItem" | "setItem"> | null = null) {
    if (this.storage) {
      try {
        const raw = this.storage.getItem(JOBS_KEY);
        if (raw) this.activeJobIds = JSON.parse(raw);
      } catch {
        this.activeJobIds = [];
      }
    }
  }

  trackJob(jobId: string): void {
    if (!jobId || this.activeJobIds.includes(jobId)) return;
    this.activeJobIds.push(jobId);
    this.storage?.setItem(JOBS_KEY, JSON.stringify(this.activeJobIds));
  }

  /** Replaces the open timeline; zoom starts at the full extent. */
  openTrace(traceId: string, startNs: number, endNs: number): OpenTimeline {
    const bounds: [number, number] = [startNs, Math.max(endNs, startNs + 1)];
    this.openTimeline = {
      traceId,
      bounds,
      zoom: [bounds[0], bounds[1]],
      levelFilter: "all",
    };
    return this.openTimeline;
  }

  /** Sets the zoom window, clamped into the timeline bounds (the invariant:
   * the window never extends past what the trace covers, and never collapses
   * below 1 ns, so bar geometry stays finite). */
  setZoom(t0: number, t1: number): [number, number] {
    const open = this.openTimeline;
    if (!open) throw new Error("no timeline is open");
    const [lo, hi] = open.bounds;
    let a = Math.min(t0, t1);
    let b = Math.max(t0, t1);
    a = Math.min(Math.max(a, lo), hi);
    b = Math.min(Math.max(b, lo), hi);
    if (b - a < 1) {
      // Degenerate selection: keep a 1 ns window anchored inside bounds.
      b = Math.min(a + 1, hi);
      a = b - 1;
    }
    open.zoom = [a, b];
    return open.zoom;
  }

  resetZoom(): [number, number] {
    const open = this.openTimeline;
    if (!open) throw new Error("no timeline is open");
    open.zoom = [open.bounds[0], open.bounds[1]];
    return open.zoom;
  }

  setLevelFilter(level: string): void {
    const open = this.openTimeline;
    if (!open) throw new Error("no timeline is open");
    if (!["model", "framework", "system", "all"].includes(level)) {
      throw new Error(`unknown level filter: ${level}`);
    }
    open.levelFilter = level;
  }
}
