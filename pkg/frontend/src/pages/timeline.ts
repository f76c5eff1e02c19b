/** Timeline page: a Gantt-style hierarchical view of one trace.
 *
 * Every span in the fetched document gets exactly one row at the default
 * filter.  Dragging across the track area zooms to that window (clamped to
 * the trace bounds); clicking a framework-level row opens its correlated
 * system kernels with the dominant one highlighted.
 */

import { clear, h } from "../dom";
import { formatDurationNs, formatMs, msFromNs } from "../format";
import {
  barGeometry,
  correlatedKernels,
  flattenTimeline,
  isExpandableLayer,
  levelName,
} from "../spans";
import type { OpenTimeline } from "../state";
import type { TimelineDoc, TimelineNode } from "../types";
import type { PageDeps } from "./catalog";

const LEVEL_FILTERS = ["model", "framework", "system", "all"] as const;

function kernelPanel(layer: TimelineNode): HTMLElement {
  const { kernels, dominant } = correlatedKernels(layer);
  const layerDuration = Math.max(layer.end_ns - layer.start_ns, 1);
  return h(
    "aside",
    { class: "kernel-panel", "data-layer": layer.name },
    h("h4", {}, `Kernels under ${layer.name}`),
    h(
      "p",
      { class: "kernel-meta" },
      `${kernels.length} kernel${kernels.length === 1 ? "" : "s"}` +
        (dominant ? `, dominant: ${dominant.name} (${formatDurationNs(dominant.end_ns - dominant.start_ns)})` : ""),
    ),
    h(
      "div",
      { class: "kernel-bars" },
      ...kernels.map((kernel) => {
        const duration = kernel.end_ns - kernel.start_ns;
        const bar = h("div", {
          class: kernel === dominant ? "kernel-bar dominant" : "kernel-bar",
          "data-kernel": kernel.name,
        });
        bar.style.width = `${Math.max((duration / layerDuration) * 100, 0.5)}%`;
        return h(
          "div",
          { class: "kernel-row" },
          h("span", { class: "kernel-name" }, kernel.name),
          bar,
          h("span", { class: "kernel-duration" }, formatDurationNs(duration)),
        );
      }),
    ),
  );
}

export async function renderTimelinePage(
  root: HTMLElement,
  traceId: string,
  deps: PageDeps,
): Promise<void> {
  clear(root);
  root.append(h("h2", {}, "Trace timeline"), h("p", { class: "loading" }, "Loading timeline…"));
  let doc: TimelineDoc;
  try {
    doc = await deps.api.getTimeline(traceId);
  } catch (err) {
    clear(root);
    root.append(
      h("h2", {}, "Trace timeline"),
      h("p", { class: "error", role: "alert" }, err instanceof Error ? err.message : String(err)),
    );
    return;
  }

  const open = deps.state.openTrace(
    traceId,
    0,
    Math.max(doc.total_duration_ns, 1),
  );

  clear(root);
  const header = h(
    "p",
    { class: "timeline-meta" },
    `trace ${doc.trace_id} · ${doc.span_count} spans · ${formatDurationNs(doc.total_duration_ns)} total · clock ${doc.clock_domain}`,
  );

  const filterBar = h("div", { class: "level-filter", role: "group" });
  const zoomLabel = h("span", { class: "zoom-label" });
  const resetButton = h(
    "button",
    {
      class: "button",
      id: "reset-zoom",
      onclick: () => {
        deps.state.resetZoom();
        redraw();
      },
    },
    "Reset zoom",
  );
  const controls = h("div", { class: "timeline-controls" }, filterBar, zoomLabel, resetButton);
  const track = h("div", { class: "timeline-track", id: "timeline-track" });
  root.append(h("h2", {}, "Trace timeline"), header, controls, track);

  let openLayerId: string | null = null;

  const drawFilterBar = () => {
    clear(filterBar);
    for (const level of LEVEL_FILTERS) {
      filterBar.append(
        h(
          "button",
          {
            class: open.levelFilter === level ? "button filter active" : "button filter",
            "data-level": level,
            onclick: () => {
              deps.state.setLevelFilter(level);
              redraw();
            },
          },
          level,
        ),
      );
    }
  };

  const spanRow = (node: TimelineNode, depth: number): HTMLElement => {
    const geometry = barGeometry(node, open.zoom);
    const duration = node.end_ns - node.start_ns;
    const expandable = isExpandableLayer(node);
    const row = h(
      "div",
      {
        class:
          `span-row level-${levelName(node.level)}` +
          (expandable ? " expandable" : "") +
          (geometry.outside ? " outside" : ""),
        "data-span-id": node.span_id,
        "data-level": String(node.level),
      },
      h(
        "span",
        { class: "span-label" },
        `${node.name} — ${formatMs(msFromNs(duration))} ms`,
      ),
    );
    row.style.paddingLeft = `${depth * 1.25}rem`;
    const lane = h("div", { class: "span-lane" });
    if (!geometry.outside) {
      const bar = h("div", { class: "span-bar" });
      bar.style.left = `${geometry.left * 100}%`;
      bar.style.width = `${Math.max(geometry.width * 100, 0.3)}%`;
      bar.title = `${node.name}: ${formatDurationNs(duration)}`;
      lane.append(bar);
    }
    row.append(lane);
    if (expandable) {
      row.addEventListener("click", () => {
        openLayerId = openLayerId === node.span_id ? null : node.span_id;
        redraw();
      });
      if (openLayerId === node.span_id) {
        row.classList.add("open");
      }
    }
    return row;
  };

  const installBrush = () => {
    let dragStartX: number | null = null;
    const fractionAt = (event: MouseEvent): number => {
      const rect = track.getBoundingClientRect();
      if (rect.width <= 0) return 0;
      return Math.min(Math.max((event.clientX - rect.left) / rect.width, 0), 1);
    };
    track.addEventListener("mousedown", (event) => {
      dragStartX = fractionAt(event as MouseEvent);
    });
    track.addEventListener("mouseup", (event) => {
      if (dragStartX === null) return;
      const endX = fractionAt(event as MouseEvent);
      const [z0, z1] = open.zoom;
      const width = z1 - z0;
      const a = z0 + Math.min(dragStartX, endX) * width;
      const b = z0 + Math.max(dragStartX, endX) * width;
      dragStartX = null;
      // A plain click is not a zoom gesture.
      if (Math.abs(b - a) < width * 0.01) return;
      deps.state.setZoom(a, b);
      redraw();
    });
  };

  const redraw = () => {
    drawFilterBar();
    zoomLabel.textContent =
      `window ${formatMs(msFromNs(open.zoom[0]))}–${formatMs(msFromNs(open.zoom[1]))} ms`;
    clear(track);
    const rows = flattenTimeline(doc, open.levelFilter);
    for (const { node, depth } of rows) {
      track.append(spanRow(node, depth));
      if (openLayerId === node.span_id && isExpandableLayer(node)) {
        track.append(kernelPanel(node));
      }
    }
  };

  installBrush();
  redraw();
}
