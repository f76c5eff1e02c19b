/** Client-side SVG charts rendered from report JSON — the server never
 * draws anything. */

import { s } from "./dom";
import { formatMs } from "./format";
import type { SpeedupMatrix, ThroughputCurve } from "./types";

const WIDTH = 480;
const HEIGHT = 220;
const PAD = { left: 56, right: 16, top: 14, bottom: 34 };

/** Line-and-dot chart of throughput versus batch size.  Batch sizes are
 * spaced categorically (they grow geometrically, so a linear axis would
 * crush the small batches that matter most). */
export function throughputChart(curve: ThroughputCurve): SVGElement {
  const points = curve.points;
  const svg = s("svg", {
    viewBox: `0 0 ${WIDTH} ${HEIGHT}`,
    class: "chart throughput-chart",
    role: "img",
  });
  if (points.length === 0) return svg;

  const innerW = WIDTH - PAD.left - PAD.right;
  const innerH = HEIGHT - PAD.top - PAD.bottom;
  const maxY = Math.max(...points.map(([, tput]) => tput)) || 1;
  const x = (i: number) =>
    PAD.left + (points.length === 1 ? innerW / 2 : (i / (points.length - 1)) * innerW);
  const y = (v: number) => PAD.top + innerH - (v / maxY) * innerH;

  svg.append(
    s("line", {
      x1: String(PAD.left), y1: String(PAD.top + innerH),
      x2: String(PAD.left + innerW), y2: String(PAD.top + innerH),
      class: "axis",
    }),
    s("line", {
      x1: String(PAD.left), y1: String(PAD.top),
      x2: String(PAD.left), y2: String(PAD.top + innerH),
      class: "axis",
    }),
  );

  for (const fraction of [0.5, 1]) {
    const value = maxY * fraction;
    svg.append(
      s("text", {
        x: String(PAD.left - 6), y: String(y(value) + 4),
        class: "tick-label", "text-anchor": "end",
      }, value >= 100 ? value.toFixed(0) : value.toFixed(1)),
    );
  }

  const path = points
    .map(([, tput], i) => `${i === 0 ? "M" : "L"}${x(i)},${y(tput)}`)
    .join(" ");
  svg.append(s("path", { d: path, class: "curve" }));

  points.forEach(([batch, tput], i) => {
    const optimal = batch === curve.optimal_batch_size;
    svg.append(
      s("circle", {
        cx: String(x(i)), cy: String(y(tput)), r: optimal ? "5" : "3.5",
        class: optimal ? "point optimal" : "point",
        "data-batch": String(batch), "data-throughput": String(tput),
      }),
      s("text", {
        x: String(x(i)), y: String(PAD.top + innerH + 16),
        class: "tick-label", "text-anchor": "middle",
      }, String(batch)),
    );
  });
  svg.append(
    s("text", {
      x: String(PAD.left + innerW / 2), y: String(HEIGHT - 4),
      class: "axis-label", "text-anchor": "middle",
    }, "batch size"),
  );
  return svg;
}

/** Color for a speedup cell: light for ~1x, saturating toward deep green as
 * the speedup grows relative to the matrix maximum. */
export function speedupColor(value: number, max: number): string {
  const intensity = max <= 1 ? 0 : Math.max(0, Math.min(1, (value - 1) / (max - 1)));
  const lightness = 94 - intensity * 52;
  return `hsl(152, 55%, ${lightness}%)`;
}

/** Heatmap of throughput speedup over batch size 1: one row per batch size,
 * one column per model. */
export function speedupHeatmap(matrix: SpeedupMatrix): HTMLTableElement {
  const table = document.createElement("table");
  table.className = "heatmap";
  const values = matrix.cells.flat().filter((v): v is number => v !== null);
  const max = values.length ? Math.max(...values) : 1;

  const head = table.createTHead().insertRow();
  head.append(document.createElement("th"));
  for (const model of matrix.model_ids) {
    const th = document.createElement("th");
    th.textContent = model;
    head.append(th);
  }

  const body = table.createTBody();
  matrix.batch_sizes.forEach((batch, i) => {
    const row = body.insertRow();
    const label = document.createElement("th");
    label.textContent = `b=${batch}`;
    row.append(label);
    matrix.model_ids.forEach((model, j) => {
      const cell = row.insertCell();
      const value = matrix.cells[i]?.[j] ?? null;
      cell.className = "heatmap-cell";
      cell.dataset.batch = String(batch);
      cell.dataset.model = model;
      if (value === null) {
        cell.textContent = "–";
        cell.classList.add("empty");
      } else {
        cell.textContent = `${formatMs(value)}×`;
        cell.style.backgroundColor = speedupColor(value, max);
        cell.dataset.value = String(value);
      }
    });
  });
  return table;
}
