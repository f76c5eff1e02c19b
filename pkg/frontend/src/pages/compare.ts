/** Compare page: pick two or more completed evaluations, line their
 * summaries up side by side, and render the cross-model analysis (throughput
 * curves and the speedup-over-batch-1 heatmap) from a freshly computed
 * report. */

import { speedupHeatmap, throughputChart } from "../charts";
import { clear, h } from "../dom";
import { formatMs, formatThroughput } from "../format";
import type { JobSummary } from "../types";
import type { PageDeps } from "./catalog";

interface PickedJob {
  jobId: string;
  summary: JobSummary;
}

function comparisonTable(picked: PickedJob[]): HTMLElement {
  const header = h(
    "tr",
    {},
    h("th", {}, "job"),
    h("th", {}, "model"),
    h("th", {}, "scenario"),
    h("th", {}, "agent"),
    h("th", {}, "clock"),
    h("th", {}, "samples"),
    h("th", {}, "trimmed mean"),
    h("th", {}, "p90"),
    h("th", {}, "throughput"),
  );
  const rows = picked.flatMap(({ jobId, summary }) =>
    summary.results.map((result) =>
      h(
        "tr",
        { "data-job": jobId },
        h("td", { class: "job-id" }, jobId.slice(0, 10) + "…"),
        h("td", {}, `${summary.request.model_name}@${result.model_version}`),
        h("td", {}, summary.request.benchmark_scenario.kind),
        h("td", {}, result.agent_id),
        h("td", {}, result.clock_domain),
        h("td", {}, String(result.sample_count)),
        h("td", {}, `${formatMs(result.latency.trimmed_mean_ms)} ms`),
        h("td", {}, `${formatMs(result.latency.p90_ms)} ms`),
        h("td", {}, formatThroughput(result.throughput)),
      ),
    ),
  );
  return h("table", { class: "compare-table" }, h("thead", {}, header), h("tbody", {}, ...rows));
}

export async function renderComparePage(
  root: HTMLElement,
  deps: PageDeps,
): Promise<void> {
  clear(root);
  root.append(h("h2", {}, "Compare evaluations"));

  const jobIds = deps.state.activeJobIds;
  const checklist = h("div", { class: "compare-picker" });
  const addInput = h("input", {
    type: "text",
    id: "track-job-input",
    placeholder: "job id…",
  }) as HTMLInputElement;
  const errorLine = h("p", { class: "error", role: "alert" });
  errorLine.style.display = "none";
  const resultHost = h("div", { class: "compare-results" });

  const selected = new Set<string>();

  const drawChecklist = () => {
    clear(checklist);
    if (jobIds.length === 0) {
      checklist.append(
        h("p", { class: "empty" }, "No jobs tracked in this session yet. Launch one, or paste a job id below."),
      );
    }
    for (const jobId of jobIds) {
      const checkbox = h("input", {
        type: "checkbox",
        value: jobId,
        onchange: () => {
          if ((checkbox as HTMLInputElement).checked) selected.add(jobId);
          else selected.delete(jobId);
          compareButton.disabled = selected.size < 2;
        },
      }) as HTMLInputElement;
      checkbox.checked = selected.has(jobId);
      checklist.append(h("label", { class: "compare-choice" }, checkbox, ` ${jobId}`));
    }
  };

  const compareButton = h(
    "button",
    {
      class: "button primary",
      id: "compare-button",
      onclick: () => void runComparison(),
    },
    "Compare selected",
  ) as HTMLButtonElement;
  compareButton.disabled = true;

  const runComparison = async () => {
    errorLine.style.display = "none";
    clear(resultHost);
    resultHost.append(h("p", { class: "loading" }, "Fetching summaries…"));
    try {
      const picked: PickedJob[] = [];
      for (const jobId of selected) {
        const { doc } = await deps.api.jobSummary(jobId);
        picked.push({ jobId, summary: doc });
      }
      const reportId = await deps.api.submitAnalysis({
        title: `Comparison of ${picked.length} evaluations`,
        include_timelines: false,
      });
      const report = await deps.api.getReport(reportId);

      clear(resultHost);
      resultHost.append(h("h3", {}, "Side by side"), comparisonTable(picked));

      const compared = new Set(
        picked.map(({ summary }) => summary.request.model_name),
      );
      const sections = report.models.filter((section) =>
        compared.has(section.model.split("@", 1)[0]),
      );
      if (sections.length > 0) {
        const charts = h("div", { class: "card-grid" });
        for (const section of sections) {
          charts.append(
            h(
              "article",
              { class: "card" },
              h("h4", {}, section.model),
              h(
                "p",
                {},
                `max ${formatThroughput(section.throughput.max_throughput)} at batch ${section.throughput.optimal_batch_size}`,
              ),
              throughputChart(section.throughput),
            ),
          );
        }
        resultHost.append(h("h3", {}, "Throughput by batch size"), charts);
      }
      if (report.speedup) {
        resultHost.append(
          h("h3", {}, "Speedup over batch size 1"),
          speedupHeatmap(report.speedup),
        );
      }
    } catch (err) {
      clear(resultHost);
      errorLine.textContent = err instanceof Error ? err.message : String(err);
      errorLine.style.display = "";
    }
  };

  root.append(
    h("p", {}, "Pick at least two completed evaluations."),
    checklist,
    h(
      "p",
      { class: "track-line" },
      addInput,
      h(
        "button",
        {
          class: "button",
          onclick: () => {
            const jobId = addInput.value.trim();
            if (!jobId) return;
            deps.state.trackJob(jobId);
            addInput.value = "";
            drawChecklist();
          },
        },
        "Track job",
      ),
    ),
    compareButton,
    errorLine,
    resultHost,
  );
  drawChecklist();
}
