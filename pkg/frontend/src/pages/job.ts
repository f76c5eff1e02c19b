/** Job page: polls status every two seconds until the job settles, then
 * renders the summary — latency table, throughput, trace links, and the raw
 * summary JSON exactly as the server serves it. */

import { clear, h } from "../dom";
import { formatMs, formatThroughput } from "../format";
import { timelineRoute } from "../router";
import type { JobStatus, JobSummary, ResultSummary } from "../types";
import type { PageDeps } from "./catalog";

export const POLL_INTERVAL_MS = 2000;

export interface JobPageHandle {
  /** Resolves when the job reaches a terminal state and the page is final. */
  settled: Promise<void>;
  /** Stops polling (navigation away). */
  dispose: () => void;
}

const TERMINAL_STATES = new Set(["completed", "failed"]);

function latencyTable(result: ResultSummary): HTMLElement {
  const latency = result.latency;
  const rows: Array<[string, string]> = [
    ["trimmed mean", `${formatMs(latency.trimmed_mean_ms)} ms`],
    ["mean", `${formatMs(latency.mean_ms)} ms`],
    ["p90", `${formatMs(latency.p90_ms)} ms`],
    ["min", `${formatMs(latency.min_ms)} ms`],
    ["max", `${formatMs(latency.max_ms)} ms`],
    ["timed samples", String(latency.count)],
  ];
  return h(
    "table",
    { class: "latency-table" },
    h(
      "tbody",
      {},
      ...rows.map(([name, value]) =>
        h("tr", {}, h("th", {}, name), h("td", { "data-metric": name.replace(/ /g, "-") }, value)),
      ),
    ),
  );
}

function resultCard(result: ResultSummary, request: JobSummary["request"]): HTMLElement {
  return h(
    "article",
    { class: "card result-card", "data-agent": result.agent_id },
    h(
      "h3",
      {},
      `${request.model_name}@${result.model_version} on ${result.agent_id}`,
    ),
    h(
      "p",
      { class: "result-meta" },
      `clock ${result.clock_domain} · ${result.sample_count} timed / ${result.request_count} issued` +
        (result.failure_count ? ` · ${result.failure_count} failed` : ""),
    ),
    latencyTable(result),
    h(
      "p",
      { class: "throughput-line" },
      "throughput: ",
      h("strong", { "data-metric": "throughput" }, formatThroughput(result.throughput)),
    ),
    result.trace_id
      ? h(
          "p",
          {},
          h("a", { href: timelineRoute(result.trace_id), class: "button" }, "View trace timeline →"),
        )
      : null,
  );
}

function statusLine(status: JobStatus): HTMLElement {
  const text =
    status.state === "running" || status.state === "pending"
      ? `${status.state} — ${status.completed_results}/${status.expected_results} results in`
      : status.state;
  const line = h(
    "p",
    { class: `job-state state-${status.state}`, "data-state": status.state },
    `Job ${status.job_id}: `,
    h("strong", {}, text),
  );
  return line;
}

export function renderJobPage(
  root: HTMLElement,
  jobId: string,
  deps: PageDeps,
  pollIntervalMs: number = POLL_INTERVAL_MS,
): JobPageHandle {
  clear(root);
  deps.state.trackJob(jobId);
  const statusHost = h("div", { class: "job-status" });
  const body = h("div", { class: "job-body" });
  root.append(h("h2", {}, "Evaluation job"), statusHost, body);

  let timer: ReturnType<typeof setTimeout> | null = null;
  let disposed = false;

  const finish = async (status: JobStatus) => {
    if (status.state !== "completed") {
      body.append(
        h(
          "p",
          { class: "error", role: "alert" },
          status.error ? `${status.error.code}: ${status.error.message}` : "Job failed.",
        ),
      );
      return;
    }
    const { text, doc } = await deps.api.jobSummary(jobId);
    clear(body);
    body.append(
      h(
        "section",
        { class: "summary" },
        h("h3", {}, "Summary"),
        h("div", { class: "card-grid" }, ...doc.results.map((result) => resultCard(result, doc.request))),
        h(
          "details",
          { class: "raw-summary" },
          h("summary", {}, "Raw summary JSON"),
          h("pre", { id: "raw-summary" }, text),
        ),
      ),
    );
  };

  let resolveSettled!: () => void;
  let rejectSettled!: (err: unknown) => void;
  const settled = new Promise<void>((resolve, reject) => {
    resolveSettled = resolve;
    rejectSettled = reject;
  });
  // Navigating away before the job settles abandons the promise on purpose;
  // nothing awaits it after dispose().
  settled.catch(() => {});

  const poll = async () => {
    let status: JobStatus;
    try {
      status = await deps.api.jobStatus(jobId);
    } catch (err) {
      if (disposed) return;
      clear(statusHost);
      statusHost.append(
        h("p", { class: "error", role: "alert" }, err instanceof Error ? err.message : String(err)),
      );
      rejectSettled(err);
      return;
    }
    if (disposed) return;
    clear(statusHost);
    statusHost.append(statusLine(status));
    if (TERMINAL_STATES.has(status.state)) {
      try {
        await finish(status);
        resolveSettled();
      } catch (err) {
        rejectSettled(err);
      }
      return;
    }
    timer = setTimeout(() => void poll(), pollIntervalMs);
  };

  void poll();
  return {
    settled,
    dispose: () => {
      disposed = true;
      if (timer !== null) clearTimeout(timer);
    },
  };
}
