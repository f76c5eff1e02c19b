/** Thin typed client over the evaluation server's REST API.
 *
 * The UI talks to the server exclusively through these calls; every method
 * maps to one documented endpoint.
 */

import type {
  AgentRecord,
  AnalysisReport,
  CatalogModel,
  EvaluationSubmission,
  JobStatus,
  JobSummary,
  TimelineDoc,
} from "./types";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function decodeError(response: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `${response.status} ${response.statusText}`;
  try {
    const body = await response.json();
    if (body && typeof body === "object" && body.error) {
      code = String(body.error.code ?? code);
      message = String(body.error.message ?? message);
    }
  } catch {
    // Non-JSON error body; keep the HTTP status text.
  }
  return new ApiError(response.status, code, message);
}

export class ApiClient {
  /** @param base Origin prefix, e.g. "http://127.0.0.1:8080"; "" = same origin. */
  constructor(readonly base: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.base + path);
    if (!response.ok) throw await decodeError(response);
    return (await response.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const response = await fetch(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) throw await decodeError(response);
    return (await response.json()) as T;
  }

  async listModels(): Promise<CatalogModel[]> {
    const body = await this.getJson<{ models: CatalogModel[] }>("/api/v1/models");
    return body.models;
  }

  async listAgents(): Promise<AgentRecord[]> {
    const body = await this.getJson<{ agents: AgentRecord[] }>("/api/v1/agents");
    return body.agents;
  }

  async submitEvaluation(submission: EvaluationSubmission): Promise<string> {
    const body = await this.postJson<{ job_id: string }>(
      "/api/v1/evaluations",
      submission,
    );
    return body.job_id;
  }

  jobStatus(jobId: string): Promise<JobStatus> {
    return this.getJson(`/api/v1/evaluations/${encodeURIComponent(jobId)}`);
  }

  /** Raw summary text, verbatim as served (canonical JSON, no reformatting). */
  async jobSummaryText(jobId: string): Promise<string> {
    const response = await fetch(
      `${this.base}/api/v1/evaluations/${encodeURIComponent(jobId)}/summary`,
    );
    if (!response.ok) throw await decodeError(response);
    return await response.text();
  }

  async jobSummary(jobId: string): Promise<{ text: string; doc: JobSummary }> {
    const text = await this.jobSummaryText(jobId);
    return { text, doc: JSON.parse(text) as JobSummary };
  }

  async submitAnalysis(options: {
    title: string;
    top_k?: number;
    filter?: Record<string, unknown>;
    include_timelines?: boolean;
  }): Promise<string> {
    const body = await this.postJson<{ report_id: string }>(
      "/api/v1/analyses",
      options,
    );
    return body.report_id;
  }

  getReport(reportId: string): Promise<AnalysisReport> {
    return this.getJson(`/api/v1/analyses/${encodeURIComponent(reportId)}`);
  }

  getTimeline(traceId: string): Promise<TimelineDoc> {
    return this.getJson(`/api/v1/traces/${encodeURIComponent(traceId)}`);
  }
}
