/** Shapes of the JSON documents served by the evaluation server's REST API. */

export interface CatalogModel {
  name: string;
  version: string;
  description: string;
  framework: { name: string; constraint: string };
  attributes: Record<string, unknown>;
  inputs: Array<{ modality: string; element_type?: string }>;
  outputs: Array<{ modality: string; element_type?: string }>;
  manifest_text: string;
}

export interface AgentDevice {
  kind: string;
  name: string;
  count: number;
  memory_bytes: number;
}

export interface AgentRecord {
  agent_id: string;
  architecture: string;
  devices: AgentDevice[];
  frameworks: Array<[string, string]>;
  builtin_models: Array<[string, string]>;
  endpoint: string;
  lease_expiry_ns: number;
}

/** Numeric span levels, frozen by the wire protocol. */
export const LEVEL_MODEL = 1;
export const LEVEL_FRAMEWORK = 2;
export const LEVEL_SYSTEM = 3;

export const TRACE_LEVELS: Record<string, number> = {
  none: 0,
  model: 1,
  framework: 2,
  system: 3,
  full: 4,
};

/** The body POSTed to /api/v1/evaluations. */
export interface EvaluationSubmission {
  request: {
    benchmark_scenario: {
      kind: string;
      batch_size?: number;
      request_count: number;
      warmup_count: number;
      duration_seconds?: number;
      arrival?: { distribution: string; rate: number };
    };
    predict_options: { trace_level: number; options: Record<string, string> };
    model_name: string;
    model_version?: string;
    framework_name?: string;
    framework_version?: string;
    model_manifest?: string;
    seed: number;
  };
  hw?: {
    device_kind?: string;
    architecture?: string;
    min_memory_bytes?: number;
  };
  fan_out: string;
  input?: { kind: string; shape?: number[]; count?: number; path?: string };
}

export interface JobStatus {
  job_id: string;
  state: string;
  fan_out: string;
  model_name: string;
  scenario_kind: string;
  agents: string[];
  expected_results: number;
  completed_results: number;
  result_ids: string[];
  error: { code: string; message: string } | null;
}

export interface LatencySummary {
  trimmed_mean_ms: number;
  p90_ms: number;
  min_ms: number;
  max_ms: number;
  mean_ms: number;
  count: number;
  trim_fraction: number;
}

export interface ResultSummary {
  agent_id: string;
  evaluation_id: string;
  trace_id: string;
  clock_domain: string;
  model_version: string;
  framework_version: string;
  request_count: number;
  warmup_count: number;
  sample_count: number;
  failure_count: number;
  latency: LatencySummary;
  busy_ns: number;
  throughput: number;
}

export interface JobSummary {
  request: EvaluationSubmission["request"];
  results: ResultSummary[];
  fan_out: string;
  hw: Record<string, unknown>;
  input: Record<string, unknown>;
}

/** One node of an assembled trace timeline (span fields plus children). */
export interface TimelineNode {
  trace_id: string;
  span_id: string;
  parent_span_id?: string;
  name: string;
  level: number;
  start_ns: number;
  end_ns: number;
  clock_domain: string;
  attributes: Record<string, string>;
  children: TimelineNode[];
}

export interface TimelineDoc {
  trace_id: string;
  clock_domain: string;
  span_count: number;
  total_duration_ns: number;
  roots: TimelineNode[];
}

export interface ThroughputCurve {
  max_throughput: number;
  optimal_batch_size: number;
  points: Array<[number, number]>;
}

export interface ModelSection {
  model: string;
  clock_domains: string[];
  evaluations: string[];
  latency: LatencySummary;
  sample_count: number;
  throughput: ThroughputCurve;
}

export interface SpeedupMatrix {
  batch_sizes: number[];
  model_ids: string[];
  cells: Array<Array<number | null>>;
}

export interface AnalysisReport {
  report_version: number;
  title: string;
  trim_fraction: number;
  environment: { agents: Array<Record<string, unknown>> };
  evaluations: string[];
  models: ModelSection[];
  speedup?: SpeedupMatrix;
  layers: Array<{ trace_id: string; clock_domain: string; rows: unknown[] }>;
}
