/** Launch form: one field per evaluation-submission parameter, nothing
 * invented client-side.  Submitting POSTs the evaluation and navigates to
 * the new job's page. */

import { clear, h } from "../dom";
import { jobRoute } from "../router";
import type { EvaluationSubmission } from "../types";
import { TRACE_LEVELS } from "../types";
import type { PageDeps } from "./catalog";

export interface LaunchFormValues {
  model_name: string;
  model_version: string;
  framework_name: string;
  framework_version: string;
  scenario_kind: string;
  batch_size: string;
  request_count: string;
  warmup_count: string;
  rate: string;
  distribution: string;
  trace_level: string;
  seed: string;
  fan_out: string;
  hw_device: string;
  hw_min_memory: string;
  input_shape: string;
}

export const LAUNCH_DEFAULTS: LaunchFormValues = {
  model_name: "",
  model_version: "",
  framework_name: "",
  framework_version: "",
  scenario_kind: "batched",
  batch_size: "1",
  request_count: "64",
  warmup_count: "0",
  rate: "10",
  distribution: "poisson",
  trace_level: "model",
  seed: "0",
  fan_out: "one",
  hw_device: "",
  hw_min_memory: "",
  input_shape: "",
};

function parseIntField(value: string, field: string): number {
  const n = Number.parseInt(value, 10);
  if (!Number.isFinite(n) || String(n) !== value.trim()) {
    throw new Error(`${field} must be an integer, got "${value}"`);
  }
  return n;
}

export function parseShape(text: string): number[] {
  return text
    .split(/[,x×\s]+/)
    .filter((part) => part.length > 0)
    .map((part) => parseIntField(part, "input shape"));
}

/** Translates the form into the POST /api/v1/evaluations body.  Pure so the
 * mapping itself is unit-testable apart from the DOM. */
export function buildSubmission(values: LaunchFormValues): EvaluationSubmission {
  if (!values.model_name) throw new Error("model is required");
  const traceLevel = TRACE_LEVELS[values.trace_level];
  if (traceLevel === undefined) {
    throw new Error(`unknown trace level "${values.trace_level}"`);
  }

  const scenario: EvaluationSubmission["request"]["benchmark_scenario"] = {
    kind: values.scenario_kind,
    request_count: parseIntField(values.request_count, "request count"),
    warmup_count: parseIntField(values.warmup_count, "warmup count"),
  };
  if (values.scenario_kind === "batched") {
    scenario.batch_size = parseIntField(values.batch_size, "batch size");
  } else if (values.scenario_kind === "online") {
    const rate = Number(values.rate);
    if (!Number.isFinite(rate) || rate <= 0) {
      throw new Error(`rate must be a positive number, got "${values.rate}"`);
    }
    scenario.arrival = { distribution: values.distribution, rate };
  } else {
    throw new Error(`unknown scenario "${values.scenario_kind}"`);
  }

  const submission: EvaluationSubmission = {
    request: {
      benchmark_scenario: scenario,
      predict_options: { trace_level: traceLevel, options: {} },
      model_name: values.model_name,
      model_version: values.model_version,
      framework_name: values.framework_name,
      framework_version: values.framework_version,
      seed: parseIntField(values.seed, "seed"),
    },
    fan_out: values.fan_out,
  };

  const hw: NonNullable<EvaluationSubmission["hw"]> = {};
  if (values.hw_device) hw.device_kind = values.hw_device;
  if (values.hw_min_memory.trim()) {
    hw.min_memory_bytes = parseIntField(values.hw_min_memory, "min memory");
  }
  if (Object.keys(hw).length > 0) submission.hw = hw;

  if (values.input_shape.trim()) {
    const shape = parseShape(values.input_shape);
    if (shape.length === 0) throw new Error("input shape must list dimensions");
    submission.input = { kind: "synthetic", shape };
  }
  return submission;
}

function field(
  label: string,
  input: HTMLElement,
  hint = "",
): HTMLElement {
  return h(
    "label",
    { class: "field" },
    h("span", { class: "field-label" }, label),
    input,
    hint ? h("span", { class: "hint" }, hint) : null,
  );
}

function textInput(name: string, value: string): HTMLInputElement {
  return h("input", { type: "text", name, value }) as HTMLInputElement;
}

function selectInput(
  name: string,
  options: string[],
  value: string,
): HTMLSelectElement {
  const select = h(
    "select",
    { name },
    ...options.map((option) => h("option", { value: option }, option || "(any)")),
  ) as HTMLSelectElement;
  select.value = value;
  return select;
}

export function readForm(form: HTMLFormElement): LaunchFormValues {
  const values = { ...LAUNCH_DEFAULTS };
  for (const key of Object.keys(values) as (keyof LaunchFormValues)[]) {
    const control = form.elements.namedItem(key);
    if (
      control instanceof HTMLInputElement ||
      control instanceof HTMLSelectElement
    ) {
      values[key] = control.value;
    }
  }
  return values;
}

export async function renderLaunchPage(
  root: HTMLElement,
  prefill: Record<string, string>,
  deps: PageDeps,
): Promise<void> {
  clear(root);
  root.append(h("h2", {}, "Launch an evaluation"), h("p", { class: "loading" }, "Loading models…"));
  const models = await deps.api.listModels();
  clear(root);

  const initial: LaunchFormValues = { ...LAUNCH_DEFAULTS };
  if (prefill.model) initial.model_name = prefill.model;
  if (prefill.framework) initial.framework_name = prefill.framework;

  const modelSelect = selectInput(
    "model_name",
    models.map((m) => m.name),
    initial.model_name || models[0]?.name || "",
  );
  const frameworkInput = textInput("framework_name", initial.framework_name);
  modelSelect.addEventListener("change", () => {
    const model = models.find((m) => m.name === modelSelect.value);
    if (model) frameworkInput.value = model.framework.name;
  });
  if (!initial.framework_name) {
    const model = models.find((m) => m.name === modelSelect.value);
    if (model) frameworkInput.value = model.framework.name;
  }

  const scenarioSelect = selectInput(
    "scenario_kind",
    ["batched", "online"],
    initial.scenario_kind,
  );
  const batchedFields = h(
    "div",
    { class: "scenario-fields", "data-scenario": "batched" },
    field("Batch size", textInput("batch_size", initial.batch_size)),
  );
  const onlineFields = h(
    "div",
    { class: "scenario-fields", "data-scenario": "online" },
    field("Arrival rate (req/s)", textInput("rate", initial.rate)),
    field(
      "Arrival distribution",
      selectInput("distribution", ["poisson", "uniform", "fixed"], initial.distribution),
    ),
  );
  const syncScenario = () => {
    const online = scenarioSelect.value === "online";
    batchedFields.style.display = online ? "none" : "";
    onlineFields.style.display = online ? "" : "none";
  };
  scenarioSelect.addEventListener("change", syncScenario);

  const errorLine = h("p", { class: "error", role: "alert" });
  errorLine.style.display = "none";

  const form = h(
    "form",
    {
      id: "launch-form",
      onsubmit: (event: Event) => {
        event.preventDefault();
        void submit();
      },
    },
    h(
      "fieldset",
      {},
      h("legend", {}, "What to evaluate"),
      field("Model", modelSelect),
      field("Model version constraint", textInput("model_version", initial.model_version), "e.g. >=1.0.0, empty = any"),
      field("Framework", frameworkInput),
      field("Framework version constraint", textInput("framework_version", initial.framework_version)),
    ),
    h(
      "fieldset",
      {},
      h("legend", {}, "Workload"),
      field("Scenario", scenarioSelect),
      batchedFields,
      onlineFields,
      field("Request count", textInput("request_count", initial.request_count)),
      field("Warmup requests", textInput("warmup_count", initial.warmup_count)),
      field("Seed", textInput("seed", initial.seed)),
      field(
        "Input tensor shape",
        textInput("input_shape", initial.input_shape),
        "comma-separated, empty = model default",
      ),
    ),
    h(
      "fieldset",
      {},
      h("legend", {}, "Placement"),
      field("Device kind", selectInput("hw_device", ["", "cpu", "gpu", "fpga"], initial.hw_device)),
      field("Min device memory (bytes)", textInput("hw_min_memory", initial.hw_min_memory)),
      field("Fan out", selectInput("fan_out", ["one", "all"], initial.fan_out)),
      field(
        "Trace level",
        selectInput("trace_level", ["none", "model", "framework", "system", "full"], initial.trace_level),
      ),
    ),
    errorLine,
    h("button", { type: "submit", class: "button primary" }, "Launch"),
  ) as HTMLFormElement;

  const submit = async () => {
    errorLine.style.display = "none";
    try {
      const submission = buildSubmission(readForm(form));
      const jobId = await deps.api.submitEvaluation(submission);
      deps.state.trackJob(jobId);
      deps.navigate(jobRoute(jobId));
    } catch (err) {
      errorLine.textContent = err instanceof Error ? err.message : String(err);
      errorLine.style.display = "";
    }
  };

  root.append(h("h2", {}, "Launch an evaluation"), form);
  syncScenario();
}
