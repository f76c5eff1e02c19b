/** Model catalog: everything the server knows how to evaluate, grouped by
 * application area, with a framework filter for narrowing the list. */

import type { ApiClient } from "../api";
import { clear, h } from "../dom";
import { launchRoute } from "../router";
import type { ViewState } from "../state";
import type { CatalogModel } from "../types";

export interface PageDeps {
  api: ApiClient;
  state: ViewState;
  navigate: (hash: string) => void;
}

/** Grouping key: an explicit task attribute when the manifest declares one,
 * otherwise the input modality (image models, tensor models, …). */
export function modelGroup(model: CatalogModel): string {
  const task = model.attributes?.["task"];
  if (typeof task === "string" && task) return task;
  const modality = model.inputs[0]?.modality;
  return modality ? `${modality} models` : "other models";
}

export function groupModels(
  models: CatalogModel[],
  frameworkFilter: string,
): Map<string, CatalogModel[]> {
  const groups = new Map<string, CatalogModel[]>();
  for (const model of models) {
    if (frameworkFilter && model.framework.name !== frameworkFilter) continue;
    const key = modelGroup(model);
    const bucket = groups.get(key) ?? [];
    bucket.push(model);
    groups.set(key, bucket);
  }
  for (const bucket of groups.values()) {
    bucket.sort((a, b) => a.name.localeCompare(b.name));
  }
  return new Map([...groups.entries()].sort(([a], [b]) => a.localeCompare(b)));
}

function modelCard(model: CatalogModel, deps: PageDeps): HTMLElement {
  const attrs = Object.entries(model.attributes ?? {});
  return h(
    "article",
    { class: "card model-card", "data-model": model.name },
    h("h3", {}, `${model.name}@${model.version}`),
    h("p", { class: "description" }, model.description || "(no description)"),
    h(
      "p",
      { class: "framework-line" },
      `framework: ${model.framework.name} ${model.framework.constraint}`,
    ),
    attrs.length
      ? h(
          "dl",
          { class: "attributes" },
          ...attrs.flatMap(([key, value]) => [
            h("dt", {}, key),
            h("dd", {}, String(value)),
          ]),
        )
      : null,
    h(
      "p",
      {},
      h(
        "a",
        {
          class: "button",
          href: launchRoute({
            model: model.name,
            framework: model.framework.name,
          }),
        },
        "Launch evaluation →",
      ),
    ),
  );
}

export async function renderCatalogPage(
  root: HTMLElement,
  deps: PageDeps,
): Promise<void> {
  clear(root);
  root.append(h("h2", {}, "Model catalog"), h("p", { class: "loading" }, "Loading models…"));

  const [models, agents] = await Promise.all([
    deps.api.listModels(),
    deps.api.listAgents(),
  ]);

  clear(root);
  const frameworks = [...new Set(models.map((m) => m.framework.name))].sort();
  const filterSelect = h(
    "select",
    { id: "framework-filter", onchange: () => redraw() },
    h("option", { value: "" }, "all frameworks"),
    ...frameworks.map((name) =>
      h("option", { value: name, ...(deps.state.filters.framework === name ? { selected: true } : {}) }, name),
    ),
  ) as HTMLSelectElement;
  filterSelect.value = deps.state.filters.framework;

  const groupsHost = h("div", { class: "catalog-groups" });
  const redraw = () => {
    deps.state.filters.framework = filterSelect.value;
    clear(groupsHost);
    const groups = groupModels(models, filterSelect.value);
    if (groups.size === 0) {
      groupsHost.append(h("p", { class: "empty" }, "No models match this filter."));
    }
    for (const [group, groupModelsList] of groups) {
      groupsHost.append(
        h(
          "section",
          { class: "catalog-group", "data-group": group },
          h("h3", {}, group),
          h("div", { class: "card-grid" }, ...groupModelsList.map((m) => modelCard(m, deps))),
        ),
      );
    }
  };

  root.append(
    h("h2", {}, "Model catalog"),
    h(
      "p",
      { class: "agents-line" },
      `${agents.length} agent${agents.length === 1 ? "" : "s"} live: `,
      agents
        .map((a) => `${a.agent_id} (${a.architecture}, ${a.devices.map((d) => `${d.count}× ${d.kind}`).join(", ")})`)
        .join("; ") || "none",
    ),
    h("label", { class: "filter-label", for: "framework-filter" }, "Framework: "),
    filterSelect,
    groupsHost,
  );
  redraw();
}
