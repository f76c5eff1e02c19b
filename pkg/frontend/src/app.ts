/** Application shell: wires the hash router to the page renderers around
 * one ViewState and one API client. */

import { ApiClient } from "./api";
import { clear, h } from "./dom";
import { parseRoute } from "./router";
import { renderCatalogPage, type PageDeps } from "./pages/catalog";
import { renderComparePage } from "./pages/compare";
import { renderJobPage, type JobPageHandle } from "./pages/job";
import { renderLaunchPage } from "./pages/launch";
import { renderTimelinePage } from "./pages/timeline";
import { ViewState } from "./state";

export function startApp(root: HTMLElement): void {
  const state = new ViewState(window.sessionStorage);
  const deps: PageDeps = {
    api: new ApiClient(""),
    state,
    navigate: (hash: string) => {
      window.location.hash = hash;
    },
  };

  const nav = h(
    "nav",
    { class: "top-nav" },
    h("span", { class: "brand" }, "benchrig"),
    h("a", { href: "#/catalog" }, "Catalog"),
    h("a", { href: "#/launch" }, "Launch"),
    h("a", { href: "#/compare" }, "Compare"),
  );
  const view = h("main", { id: "view" });
  clear(root);
  root.append(nav, view);

  let activeJob: JobPageHandle | null = null;

  const render = () => {
    activeJob?.dispose();
    activeJob = null;
    const route = parseRoute(window.location.hash);
    for (const link of nav.querySelectorAll("a")) {
      link.classList.toggle(
        "active",
        link.getAttribute("href") === `#/${route.page === "job" ? "jobs" : route.page}`,
      );
    }
    switch (route.page) {
      case "catalog":
        void renderCatalogPage(view, deps).catch((err) => showError(err));
        break;
      case "launch":
        void renderLaunchPage(view, route.prefill, deps).catch((err) => showError(err));
        break;
      case "job":
        activeJob = renderJobPage(view, route.jobId, deps);
        break;
      case "timeline":
        void renderTimelinePage(view, route.traceId, deps).catch((err) => showError(err));
        break;
      case "compare":
        void renderComparePage(view, deps).catch((err) => showError(err));
        break;
    }
  };

  const showError = (err: unknown) => {
    clear(view);
    view.append(
      h("p", { class: "error", role: "alert" }, err instanceof Error ? err.message : String(err)),
    );
  };

  window.addEventListener("hashchange", render);
  render();
}

startApp(document.getElementById("app") as HTMLElement);
