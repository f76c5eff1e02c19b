/** Hash-fragment router: every page is addressable, nothing touches the
 * server's URL space, and deep links survive the static SPA fallback. */

export type Route =
  | { page: "catalog" }
  | { page: "launch"; prefill: Record<string, string> }
  | { page: "job"; jobId: string }
  | { page: "timeline"; traceId: string }
  | { page: "compare" };

export function parseRoute(hash: string): Route {
  const fragment = hash.startsWith("#") ? hash.slice(1) : hash;
  const [path, query = ""] = fragment.split("?", 2);
  const parts = path.split("/").filter((p) => p.length > 0);

  if (parts.length === 0 || parts[0] === "catalog") return { page: "catalog" };
  if (parts[0] === "launch") {
    const prefill: Record<string, string> = {};
    for (const [key, value] of new URLSearchParams(query)) prefill[key] = value;
    return { page: "launch", prefill };
  }
  if (parts[0] === "jobs" && parts[1]) {
    return { page: "job", jobId: decodeURIComponent(parts[1]) };
  }
  if (parts[0] === "timelines" && parts[1]) {
    return { page: "timeline", traceId: decodeURIComponent(parts[1]) };
  }
  if (parts[0] === "compare") return { page: "compare" };
  return { page: "catalog" };
}

export function jobRoute(jobId: string): string {
  return `#/jobs/${encodeURIComponent(jobId)}`;
}

export function timelineRoute(traceId: string): string {
  return `#/timelines/${encodeURIComponent(traceId)}`;
}

export function launchRoute(prefill: Record<string, string> = {}): string {
  const query = new URLSearchParams(prefill).toString();
  return query ? `#/launch?${query}` : "#/launch";
}
