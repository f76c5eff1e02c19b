/** Number and duration formatting shared by tables, bars, and charts. */

export function msFromNs(ns: number): number {
  return ns / 1e6;
}

/** Millisecond text with enough digits for sub-millisecond kernels. */
export function formatMs(ms: number): string {
  if (ms === 0) return "0";
  if (Math.abs(ms) < 0.01) return ms.toPrecision(2);
  return ms.toFixed(3).replace(/\.?0+$/, "");
}

export function formatDurationNs(ns: number): string {
  return `${formatMs(msFromNs(ns))} ms`;
}

export function formatThroughput(itemsPerSecond: number): string {
  return `${itemsPerSecond.toFixed(1)} items/s`;
}

export function formatCount(n: number): string {
  return n.toLocaleString("en-US");
}

export function formatBytes(bytes: number): string {
  const units = ["B", "KiB", "MiB", "GiB", "TiB"];
  let value = bytes;
  let unit = 0;
  while (value >= 1024 && unit < units.length - 1) {
    value /= 1024;
    unit += 1;
  }
  return `${unit === 0 ? value : value.toFixed(1)} ${units[unit]}`;
}
