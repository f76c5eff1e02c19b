import { beforeEach, describe, expect, it } from "vitest";
import { ViewState } from "../src/state";

describe("ViewState zoom window", () => {
  let state: ViewState;

  beforeEach(() => {
    state = new ViewState();
    state.openTrace("trace-1", 0, 1_000_000);
  });

  it("starts zoomed to the full extent", () => {
    expect(state.openTimeline?.zoom).toEqual([0, 1_000_000]);
    expect(state.openTimeline?.bounds).toEqual([0, 1_000_000]);
  });

  it("accepts windows inside the bounds unchanged", () => {
    expect(state.setZoom(100, 500)).toEqual([100, 500]);
  });

  it("clamps windows that extend past either bound", () => {
    expect(state.setZoom(-50, 500)).toEqual([0, 500]);
    expect(state.setZoom(900_000, 2_000_000)).toEqual([900_000, 1_000_000]);
    expect(state.setZoom(-10, 2_000_000)).toEqual([0, 1_000_000]);
  });

  it("normalizes inverted selections", () => {
    expect(state.setZoom(500, 100)).toEqual([100, 500]);
  });

  it("never collapses below one nanosecond", () => {
    const [a, b] = state.setZoom(400, 400);
    expect(b - a).toBe(1);
    expect(a).toBeGreaterThanOrEqual(0);
    expect(b).toBeLessThanOrEqual(1_000_000);
  });

  it("keeps a fully-outside selection within the bounds", () => {
    const [a, b] = state.setZoom(5_000_000, 6_000_000);
    expect(a).toBeGreaterThanOrEqual(0);
    expect(b).toBeLessThanOrEqual(1_000_000);
    expect(b - a).toBeGreaterThanOrEqual(1);
  });

  it("reset restores the original viewport after zooming", () => {
    state.setZoom(100, 500);
    expect(state.resetZoom()).toEqual([0, 1_000_000]);
    expect(state.openTimeline?.zoom).toEqual([0, 1_000_000]);
  });

  it("opening a new trace replaces bounds and zoom", () => {
    state.setZoom(100, 500);
    state.openTrace("trace-2", 0, 42);
    expect(state.openTimeline?.traceId).toBe("trace-2");
    expect(state.openTimeline?.zoom).toEqual([0, 42]);
  });

  it("rejects zoom operations with no open timeline", () => {
    const empty = new ViewState();
    expect(() => empty.setZoom(0, 1)).toThrow(/no timeline/);
    expect(() => empty.resetZoom()).toThrow(/no timeline/);
  });

  it("accepts only known level filters", () => {
    state.setLevelFilter("framework");
    expect(state.openTimeline?.levelFilter).toBe("framework");
    expect(() => state.setLevelFilter("kernel")).toThrow(/unknown level/);
  });
});

describe("ViewState job tracking", () => {
  it("tracks each job once, in submission order", () => {
    const state = new ViewState();
    state.trackJob("job-a");
    state.trackJob("job-b");
    state.trackJob("job-a");
    state.trackJob("");
    expect(state.activeJobIds).toEqual(["job-a", "job-b"]);
  });

  it("round-trips tracked jobs through storage", () => {
    const backing = new Map<string, string>();
    const storage = {
      getItem: (key: string) => backing.get(key) ?? null,
      setItem: (key: string, value: string) => void backing.set(key, value),
    };
    const first = new ViewState(storage);
    first.trackJob("job-1");
    first.trackJob("job-2");
    const second = new ViewState(storage);
    expect(second.activeJobIds).toEqual(["job-1", "job-2"]);
  });

  it("survives corrupted storage", () => {
    const storage = {
      getItem: () => "{not json",
      setItem: () => {},
    };
    expect(new ViewState(storage).activeJobIds).toEqual([]);
  });
});
