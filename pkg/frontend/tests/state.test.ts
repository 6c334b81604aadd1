import { describe, expect, it } from "vitest";

import {
  buildRequest,
  clampPref,
  exportPayload,
  initialState,
  latestComparison,
  recordResult,
  setBudget,
  setPref,
  withModel,
} from "../src/state";
import type { ModelInfo, SearchResult } from "../src/types";

const MODEL: ModelInfo = {
  tasks: [
    { id: 0, name: "shape", kind: "classification" },
    { id: 1, name: "area", kind: "regression" },
    { id: 2, name: "cx", kind: "regression" },
  ],
  width_list: [0.6, 0.7, 0.8, 0.9, 1.0],
  layer_counts: { encoder: 2, decoders: [1, 1, 1] },
  macs_min: 100_000,
  macs_max: 400_000,
};

function result(losses: number[], macs = 123): SearchResult {
  return {
    config: { encoder: [1.0, 0.8], decoders: [[1.0], [0.6], [0.8]] },
    macs,
    predicted_losses: losses,
    preferred_task: 0,
    trace: [],
  };
}

describe("state", () => {
  it("loads model info into sliders", () => {
    const s = withModel(initialState(), MODEL);
    expect(s.budget).toBe(MODEL.macs_max);
    expect(s.prefs).toEqual([1, 1, 1]);
  });

  it("clamps budget to the model range", () => {
    const s = withModel(initialState(), MODEL);
    expect(setBudget(s, 1).budget).toBe(MODEL.macs_min);
    expect(setBudget(s, 10 ** 9).budget).toBe(MODEL.macs_max);
    expect(setBudget(s, 200_000).budget).toBe(200_000);
  });

  it("clamps preferences to [0, 1]", () => {
    expect(clampPref(-0.5)).toBe(0);
    expect(clampPref(1.5)).toBe(1);
    const s = setPref(withModel(initialState(), MODEL), 1, 0.37);
    expect(s.prefs[1]).toBe(0.37);
  });

  it("slider values round-trip exactly into the request body", () => {
    let s = withModel(initialState(), MODEL);
    s = setBudget(s, 250_001);
    s = setPref(s, 0, 0.37);
    s = setPref(s, 2, 0.91);
    const body = buildRequest(s, 5);
    expect(body).toEqual({
      budget_macs: 250_001,
      preferences: [0.37, 1, 0.91],
      seed: 5,
    });
  });

  it("history is append-only", () => {
    let s = withModel(initialState(), MODEL);
    const r1 = result([1, 2, 3]);
    const r2 = result([0.5, 2, 3]);
    s = recordResult(s, buildRequest(s), r1);
    const afterFirst = s.history.slice();
    s = recordResult(s, buildRequest(s), r2);
    expect(s.history.length).toBe(2);
    expect(s.history.slice(0, 1)).toEqual(afterFirst);
    expect(s.lastResult).toBe(r2);
  });

  it("compares the two latest entries", () => {
    let s = withModel(initialState(), MODEL);
    expect(latestComparison(s)).toBeNull();
    s = recordResult(s, buildRequest(s), result([1, 2, 3]));
    expect(latestComparison(s)).toBeNull();
    s = recordResult(s, buildRequest(s), result([0.5, 2.5, 3]));
    expect(latestComparison(s)).toEqual([-0.5, 0.5, 0]);
  });

  it("export is byte-identical to the service payload and names the query", () => {
    let s = withModel(initialState(), MODEL);
    expect(exportPayload(s)).toBeNull();
    s = setBudget(s, 300_000);
    s = setPref(s, 1, 0.25);
    const r = result([1, 2, 3]);
    s = recordResult(s, buildRequest(s), r);
    const dump = exportPayload(s)!;
    expect(dump.json).toBe(JSON.stringify(r));
    expect(dump.filename).toBe("subnet-budget300000-prefs1.00-0.25-1.00.json");
  });

  it("export always reflects the latest search", () => {
    let s = withModel(initialState(), MODEL);
    s = recordResult(s, buildRequest(s), result([1, 1, 1], 100));
    s = recordResult(s, buildRequest(s), result([2, 2, 2], 200));
    expect(JSON.parse(exportPayload(s)!.json).macs).toBe(200);
  });
});
