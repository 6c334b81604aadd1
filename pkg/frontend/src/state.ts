import type { ExplorerState, HistoryEntry, ModelInfo, SearchRequest, SearchResult } from "./types";

export function initialState(): ExplorerState {
  return {
    model: null,
    budget: 0,
    prefs: [],
    lastResult: null,
    lastRequest: null,
    history: [],
    pending: false,
    error: null,
  };
}

export function withModel(state: ExplorerState, model: ModelInfo): ExplorerState {
  return {
    ...state,
    model,
    budget: model.macs_max,
    prefs: model.tasks.map(() => 1.0),
    error: null,
  };
}

export function clampBudget(state: ExplorerState, raw: number): number {
  if (!state.model) return raw;
  return Math.min(state.model.macs_max, Math.max(state.model.macs_min, Math.round(raw)));
}

export function clampPref(raw: number): number {
  return Math.min(1, Math.max(0, raw));
}

export function setBudget(state: ExplorerState, raw: number): ExplorerState {
  return { ...state, budget: clampBudget(state, raw) };
}

export function setPref(state: ExplorerState, task: number, raw: number): ExplorerState {
  const prefs = state.prefs.slice();
  prefs[task] = clampPref(raw);
  return { ...state, prefs };
}

/** Request body built verbatim from the sliders; values round-trip exactly. */
export function buildRequest(state: ExplorerState, seed = 0): SearchRequest {
  return { budget_macs: state.budget, preferences: state.prefs.slice(), seed };
}

export function recordResult(
  state: ExplorerState,
  request: SearchRequest,
  result: SearchResult,
): ExplorerState {
  const entry: HistoryEntry = { request, result };
  return {
    ...state,
    lastResult: result,
    lastRequest: request,
    history: [...state.history, entry],
    pending: false,
    error: null,
  };
}

/** Exact service payload for download; byte-identical to what was received. */
export function exportPayload(state: ExplorerState): { filename: string; json: string } | null {
  if (!state.lastResult || !state.lastRequest) return null;
  const req = state.lastRequest;
  const prefsTag = req.preferences.map((p) => p.toFixed(2)).join("-");
  return {
    filename: `subnet-budget${req.budget_macs}-prefs${prefsTag}.json`,
    json: JSON.stringify(state.lastResult),
  };
}

/** Per-task predicted-loss deltas between the two latest history entries. */
export function latestComparison(state: ExplorerState): number[] | null {
  if (state.history.length < 2) return null;
  const prev = state.history[state.history.length - 2].result.predicted_losses;
  const last = state.history[state.history.length - 1].result.predicted_losses;
  return last.map((v, i) => v - prev[i]);
}
