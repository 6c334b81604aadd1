import { ApiError, fetchModel, postSearch } from "./api";
import {
  buildRequest,
  initialState,
  recordResult,
  setBudget,
  setPref,
  exportPayload,
  withModel,
} from "./state";
import {
  infeasibleMessage,
  renderBanner,
  renderControls,
  renderHistory,
  renderResult,
  renderSearchError,
  setControlsEnabled,
  setExportEnabled,
} from "./render";
import type { ExplorerState } from "./types";

let state: ExplorerState = initialState();

function root(): HTMLElement {
  return document.body;
}

function wireControls(): void {
  const budget = document.querySelector<HTMLInputElement>("#budget-slider");
  budget?.addEventListener("input", () => {
    state = setBudget(state, Number(budget.value));
    const value = document.querySelector("#budget-value");
    if (value) value.textContent = String(state.budget);
  });
  document.querySelectorAll<HTMLInputElement>(".pref-slider").forEach((slider) => {
    slider.addEventListener("input", () => {
      const task = Number(slider.dataset.task);
      state = setPref(state, task, Number(slider.value));
      const value = document.querySelector(`#pref-value-${task}`);
      if (value) value.textContent = state.prefs[task].toFixed(2);
    });
  });
}

async function runSearch(): Promise<void> {
  const model = state.model;
  if (!model || state.pending) return;
  state = { ...state, pending: true };
  setControlsEnabled(root(), false);
  renderSearchError(root(), null);
  const request = buildRequest(state);
  try {
    const result = await postSearch(request);
    state = recordResult(state, request, result);
    renderResult(root(), model, result, request.budget_macs);
    renderHistory(root(), state);
    setExportEnabled(root(), true);
  } catch (err) {
    state = { ...state, pending: false };
    if (err instanceof ApiError && err.status === 422) {
      renderSearchError(root(), infeasibleMessage(err.body.macs_min));
    } else if (err instanceof ApiError) {
      renderSearchError(root(), err.body.error ?? "search failed");
    } else {
      renderSearchError(root(), "service unreachable");
    }
  } finally {
    setControlsEnabled(root(), true);
  }
}

function downloadExport(): void {
  const payload = exportPayload(state);
  if (!payload) return;
  const blob = new Blob([payload.json], { type: "application/json" });
  const url = URL.createObjectURL(blob);
  const anchor = document.createElement("a");
  anchor.href = url;
  anchor.download = payload.filename;
  anchor.click();
  URL.revokeObjectURL(url);
}

export async function boot(): Promise<void> {
  try {
    const model = await fetchModel();
    state = withModel(state, model);
    renderBanner(root(), null);
    renderControls(root(), model);
    wireControls();
    setControlsEnabled(root(), true);
    setExportEnabled(root(), false);
  } catch {
    renderBanner(root(), "service unreachable — controls disabled");
    setControlsEnabled(root(), false);
    return;
  }
  document.querySelector("#search-button")?.addEventListener("click", () => {
    void runSearch();
  });
  document.querySelector("#export-button")?.addEventListener("click", downloadExport);
}

if (typeof document !== "undefined" && document.querySelector("#controls")) {
  void boot();
}
