import type { ExplorerState, ModelInfo, SearchResult } from "./types";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function renderBanner(root: HTMLElement, message: string | null): void {
  const banner = root.querySelector<HTMLElement>("#banner");
  if (!banner) return;
  banner.textContent = message ?? "";
  banner.style.display = message ? "block" : "none";
}

/** One preference slider per task plus the budget slider. */
export function renderControls(root: HTMLElement, model: ModelInfo): void {
  const controls = root.querySelector<HTMLElement>("#controls");
  if (!controls) return;
  clear(controls);

  const budgetRow = el("div", "control-row");
  const budgetLabel = el("label", "control-label", `budget (MACs ${model.macs_min} – ${model.macs_max})`);
  budgetLabel.htmlFor = "budget-slider";
  const budget = el("input");
  budget.type = "range";
  budget.id = "budget-slider";
  budget.min = String(model.macs_min);
  budget.max = String(model.macs_max);
  budget.step = "1";
  budget.value = String(model.macs_max);
  const budgetValue = el("span", "control-value", String(model.macs_max));
  budgetValue.id = "budget-value";
  budgetRow.append(budgetLabel, budget, budgetValue);
  controls.append(budgetRow);

  model.tasks.forEach((task) => {
    const row = el("div", "control-row");
    const label = el("label", "control-label", `${task.name} (${task.kind})`);
    label.htmlFor = `pref-slider-${task.id}`;
    const slider = el("input");
    slider.type = "range";
    slider.id = `pref-slider-${task.id}`;
    slider.className = "pref-slider";
    slider.dataset.task = String(task.id);
    slider.min = "0";
    slider.max = "1";
    slider.step = "0.01";
    slider.value = "1";
    const value = el("span", "control-value", "1.00");
    value.id = `pref-value-${task.id}`;
    row.append(label, slider, value);
    controls.append(row);
  });
}

export function setControlsEnabled(root: HTMLElement, enabled: boolean): void {
  root
    .querySelectorAll<HTMLInputElement | HTMLButtonElement>("input, button")
    .forEach((node) => {
      node.disabled = !enabled;
    });
}

function bar(label: string, fraction: number, text: string, cls: string): HTMLElement {
  const row = el("div", "bar-row");
  row.append(el("span", "bar-label", label));
  const track = el("div", "bar-track");
  const fill = el("div", `bar-fill ${cls}`);
  fill.style.width = `${Math.max(0, Math.min(1, fraction)) * 100}%`;
  fill.dataset.value = text;
  track.append(fill);
  row.append(track, el("span", "bar-value", text));
  return row;
}

/** Width bars (encoder then each decoder), loss bars, and the MACs gauge. */
export function renderResult(
  root: HTMLElement,
  model: ModelInfo,
  result: SearchResult,
  budget: number,
): void {
  const panel = root.querySelector<HTMLElement>("#result");
  if (!panel) return;
  clear(panel);

  const widths = el("div", "width-bars");
  widths.id = "width-bars";
  widths.append(el("h3", undefined, "architecture widths"));
  result.config.encoder.forEach((ratio, i) => {
    const row = bar(`encoder ${i}`, ratio, ratio.toFixed(1), "encoder-bar");
    row.dataset.group = "encoder";
    widths.append(row);
  });
  result.config.decoders.forEach((ratios, t) => {
    const name = model.tasks[t]?.name ?? `task ${t}`;
    ratios.forEach((ratio, i) => {
      const row = bar(`${name} dec ${i}`, ratio, ratio.toFixed(1), "decoder-bar");
      row.dataset.group = `decoder-${t}`;
      row.dataset.ratio = String(ratio);
      widths.append(row);
    });
  });
  panel.append(widths);

  const losses = el("div", "loss-bars");
  losses.id = "loss-bars";
  losses.append(el("h3", undefined, "predicted per-task losses"));
  const maxLoss = Math.max(...result.predicted_losses.map(Math.abs), 1e-9);
  result.predicted_losses.forEach((loss, t) => {
    const name = model.tasks[t]?.name ?? `task ${t}`;
    const row = bar(name, Math.abs(loss) / maxLoss, loss.toFixed(4), "loss-bar");
    row.dataset.task = String(t);
    row.dataset.loss = String(loss);
    losses.append(row);
  });
  panel.append(losses);

  const gauge = el("div", "gauge");
  gauge.id = "macs-gauge";
  gauge.append(el("h3", undefined, "compute"));
  const used = bar("achieved / budget", result.macs / budget, `${result.macs} / ${budget}`, "gauge-bar");
  gauge.append(used);
  panel.append(gauge);
}

export function renderSearchError(root: HTMLElement, message: string | null): void {
  const slot = root.querySelector<HTMLElement>("#search-error");
  if (!slot) return;
  slot.textContent = message ?? "";
  slot.style.display = message ? "block" : "none";
}

export function infeasibleMessage(macsMin: number | undefined): string {
  return macsMin === undefined
    ? "budget below minimum"
    : `budget below minimum (${macsMin} MACs)`;
}

/** History cards, newest last; the two newest carry a per-task loss delta. */
export function renderHistory(root: HTMLElement, state: ExplorerState): void {
  const list = root.querySelector<HTMLElement>("#history");
  if (!list) return;
  clear(list);
  state.history.forEach((entry, idx) => {
    const card = el("div", "history-card");
    card.dataset.index = String(idx);
    const prefs = entry.request.preferences.map((p) => p.toFixed(2)).join(", ");
    card.append(el("div", "history-title", `#${idx + 1} budget ${entry.request.budget_macs} prefs [${prefs}]`));
    card.append(
      el("div", "history-losses", `predicted: ${entry.result.predicted_losses.map((v) => v.toFixed(4)).join(", ")}`),
    );
    list.append(card);
  });
  if (state.history.length >= 2) {
    const prev = state.history[state.history.length - 2].result.predicted_losses;
    const last = state.history[state.history.length - 1].result.predicted_losses;
    const compare = el("div", "history-compare");
    compare.id = "history-compare";
    const deltas = last.map((v, i) => v - prev[i]);
    compare.append(
      el("div", "history-title", "latest vs previous (predicted loss delta)"),
      el("div", "history-deltas",
        deltas.map((d, i) => `${state.model?.tasks[i]?.name ?? i}: ${d >= 0 ? "+" : ""}${d.toFixed(4)}`).join("  ")),
    );
    list.append(compare);
  }
}

export function setExportEnabled(root: HTMLElement, enabled: boolean): void {
  const button = root.querySelector<HTMLButtonElement>("#export-button");
  if (button) button.disabled = !enabled;
}
