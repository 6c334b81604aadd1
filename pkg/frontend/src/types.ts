/**
 * Types mirroring the HTTP API payloads. The UI never computes losses or
 * widths itself; every displayed number comes from one of these responses.
 */

export interface TaskInfo {
  id: number;
  name: string;
  kind: "classification" | "regression";
}

export interface ModelInfo {
  tasks: TaskInfo[];
  width_list: number[];
  layer_counts: { encoder: number; decoders: number[] };
  macs_min: number;
  macs_max: number;
}

export interface SearchRequest {
  budget_macs: number;
  preferences: number[];
  seed?: number;
  cycles?: number;
}

export interface WidthConfigJson {
  encoder: number[];
  decoders: number[][];
}

export interface TraceEntry {
  cycle: number;
  best_predicted: number;
  macs: number;
  pool_size: number;
}

export interface SearchResult {
  config: WidthConfigJson;
  macs: number;
  predicted_losses: number[];
  preferred_task: number;
  trace: TraceEntry[];
}

export interface EvaluateResult {
  losses: number[];
  metrics: Record<string, Record<string, number>>;
  macs: number;
}

export interface ApiErrorBody {
  error: string;
  macs_min?: number;
}

/** One remembered search interaction, append-only within the session. */
export interface HistoryEntry {
  request: SearchRequest;
  result: SearchResult;
}

export interface ExplorerState {
  model: ModelInfo | null;
  budget: number;
  prefs: number[];
  lastResult: SearchResult | null;
  lastRequest: SearchRequest | null;
  history: HistoryEntry[];
  pending: boolean;
  error: string | null;
}
