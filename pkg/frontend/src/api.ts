import type { ApiErrorBody, EvaluateResult, ModelInfo, SearchRequest, SearchResult } from "./types";

export class ApiError extends Error {
  status: number;
  body: ApiErrorBody;

  constructor(status: number, body: ApiErrorBody) {
    super(body.error ?? `request failed with status ${status}`);
    this.status = status;
    this.body = body;
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  const text = await resp.text();
  let body: unknown = {};
  try {
    body = text ? JSON.parse(text) : {};
  } catch {
    body = { error: text };
  }
  if (!resp.ok) {
    throw new ApiError(resp.status, body as ApiErrorBody);
  }
  return body as T;
}

export function apiBase(): string {
  const fromEnv =
    typeof window !== "undefined" && (window as any).ECMT_API_BASE
      ? String((window as any).ECMT_API_BASE)
      : "";
  return fromEnv.replace(/\/$/, "");
}

export async function fetchModel(base: string = apiBase()): Promise<ModelInfo> {
  return parseOrThrow<ModelInfo>(await fetch(`${base}/api/model`));
}

export async function postSearch(
  request: SearchRequest,
  base: string = apiBase(),
): Promise<SearchResult> {
  const resp = await fetch(`${base}/api/search`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(request),
  });
  return parseOrThrow<SearchResult>(resp);
}

export async function postEvaluate(
  config: SearchResult["config"],
  base: string = apiBase(),
): Promise<EvaluateResult> {
  const resp = await fetch(`${base}/api/evaluate`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ config }),
  });
  return parseOrThrow<EvaluateResult>(resp);
}
