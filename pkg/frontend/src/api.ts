/** Typed client for the review API. Every non-2xx response is one ApiError
 * body; mutations echo the last-seen job version (server answers 409 when it
 * is stale) and carry an idempotency key so retries are safe. */

import type {
  ApiErrorBody,
  GraphView,
  JobSummary,
  Passage,
  ReviewActionDraft,
  StageItems,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly details: Record<string, unknown>;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.status = status;
    this.code = body.code;
    this.details = body.details ?? {};
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

let idempotencyCounter = 0;

export function freshIdempotencyKey(): string {
  idempotencyCounter += 1;
  return `ui-${Date.now().toString(36)}-${idempotencyCounter}`;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    idempotencyKey?: string,
  ): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (idempotencyKey) headers["Idempotency-Key"] = idempotencyKey;
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    const parsed = text ? JSON.parse(text) : {};
    if (!response.ok) {
      throw new ApiError(response.status, parsed as ApiErrorBody);
    }
    return parsed as T;
  }

  createJob(input: { url?: string; text?: string; html?: string; config?: object }) {
    return this.request<{ job_id: string; stage: string; version: number }>(
      "POST",
      "/jobs",
      input,
      freshIdempotencyKey(),
    );
  }

  getJob(jobId: string) {
    return this.request<JobSummary>("GET", `/jobs/${jobId}`);
  }

  getPassages(jobId: string) {
    return this.request<{ passages: Passage[] }>("GET", `/jobs/${jobId}/passages`);
  }

  getStageItems(jobId: string, stage: string) {
    return this.request<StageItems>("GET", `/jobs/${jobId}/stage/${stage}/items`);
  }

  submitReview(
    jobId: string,
    actions: ReviewActionDraft[],
    complete: boolean,
    version?: number,
  ) {
    return this.request<JobSummary>(
      "POST",
      `/jobs/${jobId}/review`,
      { actions, complete, version },
      freshIdempotencyKey(),
    );
  }

  advance(jobId: string, version?: number) {
    return this.request<JobSummary>(
      "POST",
      `/jobs/${jobId}/advance`,
      { version },
      freshIdempotencyKey(),
    );
  }

  getGraph(jobId: string, preview = false) {
    const suffix = preview ? "?preview=true" : "";
    return this.request<GraphView>("GET", `/jobs/${jobId}/graph${suffix}`);
  }

  getMeta() {
    return this.request<{
      entity_types: string[];
      indicator_subtypes: string[];
      relationship_labels: string[];
      stages: string[];
    }>("GET", "/meta");
  }
}
