/** Typed client for the causal-discovery HTTP API. */

import type {
  ErrorPayload,
  GradientsPayload,
  GraphPayload,
  JobPayload,
  RunRecord,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Error carrying the HTTP status and the server's error payload. */
export class ApiError extends Error {
  readonly status: number;
  readonly payload: ErrorPayload | null;

  constructor(status: number, payload: ErrorPayload | null) {
    super(payload?.message ?? `request failed with status ${status}`);
    this.status = status;
    this.payload = payload;
  }

  /** Queue position reported alongside a 409, if any. */
  get queuePosition(): number | null {
    return this.payload?.queue_position ?? null;
  }
}

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  /** Injectable clock for tests. */
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) =>
  new Promise<void>((resolve) => setTimeout(resolve, ms));

/**
 * Small wrapper over fetch with one method per endpoint.
 *
 * The fetch implementation is injectable so tests can run without a
 * server. Mutations carry a client-generated request id; the client
 * reuses the same id when retrying one logical submission so a retry
 * never means a second intent.
 */
export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      let payload: ErrorPayload | null = null;
      try {
        payload = (await response.json()) as ErrorPayload;
      } catch {
        payload = null;
      }
      throw new ApiError(response.status, payload);
    }
    return (await response.json()) as T;
  }

  /** @returns All run records, newest last (server order). */
  async listRuns(): Promise<RunRecord[]> {
    const body = await this.request<{ runs: RunRecord[] }>("/runs");
    return body.runs;
  }

  getRun(runId: string): Promise<RunRecord> {
    return this.request<RunRecord>(`/runs/${encodeURIComponent(runId)}`);
  }

  getGraph(runId: string): Promise<GraphPayload> {
    return this.request<GraphPayload>(
      `/runs/${encodeURIComponent(runId)}/graph`,
    );
  }

  getGradients(runId: string, target: string): Promise<GradientsPayload> {
    return this.request<GradientsPayload>(
      `/runs/${encodeURIComponent(runId)}/gradients/${encodeURIComponent(target)}`,
    );
  }

  /**
   * Queue a refinement run that excludes the given links from the parent.
   *
   * @param runId - Parent run id.
   * @param pairs - Non-empty (cause, effect) pairs to exclude.
   * @param requestId - Client-generated idempotency id; reuse it when
   *   retrying the same submission.
   * @returns The queued job (HTTP 202).
   */
  submitExclusions(
    runId: string,
    pairs: [string, string][],
    requestId: string,
  ): Promise<JobPayload> {
    if (pairs.length === 0) {
      return Promise.reject(new Error("no exclusions selected"));
    }
    return this.request<JobPayload>(
      `/runs/${encodeURIComponent(runId)}/exclusions`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ exclusions: pairs, request_id: requestId }),
      },
    );
  }

  jobStatus(jobId: string): Promise<JobPayload> {
    return this.request<JobPayload>(`/jobs/${encodeURIComponent(jobId)}`
      + "/status");
  }

  /**
   * Poll a job at a fixed interval until it settles.
   *
   * @returns The final job payload; status is "done" or "failed".
   */
  async pollJob(jobId: string, options: PollOptions = {}): Promise<JobPayload> {
    const interval = options.intervalMs ?? 2000;
    const timeout = options.timeoutMs ?? 30 * 60 * 1000;
    const sleep = options.sleep ?? defaultSleep;
    const deadline = Date.now() + timeout;
    for (;;) {
      const job = await this.jobStatus(jobId);
      if (job.status === "done" || job.status === "failed") return job;
      if (Date.now() >= deadline) {
        throw new Error(`job ${jobId} still ${job.status} after ${timeout}ms`);
      }
      await sleep(interval);
    }
  }
}

/** Fresh idempotency id for one logical mutation. */
export function newRequestId(): string {
  const rand =
    globalThis.crypto && "randomUUID" in globalThis.crypto
      ? globalThis.crypto.randomUUID()
      : Math.random().toString(36).slice(2);
  return `req-${rand}`;
}
