/** JSON payload shapes served by the causal-discovery HTTP API (v1 schema tags). */

export interface GraphEdge {
  from: string;
  to: string;
  score: number;
  lag: number | null;
}

export interface GraphPayload {
  schema: string;
  nodes: string[];
  edges: GraphEdge[];
  tau: number;
  epsilon: number | null;
}

export interface GradientsPayload {
  schema: string;
  target: string;
  sources: string[];
  /** Rows are window positions, oldest first; columns follow `sources`. */
  matrix: number[][];
}

export interface PriorPayload {
  excluded: [string, string][];
  provenance: Record<string, Record<string, unknown>>;
}

export interface RunError {
  stage: string;
  message: string;
}

export interface RunRecord {
  schema: string;
  run_id: string;
  dataset_ref: string;
  config: Record<string, unknown>;
  prior: PriorPayload;
  tau: number;
  epsilon: number;
  min_sensitivity: number;
  parent_id: string | null;
  created_at: string;
  completed_at: string | null;
  error: RunError | null;
  telemetry: Record<string, unknown>;
  has_graph: boolean;
  has_report: boolean;
}

export type JobStatus = "queued" | "running" | "done" | "failed";

export interface JobPayload {
  schema: string;
  job_id: string;
  kind: string;
  status: JobStatus;
  run_id: string;
  error: RunError | null;
  queue_position: number;
}

export interface ErrorPayload {
  schema: string;
  message: string;
  queue_position?: number;
}

/** Directed pair rendered as "cause->effect"; the key format used throughout. */
export function edgeKey(from: string, to: string): string {
  return `${from}->${to}`;
}

/**
 * Split an edge key back into its pair.
 *
 * @param key - A string produced by edgeKey.
 * @returns The [cause, effect] pair.
 */
export function splitEdgeKey(key: string): [string, string] {
  const idx = key.indexOf("->");
  if (idx < 0) throw new Error(`not an edge key: ${key}`);
  return [key.slice(0, idx), key.slice(idx + 2)];
}
