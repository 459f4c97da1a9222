/** Hand-built payloads shared by the unit suites. */

import type { GraphPayload, RunRecord } from "../src/types.js";

export function makeRecord(overrides: Partial<RunRecord> = {}): RunRecord {
  return {
    schema: "causalgrad-run-v1",
    run_id: "run-0001",
    dataset_ref: "/data/demo",
    config: {},
    prior: { excluded: [], provenance: {} },
    tau: 0.15,
    epsilon: 0.05,
    min_sensitivity: 0.04,
    parent_id: null,
    created_at: "2026-08-16T00:00:00Z",
    completed_at: "2026-08-16T00:05:00Z",
    error: null,
    telemetry: {},
    has_graph: true,
    has_report: true,
    ...overrides,
  };
}

export function makeGraph(overrides: Partial<GraphPayload> = {}): GraphPayload {
  return {
    schema: "causalgrad-graph-v1",
    nodes: ["X1", "X2", "X3"],
    edges: [
      { from: "X1", to: "X2", score: 1.0, lag: 2 },
      { from: "X2", to: "X3", score: 0.61, lag: 1 },
    ],
    tau: 0.15,
    epsilon: 0.05,
    ...overrides,
  };
}
