/** View state for one run's extracted graph plus local exclusion toggles. */

import { layoutGraph } from "./layout.js";
import type { GraphEdge, GraphPayload, RunRecord } from "./types.js";
import { edgeKey } from "./types.js";

/**
 * Accepted edges come straight from the server graph. A pending
 * exclusion is a local, unsaved toggle. An excluded edge is one the
 * run's prior knowledge already vetoes; it cannot be toggled here.
 */
export type EdgeState = "accepted" | "pending-exclusion" | "excluded";

export interface ViewNode {
  name: string;
  x: number;
  y: number;
}

export interface ViewEdge {
  from: string;
  to: string;
  score: number;
  lag: number | null;
  state: EdgeState;
}

export interface GraphViewModel {
  runId: string;
  /** Ancestor run ids, nearest parent first. */
  parentChain: string[];
  nodes: ViewNode[];
  edges: ViewEdge[];
  width: number;
  height: number;
}

/**
 * Classify one served edge against the run's prior and local toggles.
 */
export function edgeState(
  edge: GraphEdge,
  excludedKeys: Set<string>,
  pendingKeys: Set<string>,
): EdgeState {
  const key = edgeKey(edge.from, edge.to);
  if (excludedKeys.has(key)) return "excluded";
  if (pendingKeys.has(key)) return "pending-exclusion";
  return "accepted";
}

/** Keys of the (cause, effect) pairs a run's prior knowledge excludes. */
export function excludedKeysOf(record: RunRecord): Set<string> {
  return new Set(record.prior.excluded.map(([c, e]) => edgeKey(c, e)));
}

/**
 * Walk parent_id links through the known records.
 *
 * @param runId - Starting run.
 * @param records - All known records, keyed by run id.
 * @returns Ancestor ids, nearest parent first.
 */
export function parentChainOf(
  runId: string,
  records: Map<string, RunRecord>,
): string[] {
  const chain: string[] = [];
  let current = records.get(runId);
  while (current && current.parent_id) {
    if (chain.includes(current.parent_id)) break;
    chain.push(current.parent_id);
    current = records.get(current.parent_id);
  }
  return chain;
}

/**
 * Build the render-ready model for one run.
 *
 * Every edge in the result comes from the server graph payload; local
 * state only ever relabels them, so nothing the server did not extract
 * can appear.
 *
 * @param record - The run's record (source of prior knowledge).
 * @param graph - The run's extracted graph.
 * @param pendingKeys - Edge keys toggled locally but not yet submitted.
 * @param records - Known records for resolving the parent chain.
 * @returns Positioned nodes and classified edges.
 */
export function buildViewModel(
  record: RunRecord,
  graph: GraphPayload,
  pendingKeys: Set<string>,
  records: Map<string, RunRecord>,
): GraphViewModel {
  const excluded = excludedKeysOf(record);
  const placed = layoutGraph(
    graph.nodes,
    graph.edges.map((e) => [e.from, e.to]),
  );
  const nodes = graph.nodes.map((name) => ({
    name,
    x: placed.positions.get(name)!.x,
    y: placed.positions.get(name)!.y,
  }));
  const edges = graph.edges.map((e) => ({
    from: e.from,
    to: e.to,
    score: e.score,
    lag: e.lag,
    state: edgeState(e, excluded, pendingKeys),
  }));
  return {
    runId: record.run_id,
    parentChain: parentChainOf(record.run_id, records),
    nodes,
    edges,
    width: placed.width,
    height: placed.height,
  };
}

/**
 * Toggle one edge's pending-exclusion flag.
 *
 * Excluded edges are inert: the prior already vetoes them, so the set
 * comes back unchanged.
 *
 * @returns A new pending-key set; the input is not mutated.
 */
export function togglePending(
  vm: GraphViewModel,
  from: string,
  to: string,
  pendingKeys: Set<string>,
): Set<string> {
  const key = edgeKey(from, to);
  const edge = vm.edges.find((e) => e.from === from && e.to === to);
  if (!edge || edge.state === "excluded") return new Set(pendingKeys);
  const next = new Set(pendingKeys);
  if (next.has(key)) next.delete(key);
  else next.add(key);
  return next;
}
