/** Deterministic layered layout for small directed graphs. */

export interface Point {
  x: number;
  y: number;
}

export interface Layout {
  positions: Map<string, Point>;
  width: number;
  height: number;
}

export const NODE_W = 110;
export const NODE_H = 34;
const COL_GAP = 190;
const ROW_GAP = 84;
const MARGIN = 40;

/**
 * Drop self-loops and cycle-closing edges so layering terminates.
 *
 * Nodes are visited in sorted order and edges in sorted target order,
 * so the same graph always keeps the same edge subset.
 */
function acyclicSubset(
  nodes: string[],
  edges: [string, string][],
): [string, string][] {
  const out = new Map<string, string[]>(nodes.map((n) => [n, []]));
  for (const [from, to] of edges) {
    if (from !== to && out.has(from) && out.has(to)) out.get(from)!.push(to);
  }
  for (const targets of out.values()) targets.sort();

  const state = new Map<string, "open" | "done">();
  const kept: [string, string][] = [];
  const visit = (node: string) => {
    state.set(node, "open");
    for (const next of out.get(node)!) {
      const s = state.get(next);
      if (s === "open") continue; // closing a cycle, skip for layering
      kept.push([node, next]);
      if (s !== "done") visit(next);
    }
    state.set(node, "done");
  };
  for (const node of [...nodes].sort()) {
    if (!state.has(node)) visit(node);
  }
  return kept;
}

/**
 * Place nodes on a left-to-right layered grid.
 *
 * Causes sit in earlier columns than their effects wherever the edge
 * set allows it; cycles are tolerated by ignoring the edges that close
 * them. The result depends only on the sorted input, never on
 * randomness, so two renders of the same graph are identical.
 *
 * @param nodes - Node names (order does not matter).
 * @param edges - Directed [from, to] pairs.
 * @returns Pixel positions for each node's top-left corner plus the
 *   canvas size that fits them.
 */
export function layoutGraph(
  nodes: string[],
  edges: [string, string][],
): Layout {
  const sorted = [...new Set(nodes)].sort();
  const kept = acyclicSubset(sorted, edges);

  const layer = new Map<string, number>(sorted.map((n) => [n, 0]));
  // relaxation over the acyclic subset; |V| passes reach a fixed point
  for (let pass = 0; pass < sorted.length; pass += 1) {
    let moved = false;
    for (const [from, to] of kept) {
      const want = layer.get(from)! + 1;
      if (layer.get(to)! < want) {
        layer.set(to, want);
        moved = true;
      }
    }
    if (!moved) break;
  }

  const columns = new Map<number, string[]>();
  for (const node of sorted) {
    const l = layer.get(node)!;
    if (!columns.has(l)) columns.set(l, []);
    columns.get(l)!.push(node);
  }

  const positions = new Map<string, Point>();
  let maxRows = 1;
  for (const [l, members] of columns) {
    maxRows = Math.max(maxRows, members.length);
    members.forEach((node, row) => {
      positions.set(node, {
        x: MARGIN + l * COL_GAP,
        y: MARGIN + row * ROW_GAP,
      });
    });
  }
  const layerCount = columns.size === 0 ? 1 : Math.max(...columns.keys()) + 1;
  return {
    positions,
    width: MARGIN * 2 + (layerCount - 1) * COL_GAP + NODE_W,
    height: MARGIN * 2 + (maxRows - 1) * ROW_GAP + NODE_H,
  };
}
