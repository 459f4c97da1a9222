/** Pure SVG renderers: given fetched state, return markup strings. */

import { NODE_H, NODE_W } from "./layout.js";
import type { GradientsPayload } from "./types.js";
import type { GraphViewModel, ViewEdge } from "./viewmodel.js";

/** Escape text for use in SVG/HTML content and attributes. */
export function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const GRAPH_STYLE = `
  .node rect { fill: var(--node-fill, #f4f6fb); stroke: #5b6b8c; rx: 6; }
  .node text { font: 13px system-ui, sans-serif; fill: #1d2433; }
  .edge line, .edge path { fill: none; stroke-width: 1.6; }
  .edge text { font: 11px system-ui, sans-serif; fill: #3a4256; }
  .edge.accepted line, .edge.accepted path { stroke: #3f7d5a; }
  .edge.pending-exclusion line, .edge.pending-exclusion path {
    stroke: #b03030; stroke-dasharray: 7 3; }
  .edge.pending-exclusion text { fill: #b03030; text-decoration: line-through; }
  .edge.excluded line, .edge.excluded path {
    stroke: #9aa1ad; stroke-dasharray: 2 4; }
  .edge.excluded text { fill: #9aa1ad; }
  .edge.toggleable { cursor: pointer; }
`;

function edgeLabel(edge: ViewEdge): string {
  const score = edge.score.toFixed(2);
  return edge.lag === null ? score : `lag ${edge.lag} · ${score}`;
}

function arrowFor(state: string): string {
  return state === "accepted" ? "url(#arrow)" : "url(#arrow-muted)";
}

interface Pt {
  x: number;
  y: number;
}

function center(vm: GraphViewModel, name: string): Pt {
  const node = vm.nodes.find((n) => n.name === name)!;
  return { x: node.x + NODE_W / 2, y: node.y + NODE_H / 2 };
}

/** Trim a segment so it starts and ends on the node boxes, not centers. */
function trim(a: Pt, b: Pt): [Pt, Pt] {
  const dx = b.x - a.x;
  const dy = b.y - a.y;
  const len = Math.hypot(dx, dy) || 1;
  const ux = dx / len;
  const uy = dy / len;
  const pad = (u: number, v: number) =>
    Math.min(
      Math.abs(u) > 1e-9 ? NODE_W / 2 / Math.abs(u) : Infinity,
      Math.abs(v) > 1e-9 ? NODE_H / 2 / Math.abs(v) : Infinity,
    ) + 3;
  const pa = pad(ux, uy);
  return [
    { x: a.x + ux * pa, y: a.y + uy * pa },
    { x: b.x - ux * pa, y: b.y - uy * pa },
  ];
}

function renderEdge(vm: GraphViewModel, edge: ViewEdge): string {
  const key = `${edge.from}->${edge.to}`;
  const toggle = edge.state === "excluded" ? "" : " toggleable";
  const cls = `edge ${edge.state}${toggle}`;
  const dataAttrs =
    `data-edge="${esc(key)}"` +
    (edge.state === "excluded" ? "" : ' data-toggleable="1"');
  const label = esc(edgeLabel(edge));
  if (edge.from === edge.to) {
    const c = center(vm, edge.from);
    const top = c.y - NODE_H / 2;
    const d =
      `M ${c.x - 14} ${top} C ${c.x - 26} ${top - 34}, ` +
      `${c.x + 26} ${top - 34}, ${c.x + 14} ${top}`;
    return (
      `<g class="${cls}" ${dataAttrs}>` +
      `<path d="${d}" marker-end="${arrowFor(edge.state)}"/>` +
      `<text x="${c.x}" y="${top - 28}" text-anchor="middle">${label}</text>` +
      `</g>`
    );
  }
  const [a, b] = trim(center(vm, edge.from), center(vm, edge.to));
  const mx = (a.x + b.x) / 2;
  const my = (a.y + b.y) / 2 - 6;
  return (
    `<g class="${cls}" ${dataAttrs}>` +
    `<line x1="${a.x.toFixed(1)}" y1="${a.y.toFixed(1)}" ` +
    `x2="${b.x.toFixed(1)}" y2="${b.y.toFixed(1)}" ` +
    `marker-end="${arrowFor(edge.state)}"/>` +
    `<text x="${mx.toFixed(1)}" y="${my.toFixed(1)}" ` +
    `text-anchor="middle">${label}</text>` +
    `</g>`
  );
}

/**
 * Render a run's graph as a standalone SVG string.
 *
 * Accepted edges are solid, pending exclusions struck out, inherited
 * exclusions dashed and inert. Toggleable edges carry data-edge and
 * data-toggleable attributes for click delegation.
 *
 * @param vm - The positioned, classified view model.
 * @returns SVG markup, or an empty-state paragraph when the graph has
 *   no nodes.
 */
export function renderGraphSVG(vm: GraphViewModel): string {
  if (vm.nodes.length === 0) {
    return `<p class="empty-state">This run extracted an empty graph.</p>`;
  }
  const nodes = vm.nodes
    .map(
      (n) =>
        `<g class="node" data-node="${esc(n.name)}">` +
        `<rect x="${n.x}" y="${n.y}" width="${NODE_W}" height="${NODE_H}" rx="6"/>` +
        `<text x="${n.x + NODE_W / 2}" y="${n.y + NODE_H / 2 + 4}" ` +
        `text-anchor="middle">${esc(n.name)}</text>` +
        `</g>`,
    )
    .join("");
  const edges = vm.edges.map((e) => renderEdge(vm, e)).join("");
  const note =
    vm.edges.length === 0
      ? `<text class="empty-state" x="${vm.width / 2}" y="${vm.height - 12}" ` +
        `text-anchor="middle" font-size="12" fill="#6a7284">` +
        `No edges cleared the threshold for this run.</text>`
      : "";
  const extraTop = vm.edges.some((e) => e.from === e.to) ? 46 : 0;
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" class="graph" ` +
    `viewBox="0 ${-extraTop} ${vm.width} ${vm.height + extraTop}" ` +
    `width="${vm.width}" height="${vm.height + extraTop}" role="img">` +
    `<style>${GRAPH_STYLE}</style>` +
    `<defs>` +
    `<marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" ` +
    `markerWidth="7" markerHeight="7" orient="auto-start-reverse">` +
    `<path d="M 0 0 L 10 5 L 0 10 z" fill="#3f7d5a"/></marker>` +
    `<marker id="arrow-muted" viewBox="0 0 10 10" refX="9" refY="5" ` +
    `markerWidth="7" markerHeight="7" orient="auto-start-reverse">` +
    `<path d="M 0 0 L 10 5 L 0 10 z" fill="#9aa1ad"/></marker>` +
    `</defs>` +
    edges +
    nodes +
    note +
    `</svg>`
  );
}

/**
 * Diverging color for a signed sensitivity value.
 *
 * @param value - The cell's signed value.
 * @param vmax - The matrix's maximum absolute value; 0 means neutral.
 * @returns An rgb() string: blue for negative, white near zero, red
 *   for positive.
 */
export function divergingColor(value: number, vmax: number): string {
  if (vmax <= 0) return "rgb(245,245,245)";
  const t = Math.max(-1, Math.min(1, value / vmax));
  const mix = (from: number, to: number) =>
    Math.round(from + (to - from) * Math.abs(t));
  if (t >= 0) {
    return `rgb(${mix(245, 178)},${mix(245, 24)},${mix(245, 43)})`;
  }
  return `rgb(${mix(245, 33)},${mix(245, 102)},${mix(245, 172)})`;
}

const CELL = 34;
const LEFT = 70;
const TOP = 46;

/**
 * Render one target's gradient matrix as a heatmap SVG string.
 *
 * Rows are window positions (oldest first, labeled by lag), columns
 * source variables. The largest-magnitude cell gets an outline; an
 * all-zero matrix renders uniformly neutral with no outline.
 *
 * @param grads - The served gradients payload.
 * @returns SVG markup.
 */
export function renderHeatmapSVG(grads: GradientsPayload): string {
  const rows = grads.matrix.length;
  const cols = grads.sources.length;
  let vmax = 0;
  let argRow = -1;
  let argCol = -1;
  for (let r = 0; r < rows; r += 1) {
    for (let c = 0; c < cols; c += 1) {
      const v = Math.abs(grads.matrix[r][c]);
      if (v > vmax) {
        vmax = v;
        argRow = r;
        argCol = c;
      }
    }
  }
  const cells: string[] = [];
  for (let r = 0; r < rows; r += 1) {
    for (let c = 0; c < cols; c += 1) {
      const v = grads.matrix[r][c];
      cells.push(
        `<rect class="cell" data-row="${r}" data-col="${c}" ` +
          `data-value="${v}" x="${LEFT + c * CELL}" y="${TOP + r * CELL}" ` +
          `width="${CELL - 2}" height="${CELL - 2}" ` +
          `fill="${divergingColor(v, vmax)}">` +
          `<title>${esc(grads.sources[c])}, ${rows - r} back: ` +
          `${v.toExponential(3)}</title></rect>`,
      );
    }
  }
  const outline =
    vmax > 0
      ? `<rect class="argmax-outline" x="${LEFT + argCol * CELL - 2}" ` +
        `y="${TOP + argRow * CELL - 2}" width="${CELL + 2}" ` +
        `height="${CELL + 2}" fill="none" stroke="#1d2433" stroke-width="2.5"/>`
      : "";
  const colLabels = grads.sources
    .map(
      (s, c) =>
        `<text x="${LEFT + c * CELL + CELL / 2 - 1}" y="${TOP - 10}" ` +
        `text-anchor="middle" font-size="11">${esc(s)}</text>`,
    )
    .join("");
  const rowLabels = grads.matrix
    .map((_, r) => {
      const lag = rows - r;
      return (
        `<text x="${LEFT - 8}" y="${TOP + r * CELL + CELL / 2 + 3}" ` +
        `text-anchor="end" font-size="11">lag ${lag}</text>`
      );
    })
    .join("");
  const width = LEFT + cols * CELL + 20;
  const height = TOP + rows * CELL + 16;
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" class="heatmap" ` +
    `viewBox="0 0 ${width} ${height}" width="${width}" height="${height}" ` +
    `role="img" font-family="system-ui, sans-serif">` +
    `<text x="${LEFT}" y="16" font-size="12" fill="#3a4256">` +
    `Sensitivity of ${esc(grads.target)} (signed, oldest row first)</text>` +
    cells.join("") +
    outline +
    colLabels +
    rowLabels +
    `</svg>`
  );
}
