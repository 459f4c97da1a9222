/** Pure HTML builders for the app chrome around the SVG panels. */

import { esc } from "./render.js";
import type { RunRecord } from "./types.js";

export interface BannerState {
  /** True when the last fetch failed and the view shows old state. */
  stale: boolean;
  /** Job id of an in-flight refinement, if any. */
  jobId: string | null;
  /** One-line problem report, if any. */
  notice: string | null;
  /** Whether the notice should offer a retry button. */
  retryable: boolean;
}

/**
 * Compose the banner strip.
 *
 * @returns Zero or more banner divs; empty string when all is well.
 */
export function bannerHTML(state: BannerState): string {
  const parts: string[] = [];
  if (state.stale) {
    parts.push(
      `<div class="banner stale">Server unreachable; showing the last ` +
        `fetched state.</div>`,
    );
  }
  if (state.jobId) {
    parts.push(
      `<div class="banner job">Refinement job ${esc(state.jobId)} in ` +
        `progress…</div>`,
    );
  }
  if (state.notice) {
    const retry = state.retryable
      ? ` <button id="retry" type="button">Retry</button>`
      : "";
    parts.push(`<div class="banner notice">${esc(state.notice)}${retry}</div>`);
  }
  return parts.join("");
}

/** List items for the run navigation column. */
export function runListHTML(
  records: Iterable<RunRecord>,
  currentRunId: string | null,
): string {
  const rows: string[] = [];
  for (const r of records) {
    const current = r.run_id === currentRunId ? " current" : "";
    const flag = r.error ? " [failed]" : r.has_graph ? "" : " [no graph]";
    rows.push(
      `<li><button type="button" class="run-link${current}" ` +
        `data-run="${esc(r.run_id)}">${esc(r.run_id)}${flag}</button></li>`,
    );
  }
  return rows.join("");
}

/** Breadcrumb of ancestor runs, nearest parent first. */
export function chainHTML(parentChain: string[]): string {
  if (parentChain.length === 0) return "";
  const links = parentChain
    .map(
      (id) =>
        `<button type="button" class="run-link" data-run="${esc(id)}">` +
        `${esc(id)}</button>`,
    )
    .join(" ← ");
  return `refines ${links}`;
}

/** The submit button is usable only with pending toggles and no job. */
export function submitDisabled(pendingCount: number, jobActive: boolean): boolean {
  return pendingCount === 0 || jobActive;
}

/** Status line next to the submit button. */
export function pendingLabel(pendingCount: number): string {
  return pendingCount === 0
    ? "no pending exclusions"
    : `${pendingCount} pending exclusion(s)`;
}
