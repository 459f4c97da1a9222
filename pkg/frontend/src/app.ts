/** Browser entry point: wires fetched state and toggles to the DOM. */

import { ApiClient, ApiError, newRequestId } from "./api.js";
import { renderGraphSVG, renderHeatmapSVG, esc } from "./render.js";
import type { GraphPayload, RunRecord } from "./types.js";
import { splitEdgeKey } from "./types.js";
import {
  bannerHTML,
  chainHTML,
  pendingLabel,
  runListHTML,
  submitDisabled,
} from "./ui.js";
import {
  buildViewModel,
  togglePending,
  type GraphViewModel,
} from "./viewmodel.js";

const POLL_MS = 4000;
const JOB_KEY = "causalgrad-active-job";

interface ActiveJob {
  jobId: string;
  requestId: string;
  parentRunId: string;
}

interface AppState {
  records: Map<string, RunRecord>;
  currentRunId: string | null;
  graph: GraphPayload | null;
  pending: Set<string>;
  job: ActiveJob | null;
  target: string | null;
  stale: boolean;
  notice: string | null;
  retryable: boolean;
}

function apiBase(): string {
  const param = new URLSearchParams(window.location.search).get("api");
  return param ?? window.location.origin;
}

const api = new ApiClient(apiBase());
const state: AppState = {
  records: new Map(),
  currentRunId: null,
  graph: null,
  pending: new Set(),
  job: restoreJob(),
  target: null,
  stale: false,
  notice: null,
  retryable: false,
};

function restoreJob(): ActiveJob | null {
  try {
    const raw = window.localStorage.getItem(JOB_KEY);
    return raw ? (JSON.parse(raw) as ActiveJob) : null;
  } catch {
    return null;
  }
}

function persistJob(job: ActiveJob | null): void {
  state.job = job;
  try {
    if (job) window.localStorage.setItem(JOB_KEY, JSON.stringify(job));
    else window.localStorage.removeItem(JOB_KEY);
  } catch {
    // storage may be unavailable; polling still works for this session
  }
}

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function refreshRuns(): Promise<void> {
  try {
    const runs = await api.listRuns();
    state.records = new Map(runs.map((r) => [r.run_id, r]));
    state.stale = false;
    if (!state.currentRunId) {
      const withGraph = runs.filter((r) => r.has_graph);
      if (withGraph.length > 0) {
        await selectRun(withGraph[withGraph.length - 1].run_id);
        return;
      }
    }
  } catch {
    state.stale = true;
  }
  render();
}

async function selectRun(runId: string): Promise<void> {
  state.currentRunId = runId;
  state.pending = new Set();
  state.notice = null;
  state.retryable = false;
  const record = state.records.get(runId);
  state.graph = null;
  if (record?.has_graph) {
    try {
      state.graph = await api.getGraph(runId);
      state.stale = false;
    } catch {
      state.stale = true;
    }
  }
  const nodes = state.graph?.nodes ?? [];
  state.target = nodes.length > 0 ? nodes[0] : null;
  render();
  void renderHeatmap();
}

function currentViewModel(): GraphViewModel | null {
  const record = state.currentRunId
    ? state.records.get(state.currentRunId)
    : null;
  if (!record || !state.graph) return null;
  return buildViewModel(record, state.graph, state.pending, state.records);
}

function render(): void {
  el("banner").innerHTML = bannerHTML({
    stale: state.stale,
    jobId: state.job?.jobId ?? null,
    notice: state.notice,
    retryable: state.retryable,
  });
  el("runs").innerHTML = runListHTML(state.records.values(), state.currentRunId);
  const vm = currentViewModel();
  el("chain").innerHTML = chainHTML(vm?.parentChain ?? []);
  el("graph").innerHTML = vm
    ? renderGraphSVG(vm)
    : `<p class="empty-state">Select a run with an extracted graph.</p>`;
  const submit = el("submit") as HTMLButtonElement;
  submit.disabled = submitDisabled(state.pending.size, state.job !== null);
  el("pending-count").textContent = pendingLabel(state.pending.size);
  renderTargetSelect();
}

function renderTargetSelect(): void {
  const select = el("target") as HTMLSelectElement;
  const nodes = state.graph?.nodes ?? [];
  select.innerHTML = nodes
    .map(
      (n) =>
        `<option value="${esc(n)}"${n === state.target ? " selected" : ""}>` +
        `${esc(n)}</option>`,
    )
    .join("");
  select.disabled = nodes.length === 0;
}

async function renderHeatmap(): Promise<void> {
  const host = el("heatmap");
  if (!state.currentRunId || !state.target) {
    host.innerHTML = `<p class="empty-state">No target selected.</p>`;
    return;
  }
  try {
    const grads = await api.getGradients(state.currentRunId, state.target);
    host.innerHTML = renderHeatmapSVG(grads);
  } catch (err) {
    if (err instanceof ApiError && err.status === 404) {
      host.innerHTML =
        `<p class="empty-state">No stored gradients for this target. ` +
        `Re-run extraction to get a sensitivity heatmap.</p>`;
    } else {
      state.stale = true;
      render();
    }
  }
}

async function submitPending(requestId: string): Promise<void> {
  if (!state.currentRunId || state.pending.size === 0) return;
  const pairs = [...state.pending].map(splitEdgeKey);
  const parent = state.currentRunId;
  state.notice = null;
  state.retryable = false;
  try {
    const job = await api.submitExclusions(parent, pairs, requestId);
    persistJob({ jobId: job.job_id, requestId, parentRunId: parent });
    render();
    void watchJob();
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      const pos = err.queuePosition;
      state.notice =
        `The trainer is busy (queue position ${pos ?? "unknown"}). ` +
        `Retry when the running job finishes.`;
      state.retryable = true;
      lastRequestId = requestId; // reuse on retry: same intent, same id
    } else {
      state.notice = err instanceof Error ? err.message : String(err);
    }
    render();
  }
}

async function watchJob(): Promise<void> {
  if (!state.job) return;
  try {
    const done = await api.pollJob(state.job.jobId, { intervalMs: POLL_MS });
    const childId = done.run_id;
    const failed = done.status === "failed";
    if (failed) {
      state.notice = `Refinement failed: ${done.error?.message ?? "unknown"}`;
    } else {
      state.pending = new Set();
    }
    persistJob(null);
    const runs = await api.listRuns();
    state.records = new Map(runs.map((r) => [r.run_id, r]));
    if (!failed) {
      await selectRun(childId);
      return;
    }
  } catch (err) {
    state.notice = err instanceof Error ? err.message : String(err);
    persistJob(null);
  }
  render();
}

let lastRequestId = newRequestId();

function wireEvents(): void {
  el("graph").addEventListener("click", (event) => {
    const target = (event.target as Element).closest("[data-toggleable]");
    if (!target) return;
    const key = target.getAttribute("data-edge");
    const vm = currentViewModel();
    if (!key || !vm) return;
    const [from, to] = splitEdgeKey(key);
    state.pending = togglePending(vm, from, to, state.pending);
    render();
  });
  el("runs").addEventListener("click", runLinkHandler);
  el("chain").addEventListener("click", runLinkHandler);
  el("submit").addEventListener("click", () => {
    lastRequestId = newRequestId();
    void submitPending(lastRequestId);
  });
  el("banner").addEventListener("click", (event) => {
    if ((event.target as Element).id === "retry") {
      void submitPending(lastRequestId);
    }
  });
  (el("target") as HTMLSelectElement).addEventListener("change", (event) => {
    state.target = (event.target as HTMLSelectElement).value;
    void renderHeatmap();
  });
}

function runLinkHandler(event: Event): void {
  const link = (event.target as Element).closest("[data-run]");
  if (!link) return;
  const runId = link.getAttribute("data-run");
  if (runId) void selectRun(runId);
}

async function boot(): Promise<void> {
  wireEvents();
  await refreshRuns();
  if (state.job) void watchJob();
  window.setInterval(() => void refreshRuns(), POLL_MS);
}

void boot();
