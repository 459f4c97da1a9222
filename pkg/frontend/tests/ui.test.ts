import { describe, expect, it } from "vitest";

import {
  bannerHTML,
  chainHTML,
  pendingLabel,
  runListHTML,
  submitDisabled,
} from "../src/ui.js";
import { makeRecord } from "./fixtures.js";

const calm = { stale: false, jobId: null, notice: null, retryable: false };

describe("bannerHTML", () => {
  it("is empty when nothing is wrong", () => {
    expect(bannerHTML(calm)).toBe("");
  });

  it("shows a stale banner when the server is unreachable", () => {
    const html = bannerHTML({ ...calm, stale: true });
    expect(html).toContain("Server unreachable");
    expect(html).toContain("last fetched state");
  });

  it("announces an in-flight refinement job", () => {
    expect(bannerHTML({ ...calm, jobId: "job-0007" })).toContain("job-0007");
  });

  it("offers a retry button only for retryable notices", () => {
    const busy = bannerHTML({
      ...calm,
      notice: "trainer busy",
      retryable: true,
    });
    expect(busy).toContain('id="retry"');
    const fatal = bannerHTML({ ...calm, notice: "boom", retryable: false });
    expect(fatal).not.toContain('id="retry"');
    expect(fatal).toContain("boom");
  });
});

describe("runListHTML", () => {
  it("marks the current run and flags runs without graphs", () => {
    const rows = runListHTML(
      [
        makeRecord({ run_id: "run-0001" }),
        makeRecord({ run_id: "run-0002", has_graph: false }),
        makeRecord({
          run_id: "run-0003",
          error: { stage: "train", message: "x" },
        }),
      ],
      "run-0001",
    );
    expect(rows).toContain('run-link current"');
    expect(rows).toContain("[no graph]");
    expect(rows).toContain("[failed]");
    expect(rows.match(/<li>/g)).toHaveLength(3);
  });
});

describe("chainHTML", () => {
  it("is empty for root runs and lists ancestors nearest-first", () => {
    expect(chainHTML([])).toBe("");
    const html = chainHTML(["run-0002", "run-0001"]);
    expect(html.indexOf("run-0002")).toBeLessThan(html.indexOf("run-0001"));
    expect(html).toContain("refines");
  });
});

describe("submit gating", () => {
  it("disables with no pending toggles or while a job runs", () => {
    expect(submitDisabled(0, false)).toBe(true);
    expect(submitDisabled(2, true)).toBe(true);
    expect(submitDisabled(2, false)).toBe(false);
  });

  it("describes the pending count", () => {
    expect(pendingLabel(0)).toBe("no pending exclusions");
    expect(pendingLabel(3)).toBe("3 pending exclusion(s)");
  });
});
