/** End-to-end: the real page wiring driven against a live service instance.
 * A JSDOM window hosts the app while node's fetch talks to the spawned
 * Python server; nothing below mocks an HTTP response. */

import { File as NodeFile } from "node:buffer";
import { readFileSync } from "node:fs";
import { join } from "node:path";

import { JSDOM } from "jsdom";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../../src/api.js";
import { App, buildApp } from "../../src/app.js";
import type { JobJson, ResultJson } from "../../src/types.js";
import { type RunningService, startService } from "./server.js";

let service: RunningService;
let dom: JSDOM;
let doc: Document;
let app: App;
let client: ApiClient;

const exportedCsvs: string[] = [];
const jobPolls: JobJson[] = [];
let detectRequests = 0;

function el<T extends Element>(id: string): T {
  const found = doc.getElementById(id);
  if (found === null) throw new Error(`missing #${id}`);
  return found as unknown as T;
}

function text(id: string): string {
  return el<HTMLElement>(id).textContent ?? "";
}

function fire(target: Element, type: string): void {
  target.dispatchEvent(new dom.window.Event(type, { bubbles: true, cancelable: true }));
}

function setFile(input: HTMLInputElement, file: NodeFile): void {
  Object.defineProperty(input, "files", { value: [file], configurable: true });
}

async function until(cond: () => boolean, timeoutMs = 30_000, label = "condition"): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!cond()) {
    if (Date.now() > deadline) throw new Error(`timed out waiting for ${label}`);
    await new Promise((r) => setTimeout(r, 25));
  }
}

function firstError(): string {
  return app.errors.all.map((e) => e.message).join(" | ");
}

beforeAll(async () => {
  service = await startService();
  dom = new JSDOM(readFileSync(join(process.cwd(), "index.html"), "utf8"));
  doc = dom.window.document;

  // record every job poll so the UI's numbers can be checked against the wire
  const recordingFetch: typeof fetch = async (input, init) => {
    const url = String(input);
    const method = init?.method ?? "GET";
    if (method === "POST" && url.endsWith("/detect")) detectRequests += 1;
    const response = await fetch(input, init);
    if (method === "GET" && /\/jobs\/[^/]+$/.test(url) && !url.endsWith("/jobs/batch")) {
      jobPolls.push((await response.clone().json()) as JobJson);
    }
    return response;
  };

  client = new ApiClient(service.fixture.base_url, recordingFetch);
  app = buildApp(doc, client, {
    poll: { intervalMs: 50 },
    onExport: (csv) => exportedCsvs.push(csv),
  });
}, 120_000);

afterAll(async () => {
  await service?.stop();
});

describe("webui against the live service", () => {
  it("loads the zoo into the model pickers", async () => {
    await app.loadModels();
    expect(app.errors.all).toEqual([]);

    const detector = el<HTMLSelectElement>("detector-select");
    const classifier = el<HTMLSelectElement>("classifier-select");
    const detectorIds = [...detector.options].map((o) => o.value);
    const classifierIds = [...classifier.options].map((o) => o.value);
    expect(new Set(detectorIds)).toEqual(new Set(["oracle-detector", "field-detector"]));
    expect(new Set(classifierIds)).toEqual(new Set(["(none)", "oracle-classifier"]));

    detector.value = "field-detector";
    fire(detector, "change");
    expect(app.store.current.detectorId).toBe("field-detector");
    expect(app.store.current.classifierId).toBe("oracle-classifier");
  });

  it("detects on upload; the 0.5 slider hides exactly the sub-0.5 detections", async () => {
    const bytes = readFileSync(service.fixture.sample_image);
    const input = el<HTMLInputElement>("detect-file");

    // the field detector adds one spurious box with conf ~ U(0.05, 0.75) per
    // upload, so retrying soon yields confidences on both sides of 0.5
    let found = false;
    for (let attempt = 0; attempt < 40 && !found; attempt++) {
      app.lastDetect = null;
      setFile(input, new NodeFile([bytes], "trail.png", { type: "image/png" }));
      el<HTMLButtonElement>("detect-run").click();
      await until(
        () => app.lastDetect !== null || app.errors.all.length > 0,
        30_000,
        "detect response",
      );
      expect(firstError()).toBe("");
      // the handler fills lastDetect behind the await, invisible to narrowing
      const result = app.lastDetect as ResultJson | null;
      const confs = (result?.detections ?? []).map((d) => d.conf);
      found = confs.some((c) => c >= 0.5) && confs.some((c) => c < 0.5);
    }
    expect(found).toBe(true);

    const detections = app.lastDetect!.detections;
    // default threshold 0.2 matches the server-side filter: all rows visible
    expect(doc.querySelectorAll("#detect-detections li")).toHaveLength(detections.length);
    const img = el<HTMLImageElement>("detect-annotated");
    expect(img.hidden).toBe(false);
    expect(img.src.startsWith("data:image/png;base64,")).toBe(true);

    const requestsBefore = detectRequests;
    const slider = el<HTMLInputElement>("det-threshold");
    slider.value = "0.5";
    fire(slider, "input");

    const kept = detections.filter((d) => d.conf >= 0.5);
    const hidden = detections.length - kept.length;
    const lines = [...doc.querySelectorAll("#detect-detections li")].map(
      (li) => li.textContent ?? "",
    );
    expect(lines).toHaveLength(kept.length);
    kept.forEach((d, i) => expect(lines[i]).toContain(d.conf.toFixed(3)));
    for (const d of detections.filter((x) => x.conf < 0.5)) {
      expect(lines.join(" ")).not.toContain(d.conf.toFixed(3));
    }
    expect(text("detect-hidden")).toContain(`${hidden} detection(s) below threshold 0.50`);
    expect(detectRequests).toBe(requestsBefore); // pure client-side filter

    // restore for later panes
    slider.value = "0.2";
    fire(slider, "input");
  }, 120_000);

  it("runs a batch job whose rendered progress mirrors the server counts", async () => {
    const detector = el<HTMLSelectElement>("detector-select");
    detector.value = "oracle-detector";
    fire(detector, "change");

    el<HTMLInputElement>("batch-dir").value = service.fixture.image_dir;
    el<HTMLButtonElement>("batch-run").click();
    await until(
      () => text("batch-progress-text").startsWith("done") || app.errors.all.length > 0,
      60_000,
      "batch completion",
    );
    expect(firstError()).toBe("");

    expect(text("batch-progress-text")).toBe("done: 18/18");
    const bar = el<HTMLProgressElement>("batch-progress");
    expect(bar.value).toBe(18);
    expect(bar.max).toBe(18);

    const jobId = app.store.current.activeJobId;
    expect(jobId).not.toBeNull();
    const polls = jobPolls.filter((j) => j.job_id === jobId);
    expect(polls.length).toBeGreaterThan(0);
    for (const poll of polls) {
      expect(poll.progress.total).toBe(18);
      expect(poll.progress.done).toBeLessThanOrEqual(18);
    }
    for (let i = 1; i < polls.length; i++) {
      expect(polls[i]!.progress.done).toBeGreaterThanOrEqual(polls[i - 1]!.progress.done);
    }
    const last = polls[polls.length - 1]!;
    expect(last.state).toBe("done");
    expect(last.progress).toEqual({ done: 18, total: 18 });
    expect(last.state_history).toEqual(["queued", "running", "done"]);

    // what the server reports now is exactly what the page shows
    const fresh = await client.getJob(jobId!);
    expect(text("batch-progress-text")).toBe(
      `${fresh.state}: ${fresh.progress.done}/${fresh.progress.total}`,
    );

    const confident = doc.querySelectorAll("#batch-confident li");
    const review = doc.querySelectorAll("#batch-review li");
    expect(confident.length + review.length).toBe(18);
    expect(review).toHaveLength(3);
    const reviewText = [...review].map((li) => li.textContent ?? "").join(" ");
    for (const stem of ["img-0005", "img-0011", "img-0017"]) {
      expect(reviewText).toContain(stem);
    }
  }, 120_000);

  it("server-side triage agrees with the client-side review split", async () => {
    const jobId = app.store.current.activeJobId!;
    const resultsPath = `${service.fixture.data_dir}/results/${jobId}.json`;
    const summary = await client.triage(resultsPath, 0.98);
    expect(summary.total).toBe(18);
    expect(summary.auto_accepted).toBe(15);
    expect(summary.needs_review).toBe(3);
    const names = summary.review.join(" ");
    for (const stem of ["img-0005", "img-0011", "img-0017"]) {
      expect(names).toContain(stem);
    }
  });

  it("three review decisions export a three-row corrections CSV", async () => {
    expect(app.reviewQueue.length).toBe(3);
    el<HTMLInputElement>("review-reviewer").value = "ana";

    const confirmButtons = () =>
      [...doc.querySelectorAll("#review-list li button")].filter(
        (b) => b.textContent === "confirm",
      ) as HTMLButtonElement[];

    confirmButtons()[0]!.click();
    const overrideInput = doc.querySelectorAll(
      "#review-list li input[type=text]",
    )[1] as HTMLInputElement;
    overrideInput.value = "coyote";
    const overrideButton = [...doc.querySelectorAll("#review-list li button")].filter(
      (b) => b.textContent === "override",
    )[1] as HTMLButtonElement;
    overrideButton.click();
    confirmButtons()[2]!.click();
    confirmButtons()[0]!.click(); // repeat decision must not add a row
    expect(text("review-status")).toBe("3/3 decided");

    el<HTMLButtonElement>("review-export").click();
    const csv = exportedCsvs[exportedCsvs.length - 1]!;
    const lines = csv.trimEnd().split("\n");
    expect(lines).toHaveLength(4);
    expect(lines[0]).toBe("image,predicted_label,corrected_label,reviewer,timestamp");
    expect(lines.slice(1).every((l) => l.includes(",ana,"))).toBe(true);
    expect(csv).toContain("img-0005");
    expect(csv).toContain("img-0011");
    expect(csv).toContain("img-0017");
    expect(lines[2]).toContain(",coyote,");
  });

  it("renders the leaderboard in the order the server ranks it", async () => {
    el<HTMLInputElement>("board-testset").value = service.fixture.test_set_id;
    el<HTMLButtonElement>("board-load").click();
    await until(
      () => doc.querySelectorAll("#board-table tbody tr").length > 0,
      30_000,
      "leaderboard rows",
    );
    expect(firstError()).toBe("");
    const rows = [...doc.querySelectorAll("#board-table tbody tr")].map((tr) =>
      [...tr.querySelectorAll("td")].map((td) => td.textContent ?? ""),
    );
    expect(rows.map((r) => r[0])).toEqual(["megadetector-v5", "megadetector-v6-compact"]);
    expect(rows[0]![1]).toBe("0.850");
    expect(rows[1]![1]).toBe("0.840");
  });

  it("verifies feedback only when the operator token matches", async () => {
    const verified = await client.sendFeedback({
      model_id: "oracle-detector",
      user_id: "e2e",
      rating: 5,
      operator_token: service.fixture.operator_token,
    });
    expect(verified.verified).toBe(true);

    const anonymous = await client.sendFeedback({
      model_id: "oracle-detector",
      user_id: "e2e",
      rating: 2,
    });
    expect(anonymous.verified).toBe(false);
    expect(verified.aggregate_rating).not.toBeNull();
  });

  it("surfaces server errors as dismissible banners", async () => {
    el<HTMLInputElement>("batch-dir").value = "/definitely/not/a/directory";
    el<HTMLButtonElement>("batch-run").click();
    await until(() => app.errors.all.length > 0, 30_000, "error banner");
    const banner = doc.querySelector("#errors .error-banner");
    expect(banner?.textContent).toContain("not a directory");

    (banner?.querySelector("button") as HTMLButtonElement).click();
    expect(doc.querySelectorAll("#errors .error-banner")).toHaveLength(0);
  });

  it("classifies the frame video by majority vote", async () => {
    el<HTMLInputElement>("video-path").value = service.fixture.video_path;
    el<HTMLButtonElement>("video-run").click();
    await until(
      () => text("video-summary") !== "" || app.errors.all.length > 0,
      60_000,
      "video result",
    );
    expect(firstError()).toBe("");
    const summary = text("video-summary");
    expect(summary).toContain("paca");
    expect(summary).toContain("24 fps effective");
    expect(summary).toContain("paca: 48");
    expect(doc.querySelectorAll("#video-frames li")).toHaveLength(48);
  }, 120_000);
});
