/** Wires the DOM to the API client. All inference numbers shown here come
 * straight from server responses; the sliders only filter what is already on
 * screen. */

import { ApiClient, ApiError } from "./api.js";
import { ErrorLog } from "./errors.js";
import { splitGallery, topLabel, visibleDetections } from "./filter.js";
import { mdToResults } from "./md.js";
import { pollJob, type PollOptions } from "./poll.js";
import { ReviewQueue } from "./review.js";
import { Store } from "./state.js";
import type {
  JobJson,
  ModelSummary,
  ResultJson,
  VideoResultJson,
} from "./types.js";

export interface AppOptions {
  poll?: PollOptions;
  /** Receives the corrections CSV on export; defaults to a browser download. */
  onExport?: (csv: string) => void;
}

const NO_CLASSIFIER = "(none)";

function must<T extends Element>(root: Document, id: string): T {
  const el = root.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as unknown as T;
}

function messageOf(err: unknown): string {
  if (err instanceof ApiError) return err.detail;
  if (err instanceof Error) return err.message;
  return String(err);
}

function detectionLine(d: { category: string; conf: number; classifications: [string, number][] | null }): string {
  const head = `${d.category} ${d.conf.toFixed(3)}`;
  if (d.classifications === null || d.classifications.length === 0) return head;
  const top = d.classifications[0];
  return top === undefined ? head : `${head} — ${top[0]} ${top[1].toFixed(3)}`;
}

export class App {
  readonly store = new Store();
  readonly errors = new ErrorLog();
  readonly reviewQueue = new ReviewQueue();

  /** Last single-image result; sliders re-filter it without a new request. */
  lastDetect: ResultJson | null = null;
  /** Last finished batch, converted for the gallery. */
  lastBatch: ResultJson[] = [];
  lastJob: JobJson | null = null;

  private readonly doc: Document;
  private readonly client: ApiClient;
  private readonly pollOptions: PollOptions;
  private readonly onExport: (csv: string) => void;

  constructor(doc: Document, client: ApiClient, options: AppOptions = {}) {
    this.doc = doc;
    this.client = client;
    this.pollOptions = options.poll ?? {};
    this.onExport = options.onExport ?? ((csv) => this.downloadCsv(csv));
    this.bind();
  }

  // --- plumbing

  private el<T extends Element>(id: string): T {
    return must<T>(this.doc, id);
  }

  private async guarded(work: () => Promise<void>): Promise<void> {
    try {
      await work();
    } catch (err) {
      this.errors.push(messageOf(err));
    }
  }

  private bind(): void {
    this.errors.subscribe(() => this.renderErrors());

    this.el<HTMLButtonElement>("models-refresh").addEventListener("click", () => {
      void this.loadModels();
    });
    this.el<HTMLSelectElement>("detector-select").addEventListener("change", (ev) => {
      const value = (ev.target as HTMLSelectElement).value;
      this.store.selectDetector(value || null);
    });
    this.el<HTMLSelectElement>("classifier-select").addEventListener("change", (ev) => {
      const value = (ev.target as HTMLSelectElement).value;
      this.store.selectClassifier(value === NO_CLASSIFIER ? null : value);
    });

    const detSlider = this.el<HTMLInputElement>("det-threshold");
    detSlider.addEventListener("input", () => {
      this.store.setDetThreshold(Number(detSlider.value));
      this.renderThresholds();
      this.renderDetect();
      this.renderGallery();
    });
    const clfSlider = this.el<HTMLInputElement>("clf-threshold");
    clfSlider.addEventListener("input", () => {
      this.store.setClfThreshold(Number(clfSlider.value));
      this.renderThresholds();
      this.renderGallery();
    });

    this.el<HTMLButtonElement>("detect-run").addEventListener("click", () => {
      void this.guarded(() => this.runDetect());
    });
    this.el<HTMLButtonElement>("batch-run").addEventListener("click", () => {
      void this.guarded(() => this.runBatch());
    });
    this.el<HTMLButtonElement>("video-run").addEventListener("click", () => {
      void this.guarded(() => this.runVideo());
    });
    this.el<HTMLButtonElement>("board-load").addEventListener("click", () => {
      void this.guarded(() => this.loadLeaderboard());
    });
    this.el<HTMLButtonElement>("review-export").addEventListener("click", () => {
      this.onExport(this.reviewQueue.toCsv());
    });
    this.el<HTMLFormElement>("feedback-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.guarded(() => this.sendFeedback());
    });

    this.renderThresholds();
  }

  // --- errors

  private renderErrors(): void {
    const host = this.el<HTMLDivElement>("errors");
    host.textContent = "";
    for (const entry of this.errors.all) {
      const banner = this.doc.createElement("div");
      banner.className = "error-banner";
      banner.dataset["errorId"] = String(entry.id);
      const text = this.doc.createElement("span");
      text.textContent = entry.message;
      const dismiss = this.doc.createElement("button");
      dismiss.textContent = "dismiss";
      dismiss.addEventListener("click", () => this.errors.dismiss(entry.id));
      banner.append(text, dismiss);
      host.append(banner);
    }
  }

  // --- models

  async loadModels(): Promise<void> {
    await this.guarded(async () => {
      const models = await this.client.listModels();
      this.fillModelSelect("detector-select", models.filter((m) => m.task === "detector"), false);
      this.fillModelSelect(
        "classifier-select",
        models.filter((m) => m.task === "classifier"),
        true,
      );
      const detector = this.el<HTMLSelectElement>("detector-select").value || null;
      this.store.selectDetector(detector);
      const classifier = this.el<HTMLSelectElement>("classifier-select").value;
      this.store.selectClassifier(classifier === NO_CLASSIFIER ? null : classifier);
    });
  }

  private fillModelSelect(id: string, models: ModelSummary[], optional: boolean): void {
    const select = this.el<HTMLSelectElement>(id);
    select.textContent = "";
    if (optional) {
      const none = this.doc.createElement("option");
      none.value = NO_CLASSIFIER;
      none.textContent = NO_CLASSIFIER;
      select.append(none);
    }
    for (const m of models) {
      const option = this.doc.createElement("option");
      option.value = m.model_id;
      option.textContent = `${m.model_id} ${m.version}`;
      select.append(option);
    }
    // prefer a real model over the placeholder when one exists
    if (optional && models.length > 0 && models[0] !== undefined) {
      select.value = models[0].model_id;
    }
  }

  // --- single image

  private async runDetect(): Promise<void> {
    const input = this.el<HTMLInputElement>("detect-file");
    const file = input.files?.[0];
    if (file === undefined) throw new Error("choose an image first");
    const state = this.store.current;
    this.lastDetect = await this.client.detect(file, file.name, {
      detectorId: state.detectorId ?? undefined,
      classifierId: state.classifierId ?? undefined,
      annotate: true,
    });
    this.renderDetect();
  }

  renderDetect(): void {
    const result = this.lastDetect;
    const list = this.el<HTMLUListElement>("detect-detections");
    const hiddenNote = this.el<HTMLParagraphElement>("detect-hidden");
    const img = this.el<HTMLImageElement>("detect-annotated");
    list.textContent = "";
    if (result === null) {
      hiddenNote.textContent = "";
      img.hidden = true;
      return;
    }
    const threshold = this.store.current.detThreshold;
    const visible = visibleDetections(result.detections, threshold);
    for (const det of visible) {
      const li = this.doc.createElement("li");
      li.textContent = detectionLine(det);
      list.append(li);
    }
    const hidden = result.detections.length - visible.length;
    hiddenNote.textContent =
      hidden === 0 ? "" : `${hidden} detection(s) below threshold ${threshold.toFixed(2)}`;
    if (result.annotated_png_base64) {
      img.src = `data:image/png;base64,${result.annotated_png_base64}`;
      img.hidden = false;
    } else {
      img.hidden = true;
    }
  }

  // --- batch

  private async runBatch(): Promise<void> {
    const dir = this.el<HTMLInputElement>("batch-dir").value.trim();
    if (dir === "") throw new Error("enter a server-side image directory");
    const state = this.store.current;
    const { job_id } = await this.client.submitBatch({
      input_dir: dir,
      detector_id: state.detectorId ?? undefined,
      classifier_id: state.classifierId ?? undefined,
    });
    this.store.setActiveJob(job_id);
    const job = await pollJob(
      this.client,
      job_id,
      (snapshot) => this.renderJobProgress(snapshot),
      this.pollOptions,
    );
    this.lastJob = job;
    if (job.state === "failed") {
      throw new Error(job.error_message ?? "batch job failed");
    }
    const doc = await this.client.getJobResult(job_id);
    this.lastBatch = mdToResults(doc);
    this.renderGallery();
    this.loadReviewQueue();
  }

  renderJobProgress(job: JobJson): void {
    this.lastJob = job;
    const bar = this.el<HTMLProgressElement>("batch-progress");
    const text = this.el<HTMLSpanElement>("batch-progress-text");
    bar.hidden = false;
    bar.max = Math.max(1, job.progress.total);
    bar.value = job.progress.done;
    text.textContent = `${job.state}: ${job.progress.done}/${job.progress.total}`;
  }

  renderGallery(): void {
    const state = this.store.current;
    const { confident, review } = splitGallery(
      this.lastBatch,
      state.detThreshold,
      state.clfThreshold,
    );
    this.fillGalleryList("batch-confident", confident);
    this.fillGalleryList("batch-review", review);
  }

  private fillGalleryList(id: string, results: ResultJson[]): void {
    const list = this.el<HTMLUListElement>(id);
    list.textContent = "";
    for (const result of results) {
      const li = this.doc.createElement("li");
      const label = topLabel(result, this.store.current.detThreshold);
      const visible = visibleDetections(result.detections, this.store.current.detThreshold);
      li.textContent =
        `${result.file}: ` +
        (result.error !== null
          ? `failed (${result.error})`
          : visible.length === 0
            ? "empty"
            : (label ?? visible.map((d) => d.category).join(", ")));
      list.append(li);
    }
  }

  // --- review

  loadReviewQueue(): void {
    const state = this.store.current;
    const { review } = splitGallery(this.lastBatch, state.detThreshold, state.clfThreshold);
    this.reviewQueue.load(
      review.map((r) => ({
        image: r.file,
        predictedLabel: topLabel(r, state.detThreshold) ?? "empty",
      })),
    );
    this.store.setReviewQueueLength(this.reviewQueue.length);
    this.renderReview();
  }

  renderReview(): void {
    const list = this.el<HTMLUListElement>("review-list");
    const status = this.el<HTMLParagraphElement>("review-status");
    list.textContent = "";
    for (let i = 0; i < this.reviewQueue.length; i++) {
      const item = this.reviewQueue.itemAt(i);
      if (item === undefined) continue;
      const li = this.doc.createElement("li");
      li.className = "review-item";
      const decision = this.reviewQueue.decisionFor(item.image);
      if (decision !== undefined) li.classList.add("decided");

      const text = this.doc.createElement("span");
      text.textContent =
        `${item.image} → ${item.predictedLabel}` +
        (decision !== undefined ? ` (saved: ${decision.correctedLabel})` : "");

      const confirm = this.doc.createElement("button");
      confirm.textContent = "confirm";
      confirm.addEventListener("click", () => {
        this.reviewQueue.confirm(i, this.reviewer());
        this.renderReview();
      });

      const overrideInput = this.doc.createElement("input");
      overrideInput.type = "text";
      overrideInput.placeholder = "correct label";
      const override = this.doc.createElement("button");
      override.textContent = "override";
      override.addEventListener("click", () => {
        const label = overrideInput.value.trim();
        if (label === "") {
          this.errors.push("enter a label before overriding");
          return;
        }
        this.reviewQueue.override(i, label, this.reviewer());
        this.renderReview();
      });

      li.append(text, confirm, overrideInput, override);
      list.append(li);
    }
    status.textContent =
      this.reviewQueue.length === 0
        ? "no images waiting for review"
        : `${this.reviewQueue.decidedCount}/${this.reviewQueue.length} decided`;
  }

  private reviewer(): string {
    return this.el<HTMLInputElement>("review-reviewer").value.trim() || "operator";
  }

  private downloadCsv(csv: string): void {
    const blob = new Blob([csv], { type: "text/csv" });
    const url = URL.createObjectURL(blob);
    const anchor = this.doc.createElement("a");
    anchor.href = url;
    anchor.download = "corrections.csv";
    anchor.click();
    URL.revokeObjectURL(url);
  }

  // --- video

  private async runVideo(): Promise<void> {
    const path = this.el<HTMLInputElement>("video-path").value.trim();
    if (path === "") throw new Error("enter a server-side video path");
    const state = this.store.current;
    const { job_id } = await this.client.submitVideo({
      video_path: path,
      detector_id: state.detectorId ?? undefined,
      classifier_id: state.classifierId ?? undefined,
    });
    const job = await pollJob(this.client, job_id, () => undefined, this.pollOptions);
    if (job.state === "failed") {
      throw new Error(job.error_message ?? "video job failed");
    }
    const result = await this.client.getJobResult<VideoResultJson>(job_id);
    this.renderVideo(result);
  }

  renderVideo(result: VideoResultJson): void {
    const summary = this.el<HTMLParagraphElement>("video-summary");
    const tally = Object.entries(result.vote_tally)
      .map(([label, count]) => `${label}: ${count}`)
      .join(", ");
    summary.textContent =
      `${result.video} → ${result.final_label} ` +
      `(${result.effective_fps} fps effective; votes ${tally || "none"})`;
    const frames = this.el<HTMLOListElement>("video-frames");
    frames.textContent = "";
    for (const frame of result.frames) {
      const li = this.doc.createElement("li");
      li.textContent = `${frame.file}: ${
        frame.detections.length === 0 ? "empty" : detectionLine(frame.detections[0]!)
      }`;
      frames.append(li);
    }
  }

  // --- leaderboard + feedback

  private async loadLeaderboard(): Promise<void> {
    const testSetId = this.el<HTMLInputElement>("board-testset").value.trim();
    if (testSetId === "") throw new Error("enter a test set id");
    const board = await this.client.leaderboard(testSetId);
    const tbody = this.el<HTMLTableElement>("board-table").querySelector("tbody");
    if (tbody === null) throw new Error("leaderboard table has no body");
    tbody.textContent = "";
    // rows land in server order: the board already ranks them
    for (const record of board.records) {
      const tr = this.doc.createElement("tr");
      for (const cell of [
        record.model_id,
        record.map_score.toFixed(3),
        record.precision.toFixed(3),
        record.recall.toFixed(3),
        String(record.parameter_count),
      ]) {
        const td = this.doc.createElement("td");
        td.textContent = cell;
        tr.append(td);
      }
      tbody.append(tr);
    }
  }

  private async sendFeedback(): Promise<void> {
    const status = this.el<HTMLParagraphElement>("feedback-status");
    const token = this.el<HTMLInputElement>("fb-token").value;
    const reply = await this.client.sendFeedback({
      model_id: this.el<HTMLInputElement>("fb-model").value.trim(),
      user_id: this.el<HTMLInputElement>("fb-user").value.trim(),
      rating: Number(this.el<HTMLSelectElement>("fb-rating").value),
      comment: this.el<HTMLInputElement>("fb-comment").value,
      ...(token === "" ? {} : { operator_token: token }),
    });
    status.textContent =
      `recorded ${reply.verified ? "verified" : "unverified"} rating ${reply.rating}` +
      (reply.aggregate_rating === null
        ? ""
        : `; verified average ${reply.aggregate_rating.toFixed(2)}`);
  }

  // --- shared renders

  private renderThresholds(): void {
    const state = this.store.current;
    this.el<HTMLSpanElement>("det-threshold-value").textContent =
      state.detThreshold.toFixed(2);
    this.el<HTMLSpanElement>("clf-threshold-value").textContent =
      state.clfThreshold.toFixed(2);
  }
}

export function buildApp(doc: Document, client: ApiClient, options: AppOptions = {}): App {
  return new App(doc, client, options);
}
