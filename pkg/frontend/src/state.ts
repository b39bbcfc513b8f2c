/** Central view state. Mutations go through setters that enforce the
 * invariants (thresholds in [0, 1], review cursor inside queue bounds) and
 * notify subscribers exactly once per change. */

export interface ViewState {
  detectorId: string | null;
  classifierId: string | null; // null = no classification stage
  detThreshold: number;
  clfThreshold: number;
  activeJobId: string | null;
  reviewCursor: number; // index into the review queue, 0 when empty
  reviewQueueLength: number;
}

export type Listener = (state: Readonly<ViewState>) => void;

function checkThreshold(name: string, value: number): number {
  if (!Number.isFinite(value) || value < 0 || value > 1) {
    throw new RangeError(`${name} must lie in [0, 1], got ${value}`);
  }
  return value;
}

export class Store {
  private state: ViewState = {
    detectorId: null,
    classifierId: null,
    detThreshold: 0.2,
    clfThreshold: 0.98,
    activeJobId: null,
    reviewCursor: 0,
    reviewQueueLength: 0,
  };
  private listeners: Listener[] = [];

  get current(): Readonly<ViewState> {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private commit(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  selectDetector(modelId: string | null): void {
    this.commit({ detectorId: modelId });
  }

  selectClassifier(modelId: string | null): void {
    this.commit({ classifierId: modelId });
  }

  setDetThreshold(value: number): void {
    this.commit({ detThreshold: checkThreshold("det_threshold", value) });
  }

  setClfThreshold(value: number): void {
    this.commit({ clfThreshold: checkThreshold("clf_threshold", value) });
  }

  setActiveJob(jobId: string | null): void {
    this.commit({ activeJobId: jobId });
  }

  /** Resets the cursor; call when a new queue is loaded. */
  setReviewQueueLength(length: number): void {
    if (length < 0) throw new RangeError(`queue length must be >= 0, got ${length}`);
    this.commit({ reviewQueueLength: length, reviewCursor: 0 });
  }

  /** Cursor clamps to the queue bounds rather than throwing: arrow-key
   * navigation past either end just sticks. */
  moveReviewCursor(delta: number): void {
    const max = Math.max(0, this.state.reviewQueueLength - 1);
    const next = Math.min(max, Math.max(0, this.state.reviewCursor + delta));
    if (next !== this.state.reviewCursor) this.commit({ reviewCursor: next });
  }
}
