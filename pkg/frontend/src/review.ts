/** Review queue: operators confirm or override predicted labels, then export
 * the decisions as a corrections CSV. */

export interface ReviewItem {
  image: string;
  predictedLabel: string;
}

export interface Decision {
  image: string;
  predictedLabel: string;
  correctedLabel: string;
  reviewer: string;
  timestamp: string; // ISO 8601
}

const CSV_HEADER = "image,predicted_label,corrected_label,reviewer,timestamp";

function csvField(value: string): string {
  // RFC 4180: quote when the field contains a comma, quote, or newline.
  if (/[",\r\n]/.test(value)) {
    return `"${value.replace(/"/g, '""')}"`;
  }
  return value;
}

export class ReviewQueue {
  private items: ReviewItem[] = [];
  // Keyed by image path so repeat decisions replace rather than duplicate.
  private decisions = new Map<string, Decision>();
  private clock: () => Date;

  constructor(clock: () => Date = () => new Date()) {
    this.clock = clock;
  }

  load(items: readonly ReviewItem[]): void {
    this.items = [...items];
    this.decisions.clear();
  }

  get length(): number {
    return this.items.length;
  }

  get decidedCount(): number {
    return this.decisions.size;
  }

  itemAt(index: number): ReviewItem | undefined {
    return this.items[index];
  }

  decisionFor(image: string): Decision | undefined {
    return this.decisions.get(image);
  }

  /** Accept the prediction as-is. */
  confirm(index: number, reviewer: string): Decision {
    const item = this.items[index];
    if (item === undefined) throw new RangeError(`no review item at index ${index}`);
    return this.record(item, item.predictedLabel, reviewer);
  }

  /** Replace the prediction with the operator's label. */
  override(index: number, correctedLabel: string, reviewer: string): Decision {
    const item = this.items[index];
    if (item === undefined) throw new RangeError(`no review item at index ${index}`);
    return this.record(item, correctedLabel, reviewer);
  }

  private record(item: ReviewItem, correctedLabel: string, reviewer: string): Decision {
    const decision: Decision = {
      image: item.image,
      predictedLabel: item.predictedLabel,
      correctedLabel,
      reviewer,
      timestamp: this.clock().toISOString(),
    };
    this.decisions.set(item.image, decision); // idempotent per image
    return decision;
  }

  /** Decisions in the order first made (Map preserves insertion order). */
  allDecisions(): Decision[] {
    return [...this.decisions.values()];
  }

  toCsv(): string {
    const lines = [CSV_HEADER];
    for (const d of this.decisions.values()) {
      lines.push(
        [d.image, d.predictedLabel, d.correctedLabel, d.reviewer, d.timestamp]
          .map(csvField)
          .join(","),
      );
    }
    return lines.join("\n") + "\n";
  }
}
