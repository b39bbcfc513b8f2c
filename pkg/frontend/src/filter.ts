/** Pure threshold filtering. The sliders never trigger re-inference; they
 * narrow an already-fetched result set client-side. */

import type { DetectionJson, ResultJson } from "./types.js";

/** Detections at or above the confidence threshold, original order kept. */
export function visibleDetections(
  detections: readonly DetectionJson[],
  threshold: number,
): DetectionJson[] {
  return detections.filter((d) => d.conf >= threshold);
}

/** Mirrors the server's review rule: an image needs review when any visible
 * classified detection has a top label below the classifier threshold. */
export function needsReview(
  detections: readonly DetectionJson[],
  clfThreshold: number,
): boolean {
  for (const det of detections) {
    const scores = det.classifications;
    if (scores === null || scores.length === 0) continue;
    const top = scores[0];
    if (top !== undefined && top[1] < clfThreshold) return true;
  }
  return false;
}

export interface GallerySplit {
  confident: ResultJson[];
  review: ResultJson[];
}

/** Splits batch results into confident and needs-review buckets using the
 * current client-side thresholds. */
export function splitGallery(
  results: readonly ResultJson[],
  detThreshold: number,
  clfThreshold: number,
): GallerySplit {
  const confident: ResultJson[] = [];
  const review: ResultJson[] = [];
  for (const result of results) {
    const visible = visibleDetections(result.detections, detThreshold);
    if (needsReview(visible, clfThreshold)) review.push(result);
    else confident.push(result);
  }
  return { confident, review };
}

/** Top classification label for a result, or null when nothing is classified. */
export function topLabel(result: ResultJson, detThreshold: number): string | null {
  let best: [string, number] | null = null;
  for (const det of visibleDetections(result.detections, detThreshold)) {
    const scores = det.classifications;
    if (scores === null) continue;
    for (const row of scores) {
      if (best === null || row[1] > best[1]) best = row;
    }
  }
  return best === null ? null : best[0];
}
