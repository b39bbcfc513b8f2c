/** Converts MegaDetector-batch documents (the payload of a finished batch
 * job) into the per-image result shape the gallery renders. Pure data
 * reshaping; nothing is re-scored. */

import type {
  DetectionJson,
  MdDocumentJson,
  ResultJson,
} from "./types.js";

export function mdToResults(doc: MdDocumentJson): ResultJson[] {
  const categoryName = doc.detection_categories;
  const labelOf = doc.classification_categories ?? {};

  const results: ResultJson[] = [];
  for (const entry of doc.images) {
    if (entry.failure !== undefined) {
      results.push({
        file: entry.file,
        is_empty: true,
        needs_review: false,
        error: entry.failure,
        max_detection_conf: 0,
        detections: [],
      });
      continue;
    }
    const detections: DetectionJson[] = (entry.detections ?? []).map((d) => ({
      category: (categoryName[d.category] ?? d.category) as DetectionJson["category"],
      conf: d.conf,
      bbox: d.bbox,
      classifications:
        d.classifications === undefined
          ? null
          : d.classifications.map(([idx, prob]): [string, number] => [
              labelOf[idx] ?? idx,
              prob,
            ]),
    }));
    results.push({
      file: entry.file,
      is_empty: detections.length === 0,
      needs_review: false, // recomputed client-side from the slider
      error: null,
      max_detection_conf:
        entry.max_detection_conf ?? Math.max(0, ...detections.map((d) => d.conf)),
      detections,
    });
  }
  return results;
}
