/** Wire types for the trapkit HTTP service (shapes mirror the JSON exactly). */

export type ModelTask = "detector" | "classifier";

export interface ModelSummary {
  model_id: string;
  version: string;
  task: ModelTask;
  class_labels: string[];
  artifact_path: string;
  checksum: string;
  input_size_px: number;
  description: string;
  region_tags: string[];
}

export interface TestSetDescriptor {
  test_set_id: string;
  size: number;
  regions: string[];
  classes: string[];
}

/** [label, probability] rows, most probable first. */
export type ScoreRow = [string, number];

export interface DetectionJson {
  category: "animal" | "person" | "vehicle";
  conf: number;
  bbox: [number, number, number, number]; // normalized x, y, w, h
  classifications: ScoreRow[] | null;
}

export interface ResultJson {
  file: string;
  is_empty: boolean;
  needs_review: boolean;
  error: string | null;
  max_detection_conf: number;
  detections: DetectionJson[];
  annotated_png_base64?: string;
}

export type JobState = "queued" | "running" | "done" | "failed";

export interface JobJson {
  job_id: string;
  kind: "batch" | "video";
  state: JobState;
  progress: { done: number; total: number };
  result_uri: string | null;
  error_message: string | null;
  state_history: JobState[];
}

export interface TriageSummary {
  total: number;
  auto_accepted: number;
  needs_review: number;
  review: string[];
}

export interface EvalRecordJson {
  model_id: string;
  parameter_count: number;
  precision: number;
  recall: number;
  map_score: number;
  test_set_id: string;
  timestamp: string;
}

export interface LeaderboardJson {
  test_set_id: string;
  records: EvalRecordJson[];
}

export interface FeedbackJson {
  model_id: string;
  user_id: string;
  verified: boolean;
  rating: number;
  comment: string;
  aggregate_rating: number | null; // mean over verified entries
}

export interface VideoResultJson {
  video: string;
  final_label: string;
  vote_tally: Record<string, number>;
  effective_fps: number;
  frames: ResultJson[];
}

// MegaDetector-batch document, the result payload of a batch job.

export interface MdDetectionJson {
  category: "1" | "2" | "3"; // animal / person / vehicle
  conf: number;
  bbox: [number, number, number, number];
  classifications?: [string, number][]; // [category index, probability]
}

export interface MdImageJson {
  file: string;
  max_detection_conf?: number;
  detections?: MdDetectionJson[];
  failure?: string;
}

export interface MdDocumentJson {
  images: MdImageJson[];
  detection_categories: Record<string, string>;
  classification_categories?: Record<string, string>;
  info: { format_version: string; generator: string };
}
