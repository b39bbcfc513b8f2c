/** Thin typed client for the trapkit service. Every non-2xx response becomes
 * an ApiError carrying the server's detail message, so callers can surface it
 * verbatim. No inference result is ever computed here: the UI only displays
 * what the server returned. */

import type {
  FeedbackJson,
  JobJson,
  LeaderboardJson,
  MdDocumentJson,
  ModelSummary,
  ResultJson,
  TestSetDescriptor,
  TriageSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export interface DetectOptions {
  detThreshold?: number;
  clfThreshold?: number;
  detectorId?: string;
  classifierId?: string;
  annotate?: boolean;
}

export interface BatchRequest {
  input_dir: string;
  det_threshold?: number;
  clf_threshold?: number;
  detector_id?: string;
  classifier_id?: string;
  workers?: number;
}

export interface VideoRequest {
  video_path: string;
  det_threshold?: number;
  clf_threshold?: number;
  detector_id?: string;
  classifier_id?: string;
  target_fps?: number;
}

export interface FeedbackRequest {
  model_id: string;
  user_id: string;
  rating: number;
  comment?: string;
  operator_token?: string;
}

type FetchLike = typeof fetch;

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return response.statusText || "request failed";
  }
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return (await response.json()) as T;
  }

  private postJson<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  listModels(): Promise<ModelSummary[]> {
    return this.request<ModelSummary[]>("/models");
  }

  listTestSets(): Promise<TestSetDescriptor[]> {
    return this.request<TestSetDescriptor[]>("/testsets");
  }

  detect(image: Blob, filename: string, options: DetectOptions = {}): Promise<ResultJson> {
    const form = new FormData();
    form.append("image", image, filename);
    if (options.detThreshold !== undefined) {
      form.append("det_threshold", String(options.detThreshold));
    }
    if (options.clfThreshold !== undefined) {
      form.append("clf_threshold", String(options.clfThreshold));
    }
    if (options.detectorId) form.append("detector_id", options.detectorId);
    if (options.classifierId) form.append("classifier_id", options.classifierId);
    if (options.annotate) form.append("annotate", "true");
    return this.request<ResultJson>("/detect", { method: "POST", body: form });
  }

  submitBatch(req: BatchRequest): Promise<{ job_id: string }> {
    return this.postJson<{ job_id: string }>("/jobs/batch", req);
  }

  submitVideo(req: VideoRequest): Promise<{ job_id: string }> {
    // server-side path variant; uploads would use multipart instead
    const form = new FormData();
    form.append("video_path", req.video_path);
    if (req.det_threshold !== undefined) form.append("det_threshold", String(req.det_threshold));
    if (req.clf_threshold !== undefined) form.append("clf_threshold", String(req.clf_threshold));
    if (req.detector_id) form.append("detector_id", req.detector_id);
    if (req.classifier_id) form.append("classifier_id", req.classifier_id);
    if (req.target_fps !== undefined) form.append("target_fps", String(req.target_fps));
    return this.request<{ job_id: string }>("/jobs/video", { method: "POST", body: form });
  }

  getJob(jobId: string): Promise<JobJson> {
    return this.request<JobJson>(`/jobs/${encodeURIComponent(jobId)}`);
  }

  getJobResult<T = MdDocumentJson>(jobId: string): Promise<T> {
    return this.request<T>(`/jobs/${encodeURIComponent(jobId)}/result`);
  }

  triage(resultsPath: string, threshold: number): Promise<TriageSummary> {
    return this.postJson<TriageSummary>("/triage", {
      results_path: resultsPath,
      threshold,
    });
  }

  leaderboard(testSetId: string): Promise<LeaderboardJson> {
    return this.request<LeaderboardJson>(`/leaderboard/${encodeURIComponent(testSetId)}`);
  }

  sendFeedback(req: FeedbackRequest): Promise<FeedbackJson> {
    return this.postJson<FeedbackJson>("/feedback", req);
  }
}
