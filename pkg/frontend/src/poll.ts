/** Job polling: a single in-flight request loop per job, surfacing every
 * observed state so the progress bar tracks the server's counts exactly. */

import type { ApiClient } from "./api.js";
import type { JobJson } from "./types.js";

export interface PollOptions {
  intervalMs?: number;
  /** Injectable for tests; defaults to setTimeout-based sleep. */
  sleep?: (ms: number) => Promise<void>;
  /** Give up after this many polls (0 = unlimited). */
  maxPolls?: number;
}

function defaultSleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** Polls until the job reaches a terminal state. Calls onUpdate with each
 * snapshot, including the terminal one, and resolves with it. Rejects only on
 * transport errors or when maxPolls is exhausted; a "failed" job is a normal
 * resolution so the caller can show error_message. */
export async function pollJob(
  client: ApiClient,
  jobId: string,
  onUpdate: (job: JobJson) => void,
  options: PollOptions = {},
): Promise<JobJson> {
  const interval = options.intervalMs ?? 250;
  const sleep = options.sleep ?? defaultSleep;
  const maxPolls = options.maxPolls ?? 0;

  let polls = 0;
  for (;;) {
    const job = await client.getJob(jobId);
    onUpdate(job);
    if (job.state === "done" || job.state === "failed") return job;
    polls += 1;
    if (maxPolls > 0 && polls >= maxPolls) {
      throw new Error(`job ${jobId} still ${job.state} after ${polls} polls`);
    }
    await sleep(interval);
  }
}
