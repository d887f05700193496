/**
 * Job monitoring: poll status until terminal, retrying transient network
 * failures with exponential backoff. Terminal failures surface the tail
 * of the job log so the user sees what went wrong.
 */

import { ApiClient, ApiError, JobStatus } from "./api.js";

export interface PollOptions {
  intervalMs?: number;
  maxBackoffMs?: number;
  timeoutMs?: number;
  onUpdate?: (status: JobStatus) => void;
  sleep?: (ms: number) => Promise<void>;
}

export class JobFailedError extends Error {
  constructor(
    public status: JobStatus,
    public logExcerpt: string,
  ) {
    super(`job ${status.job_id} ${status.state}: ${status.error ?? "see log"}`);
  }
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export async function pollJob(
  api: ApiClient,
  jobId: string,
  options: PollOptions = {},
): Promise<JobStatus> {
  const interval = options.intervalMs ?? 500;
  const maxBackoff = options.maxBackoffMs ?? 8000;
  const timeout = options.timeoutMs ?? 10 * 60 * 1000;
  const sleep = options.sleep ?? defaultSleep;

  const started = Date.now();
  let backoff = interval;
  for (;;) {
    if (Date.now() - started > timeout) {
      throw new Error(`timed out waiting for job ${jobId}`);
    }
    let status: JobStatus;
    try {
      status = await api.jobStatus(jobId);
      backoff = interval; // healthy again
    } catch (err) {
      if (err instanceof ApiError && err.status < 500) throw err;
      // Network hiccup or server restart: back off and retry.
      await sleep(backoff);
      backoff = Math.min(backoff * 2, maxBackoff);
      continue;
    }
    options.onUpdate?.(status);
    if (status.state === "done") return status;
    if (status.state === "failed" || status.state === "cancelled") {
      let excerpt = "";
      try {
        const log = await api.jobLog(jobId);
        excerpt = log.split("\n").slice(-10).join("\n");
      } catch {
        excerpt = "(log unavailable)";
      }
      throw new JobFailedError(status, excerpt);
    }
    await sleep(interval);
  }
}

export function progressFraction(status: JobStatus): number {
  const { frames_done, frames_total } = status.progress;
  return frames_total > 0 ? frames_done / frames_total : 0;
}
