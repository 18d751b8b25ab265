import type { JobStatus } from "./types";

export interface MonitorCallbacks {
  /** fired on every poll with the monotone display progress and new frames */
  onUpdate?: (displayed: number, total: number, newFrames: number[]) => void;
  onDone?: (status: JobStatus) => void;
  onFailed?: (status: JobStatus) => void;
}

type Scheduler = (fn: () => void, ms: number) => unknown;

/**
 * Polls a render job until it reaches a terminal state.
 *
 * Displayed progress is clamped to be monotone non-decreasing even if a
 * poll response arrives out of order, and each frame index is reported
 * exactly once.
 */
export class JobMonitor {
  displayedProgress = 0;
  seenFrames = new Set<number>();
  finished = false;

  constructor(
    private poll: () => Promise<JobStatus>,
    private callbacks: MonitorCallbacks = {},
    private intervalMs = 400,
    private schedule: Scheduler = (fn, ms) => setTimeout(fn, ms),
  ) {}

  /** One poll step; returns true when the job reached a terminal state. */
  async step(): Promise<boolean> {
    const status = await this.poll();
    this.displayedProgress = Math.max(this.displayedProgress, status.progress);
    const fresh = status.frames.filter((f) => !this.seenFrames.has(f));
    fresh.forEach((f) => this.seenFrames.add(f));
    this.callbacks.onUpdate?.(this.displayedProgress, status.total, fresh);
    if (status.status === "done") {
      this.finished = true;
      this.callbacks.onDone?.(status);
      return true;
    }
    if (status.status === "failed") {
      this.finished = true;
      this.callbacks.onFailed?.(status);
      return true;
    }
    return false;
  }

  /** Poll until terminal; resolves with the history of displayed progress. */
  async run(): Promise<number[]> {
    const history: number[] = [];
    for (;;) {
      const done = await this.step();
      history.push(this.displayedProgress);
      if (done) return history;
      await new Promise((resolve) => this.schedule(() => resolve(undefined), this.intervalMs));
    }
  }
}
