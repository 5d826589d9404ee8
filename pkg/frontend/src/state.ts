/** Pending-edit queue: drafts accumulate locally and go to the server in one
 * atomic POST. The queue is cleared only on a 2xx; afterwards the server
 * response is the single source of truth. On a validation failure the
 * offending submission is kept so the view can highlight it with the
 * server's message. */

import { ApiClient, ApiError } from "./api.js";
import type { JobSummary, ReviewActionDraft } from "./types.js";

export interface SubmitOutcome {
  ok: boolean;
  summary?: JobSummary;
  error?: ApiError;
}

export class PendingEdits {
  private drafts: ReviewActionDraft[] = [];
  lastError: ApiError | null = null;

  get length(): number {
    return this.drafts.length;
  }

  list(): readonly ReviewActionDraft[] {
    return this.drafts;
  }

  add(draft: ReviewActionDraft): void {
    this.drafts.push(draft);
  }

  /** Undo a queued draft before submission; no network involved. */
  remove(index: number): void {
    this.drafts.splice(index, 1);
  }

  clear(): void {
    this.drafts = [];
    this.lastError = null;
  }

  async submit(
    client: ApiClient,
    jobId: string,
    complete: boolean,
    version?: number,
  ): Promise<SubmitOutcome> {
    try {
      const summary = await client.submitReview(jobId, this.drafts, complete, version);
      this.drafts = [];
      this.lastError = null;
      return { ok: true, summary };
    } catch (error) {
      if (error instanceof ApiError) {
        this.lastError = error; // drafts retained for correction
        return { ok: false, error };
      }
      throw error;
    }
  }
}
