/** Review-queue state machine, kept free of DOM so it is directly testable.
 *
 * The model never invents reviews: cards enter from poll responses and leave
 * only after a terminal server response (200 resolved here, or 409/absent
 * because someone else resolved them). Poll failures set a banner and keep
 * the last known queue on screen.
 */

import { ApiError, ServiceClient } from "./api.js";
import type { CatalogEntry, Review } from "./types.js";

export type ConnectionState =
  | { kind: "ok" }
  | { kind: "auth-required" }
  | { kind: "error"; message: string };

export interface Notice {
  reviewId: string;
  message: string;
  tone: "info" | "success" | "warning" | "error";
}

export interface QueueSnapshot {
  reviews: Review[];
  connection: ConnectionState;
  notices: Notice[];
  lastPollAt: number | null;
}

export class QueueModel {
  private reviews = new Map<string, Review>();
  private submitting = new Set<string>();
  connection: ConnectionState = { kind: "ok" };
  notices: Notice[] = [];
  lastPollAt: number | null = null;

  constructor(
    private client: ServiceClient,
    private now: () => number = Date.now,
  ) {}

  snapshot(): QueueSnapshot {
    const reviews = [...this.reviews.values()].sort(
      (a, b) => a.created_at - b.created_at || a.review_id.localeCompare(b.review_id),
    );
    return {
      reviews,
      connection: this.connection,
      notices: [...this.notices],
      lastPollAt: this.lastPollAt,
    };
  }

  isSubmitting(reviewId: string): boolean {
    return this.submitting.has(reviewId);
  }

  /** One poll cycle; errors become connection state, never silent. */
  async poll(): Promise<QueueSnapshot> {
    try {
      const pending = await this.client.fetchPending();
      const seen = new Set(pending.map((r) => r.review_id));
      for (const review of pending) {
        if (!this.submitting.has(review.review_id)) {
          this.reviews.set(review.review_id, review);
        }
      }
      for (const id of [...this.reviews.keys()]) {
        if (!seen.has(id) && !this.submitting.has(id)) {
          // resolved elsewhere between polls: card leaves with a notice
          this.reviews.delete(id);
          this.pushNotice(id, "review resolved elsewhere", "info");
        }
      }
      this.connection = { kind: "ok" };
      this.lastPollAt = this.now();
    } catch (err) {
      if (err instanceof ApiError && err.status === 401) {
        this.connection = { kind: "auth-required" };
      } else {
        this.connection = {
          kind: "error",
          message: err instanceof Error ? err.message : String(err),
        };
      }
    }
    return this.snapshot();
  }

  /** Submit the expert's correction; the card leaves only on a terminal
   * server response (200 success or 409 already-resolved). */
  async submit(reviewId: string, exerciseId: number): Promise<QueueSnapshot> {
    if (!this.reviews.has(reviewId) || this.submitting.has(reviewId)) {
      return this.snapshot();
    }
    this.submitting.add(reviewId);
    try {
      await this.client.submitCorrection(reviewId, exerciseId);
      this.reviews.delete(reviewId);
      this.pushNotice(
        reviewId,
        "correction submitted; the user's model has been fine-tuned",
        "success",
      );
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.reviews.delete(reviewId);
        this.pushNotice(reviewId, "already resolved by another expert", "warning");
      } else if (err instanceof ApiError && err.status === 422) {
        this.pushNotice(reviewId, `rejected: ${err.detail}`, "error");
      } else if (err instanceof ApiError && err.status === 401) {
        this.connection = { kind: "auth-required" };
      } else {
        this.pushNotice(
          reviewId,
          err instanceof Error ? err.message : String(err),
          "error",
        );
      }
    } finally {
      this.submitting.delete(reviewId);
    }
    return this.snapshot();
  }

  dismissNotice(reviewId: string): void {
    this.notices = this.notices.filter((n) => n.reviewId !== reviewId);
  }

  private pushNotice(reviewId: string, message: string, tone: Notice["tone"]): void {
    this.notices = this.notices.filter((n) => n.reviewId !== reviewId);
    this.notices.push({ reviewId, message, tone });
  }
}

/** Poll driver with a configurable interval (default 3 s). */
export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private model: QueueModel,
    private onUpdate: (snapshot: QueueSnapshot) => void,
    public intervalMs = 3000,
  ) {}

  start(): void {
    this.stop();
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async tick(): Promise<void> {
    this.onUpdate(await this.model.poll());
  }
}

/** Group the exercise catalog by taxonomy path for the picker. */
export function groupCatalog(
  entries: CatalogEntry[],
): Map<string, CatalogEntry[]> {
  const groups = new Map<string, CatalogEntry[]>();
  for (const entry of entries) {
    const key = entry.path.length > 0 ? entry.path.slice(0, 2).join(" → ") : "other";
    const bucket = groups.get(key) ?? [];
    bucket.push(entry);
    groups.set(key, bucket);
  }
  for (const bucket of groups.values()) {
    bucket.sort((a, b) => (a.difficulty ?? 0) - (b.difficulty ?? 0) || a.id - b.id);
  }
  return new Map(
    [...groups.entries()].sort((a, b) => a[0].localeCompare(b[0])),
  );
}
