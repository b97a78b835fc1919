/** Review-queue state machine, kept free of DOM so it is directly testable.
 *
 * The model never invents reviews: cards enter from poll responses and leave
 * only after a terminal server response (200 resolved here, or 409/absent
 * because someone else resolved them). Poll failures set a banner and keep
 * the last known queue on screen.
 */
import { ApiError } from "./api.js";
export class QueueModel {
    client;
    now;
    reviews = new Map();
    submitting = new Set();
    connection = { kind: "ok" };
    notices = [];
    lastPollAt = null;
    constructor(client, now = Date.now) {
        this.client = client;
        this.now = now;
    }
    snapshot() {
        const reviews = [...this.reviews.values()].sort((a, b) => a.created_at - b.created_at || a.review_id.localeCompare(b.review_id));
        return {
            reviews,
            connection: this.connection,
            notices: [...this.notices],
            lastPollAt: this.lastPollAt,
        };
    }
    isSubmitting(reviewId) {
        return this.submitting.has(reviewId);
    }
    /** One poll cycle; errors become connection state, never silent. */
    async poll() {
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
        }
        catch (err) {
            if (err instanceof ApiError && err.status === 401) {
                this.connection = { kind: "auth-required" };
            }
            else {
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
    async submit(reviewId, exerciseId) {
        if (!this.reviews.has(reviewId) || this.submitting.has(reviewId)) {
            return this.snapshot();
        }
        this.submitting.add(reviewId);
        try {
            await this.client.submitCorrection(reviewId, exerciseId);
            this.reviews.delete(reviewId);
            this.pushNotice(reviewId, "correction submitted; the user's model has been fine-tuned", "success");
        }
        catch (err) {
            if (err instanceof ApiError && err.status === 409) {
                this.reviews.delete(reviewId);
                this.pushNotice(reviewId, "already resolved by another expert", "warning");
            }
            else if (err instanceof ApiError && err.status === 422) {
                this.pushNotice(reviewId, `rejected: ${err.detail}`, "error");
            }
            else if (err instanceof ApiError && err.status === 401) {
                this.connection = { kind: "auth-required" };
            }
            else {
                this.pushNotice(reviewId, err instanceof Error ? err.message : String(err), "error");
            }
        }
        finally {
            this.submitting.delete(reviewId);
        }
        return this.snapshot();
    }
    dismissNotice(reviewId) {
        this.notices = this.notices.filter((n) => n.reviewId !== reviewId);
    }
    pushNotice(reviewId, message, tone) {
        this.notices = this.notices.filter((n) => n.reviewId !== reviewId);
        this.notices.push({ reviewId, message, tone });
    }
}
/** Poll driver with a configurable interval (default 3 s). */
export class Poller {
    model;
    onUpdate;
    intervalMs;
    timer = null;
    constructor(model, onUpdate, intervalMs = 3000) {
        this.model = model;
        this.onUpdate = onUpdate;
        this.intervalMs = intervalMs;
    }
    start() {
        this.stop();
        void this.tick();
        this.timer = setInterval(() => void this.tick(), this.intervalMs);
    }
    stop() {
        if (this.timer !== null) {
            clearInterval(this.timer);
            this.timer = null;
        }
    }
    async tick() {
        this.onUpdate(await this.model.poll());
    }
}
/** Group the exercise catalog by taxonomy path for the picker. */
export function groupCatalog(entries) {
    const groups = new Map();
    for (const entry of entries) {
        const key = entry.path.length > 0 ? entry.path.slice(0, 2).join(" → ") : "other";
        const bucket = groups.get(key) ?? [];
        bucket.push(entry);
        groups.set(key, bucket);
    }
    for (const bucket of groups.values()) {
        bucket.sort((a, b) => (a.difficulty ?? 0) - (b.difficulty ?? 0) || a.id - b.id);
    }
    return new Map([...groups.entries()].sort((a, b) => a[0].localeCompare(b[0])));
}
//# sourceMappingURL=queue.js.map