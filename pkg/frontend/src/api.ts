/** Typed client for the recommendation service. Every number the console
 * shows originates from one of these responses. */

import type { CatalogEntry, Review } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export interface ClientOptions {
  baseUrl: string;
  token?: string;
  fetchFn?: typeof fetch;
}

export class ServiceClient {
  baseUrl: string;
  token: string | undefined;
  private fetchFn: typeof fetch;

  constructor(options: ClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/+$/, "");
    this.token = options.token;
    this.fetchFn = options.fetchFn ?? fetch;
  }

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers["X-Auth-Token"] = this.token;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const doc = (await response.json()) as { error?: string };
        if (doc.error) detail = doc.error;
      } catch {
        /* non-JSON error body; keep the status text */
      }
      throw new ApiError(response.status, detail);
    }
    if (response.status === 204) return undefined as T;
    return (await response.json()) as T;
  }

  async health(): Promise<void> {
    await this.request<{ status: string }>("GET", "/v1/health");
  }

  async fetchPending(): Promise<Review[]> {
    const doc = await this.request<{ reviews: Review[] }>(
      "GET",
      "/v1/reviews?status=pending",
    );
    return doc.reviews;
  }

  async submitCorrection(reviewId: string, exerciseId: number): Promise<Review> {
    return this.request<Review>("POST", `/v1/reviews/${reviewId}`, {
      corrected_exercise_id: exerciseId,
    });
  }

  async fetchCatalog(): Promise<CatalogEntry[]> {
    const doc = await this.request<{ exercises: CatalogEntry[] }>(
      "GET",
      "/v1/exercises",
    );
    return doc.exercises;
  }
}
