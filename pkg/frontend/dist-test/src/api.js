/** Typed client for the recommendation service. Every number the console
 * shows originates from one of these responses. */
export class ApiError extends Error {
    status;
    detail;
    constructor(status, detail) {
        super(`HTTP ${status}: ${detail}`);
        this.status = status;
        this.detail = detail;
    }
}
export class ServiceClient {
    baseUrl;
    token;
    fetchFn;
    constructor(options) {
        this.baseUrl = options.baseUrl.replace(/\/+$/, "");
        this.token = options.token;
        this.fetchFn = options.fetchFn ?? fetch;
    }
    headers() {
        const headers = { "Content-Type": "application/json" };
        if (this.token)
            headers["X-Auth-Token"] = this.token;
        return headers;
    }
    async request(method, path, body) {
        const response = await this.fetchFn(`${this.baseUrl}${path}`, {
            method,
            headers: this.headers(),
            body: body === undefined ? undefined : JSON.stringify(body),
        });
        if (!response.ok) {
            let detail = response.statusText;
            try {
                const doc = (await response.json());
                if (doc.error)
                    detail = doc.error;
            }
            catch {
                /* non-JSON error body; keep the status text */
            }
            throw new ApiError(response.status, detail);
        }
        if (response.status === 204)
            return undefined;
        return (await response.json());
    }
    async health() {
        await this.request("GET", "/v1/health");
    }
    async fetchPending() {
        const doc = await this.request("GET", "/v1/reviews?status=pending");
        return doc.reviews;
    }
    async submitCorrection(reviewId, exerciseId) {
        return this.request("POST", `/v1/reviews/${reviewId}`, {
            corrected_exercise_id: exerciseId,
        });
    }
    async fetchCatalog() {
        const doc = await this.request("GET", "/v1/exercises");
        return doc.exercises;
    }
}
//# sourceMappingURL=api.js.map