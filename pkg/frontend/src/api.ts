import type { Choice, Progress, QueryView } from "./types.js";

export class ApiError extends Error {
    constructor(
        public status: number,
        message: string,
    ) {
        super(message);
    }
}

export class FeedbackApi {
    constructor(private base: string = "") {}

    /** Next unlabeled query, or null when the queue is exhausted (204). */
    async nextQuery(): Promise<QueryView | null> {
        const res = await fetch(`${this.base}/api/queries/next`);
        if (res.status === 204) return null;
        if (!res.ok) throw new ApiError(res.status, `next query failed: ${res.status}`);
        return (await res.json()) as QueryView;
    }

    async submitLabel(id: string, choice: Choice): Promise<void> {
        const res = await fetch(`${this.base}/api/labels`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ id, choice }),
        });
        if (res.status === 204) return;
        throw new ApiError(res.status, `label rejected: ${res.status}`);
    }

    async progress(): Promise<Progress> {
        const res = await fetch(`${this.base}/api/progress`);
        if (!res.ok) throw new ApiError(res.status, `progress failed: ${res.status}`);
        return (await res.json()) as Progress;
    }

    async exportLabels(): Promise<{ path: string; count: number }> {
        const res = await fetch(`${this.base}/api/export`, { method: "POST" });
        if (!res.ok) throw new ApiError(res.status, `export failed: ${res.status}`);
        return (await res.json()) as { path: string; count: number };
    }
}
