import { ApiError, FeedbackApi } from "./api.js";
import { isValidPolyline, renderErrorCard, renderSegmentSvg } from "./render.js";
import type { Choice, QueryView } from "./types.js";

const KEY_CHOICES: Record<string, Choice> = { "1": "1", "2": "2", t: "tie", s: "skip" };

/**
 * Pairwise labeling loop: show the current query as two side-by-side
 * images, capture a choice per click or keyboard, advance optimistically,
 * retry once on network failure, and advance past 409 (already labeled).
 * The current query id always comes from the server; reloads are safe
 * because all progress lives server-side.
 */
export class LabelingApp {
    current: QueryView | null = null;
    done = false;
    private inFlight = false;

    constructor(
        private api: FeedbackApi,
        private root: HTMLElement,
    ) {}

    async start(): Promise<void> {
        this.renderShell();
        document.addEventListener("keydown", (ev) => {
            const choice = KEY_CHOICES[ev.key];
            if (choice) void this.submit(choice);
        });
        await this.advance();
    }

    async advance(): Promise<void> {
        this.current = await this.api.nextQuery();
        this.done = this.current === null;
        this.renderQuery();
        await this.refreshProgress();
    }

    async submit(choice: Choice): Promise<void> {
        if (!this.current || this.inFlight) return;
        const id = this.current.id;
        this.inFlight = true;
        try {
            try {
                await this.api.submitLabel(id, choice);
            } catch (err) {
                if (err instanceof ApiError && err.status === 409) {
                    this.setStatus("Already labeled elsewhere; moving on.");
                } else if (err instanceof ApiError) {
                    throw err;
                } else {
                    await this.api.submitLabel(id, choice); // one retry on network failure
                }
            }
        } finally {
            this.inFlight = false;
        }
        await this.advance();
    }

    async exportLabels(): Promise<void> {
        const { path, count } = await this.api.exportLabels();
        this.setStatus(`Exported ${count} labels to ${path}`);
    }

    private renderShell(): void {
        this.root.innerHTML = `
          <header>
            <h1>Which path do you prefer?</h1>
            <p class="hint">Keys: 1 = left, 2 = right, t = tie, s = skip</p>
          </header>
          <main>
            <div id="panes" class="panes"></div>
            <div class="controls">
              <button id="pick1">Prefer left (1)</button>
              <button id="picktie">Tie (t)</button>
              <button id="pickskip">Skip (s)</button>
              <button id="pick2">Prefer right (2)</button>
            </div>
            <p id="status" class="status"></p>
            <p id="progress" class="progress"></p>
            <button id="export">Export labels</button>
          </main>`;
        this.bind("pick1", () => this.submit("1"));
        this.bind("pick2", () => this.submit("2"));
        this.bind("picktie", () => this.submit("tie"));
        this.bind("pickskip", () => this.submit("skip"));
        this.bind("export", () => this.exportLabels());
    }

    private bind(id: string, fn: () => Promise<void>): void {
        const el = this.root.querySelector(`#${id}`);
        el?.addEventListener("click", () => void fn());
    }

    private renderQuery(): void {
        const panes = this.root.querySelector("#panes") as HTMLElement;
        panes.innerHTML = "";
        if (!this.current) {
            const sign = document.createElement("p");
            sign.className = "all-done";
            sign.textContent = "All queries handled. Export when ready.";
            panes.appendChild(sign);
            return;
        }
        for (const [label, polyline] of [
            ["left", this.current.seg1],
            ["right", this.current.seg2],
        ] as const) {
            const pane = document.createElement("figure");
            pane.className = `pane pane-${label}`;
            if (isValidPolyline(polyline)) {
                pane.appendChild(renderSegmentSvg(polyline, this.current.geometry));
            } else {
                pane.appendChild(renderErrorCard(`malformed ${label} polyline`));
            }
            const cap = document.createElement("figcaption");
            cap.textContent = label === "left" ? "Segment 1" : "Segment 2";
            pane.appendChild(cap);
            panes.appendChild(pane);
        }
    }

    private async refreshProgress(): Promise<void> {
        const p = await this.api.progress();
        const el = this.root.querySelector("#progress");
        if (el) el.textContent = `labeled ${p.labeled} · skipped ${p.skipped} · remaining ${p.remaining}`;
    }

    private setStatus(text: string): void {
        const el = this.root.querySelector("#status");
        if (el) el.textContent = text;
    }
}
