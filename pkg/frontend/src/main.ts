/** Application shell: one job at a time, current stage rendered from server
 * state, pending edits submitted atomically, then advance. */

import { ApiClient, ApiError } from "./api.js";
import { renderGraph } from "./graph.js";
import type { HighlightSpan } from "./highlight.js";
import { PendingEdits } from "./state.js";
import type { EntityItem, JobSummary, Passage, StageItems } from "./types.js";
import {
  clearError,
  renderError,
  renderPassages,
  renderPendingEdits,
  renderStage,
  renderSummary,
} from "./views.js";

export interface AppElements {
  summary: HTMLElement;
  stage: HTMLElement;
  passages: HTMLElement;
  pending: HTMLElement;
  graph: HTMLElement;
  error: HTMLElement;
  submitButton: HTMLButtonElement;
  advanceButton: HTMLButtonElement;
}

export class App {
  readonly edits = new PendingEdits();
  summary: JobSummary | null = null;
  items: StageItems | null = null;
  passages: Passage[] = [];

  constructor(
    readonly client: ApiClient,
    readonly jobId: string,
    readonly elements: AppElements,
  ) {
    elements.submitButton.addEventListener("click", () => void this.submit());
    elements.advanceButton.addEventListener("click", () => void this.advance());
  }

  async refresh(): Promise<void> {
    try {
      this.summary = await this.client.getJob(this.jobId);
      this.passages = (await this.client.getPassages(this.jobId)).passages;
      this.items = await this.client.getStageItems(this.jobId, "current");
      clearError(this.elements.error);
      this.renderAll();
      if (this.summary.stage === "FINALIZED") {
        const graph = await this.client.getGraph(this.jobId);
        renderGraph(this.elements.graph, graph, (node) => {
          // clicking a node focuses the first passage mentioning it
          const entity = (this.items?.items as EntityItem[] | undefined)?.find(
            (item) => item.local_id === node.id || item.name === node.name,
          );
          const span = entity?.spans[0];
          if (span) this.jumpToSpan(span.passage_id, span.start, span.end);
        });
      }
    } catch (error) {
      this.showError(error);
    }
  }

  private renderAll(): void {
    if (!this.summary || !this.items) return;
    renderSummary(this.elements.summary, this.summary);
    const entityRefs = this.entityRefs();
    renderStage(this.elements.stage, this.items, entityRefs, {
      enqueue: (draft) => {
        this.edits.add(draft);
        this.renderPending();
      },
      jumpToSpan: (passageId, start, end) => this.jumpToSpan(passageId, start, end),
    });
    renderPassages(this.elements.passages, this.passages, this.spansByPassage());
    this.renderPending();
  }

  private entityRefs() {
    if (this.items?.kind === "entities") {
      return (this.items.items as EntityItem[]).map((item) => ({
        local_id: item.local_id,
        name: item.name,
      }));
    }
    // pair/relationship stages: derive the picker list from items the server
    // sent us (names it already resolved), falling back to ids.
    const refs = new Map<string, string>();
    for (const item of (this.items?.items ?? []) as unknown as Array<Record<string, unknown>>) {
      if (typeof item.source_id === "string" && typeof item.source_name === "string") {
        refs.set(item.source_id, item.source_name);
      }
      if (typeof item.target_id === "string" && typeof item.target_name === "string") {
        refs.set(item.target_id, item.target_name);
      }
    }
    return [...refs.entries()].map(([local_id, name]) => ({ local_id, name }));
  }

  private spansByPassage(): Map<string, HighlightSpan[]> {
    const spans = new Map<string, HighlightSpan[]>();
    if (this.items?.kind === "entities") {
      for (const item of this.items.items as EntityItem[]) {
        for (const span of item.spans) {
          const bucket = spans.get(span.passage_id) ?? [];
          bucket.push({ start: span.start, end: span.end, entityId: item.local_id });
          spans.set(span.passage_id, bucket);
        }
      }
    }
    return spans;
  }

  private renderPending(): void {
    renderPendingEdits(
      this.elements.pending,
      this.edits.list(),
      (index) => {
        this.edits.remove(index);
        this.renderPending();
      },
      this.edits.lastError,
    );
  }

  jumpToSpan(passageId: string, start: number, end: number): void {
    const target = this.elements.passages.querySelector(
      `[data-passage-id="${passageId}"]`,
    ) as HTMLElement | null;
    if (target) {
      target.classList.add("focused");
      target.setAttribute("data-focus-span", `${start}-${end}`);
      target.scrollIntoView?.({ block: "center" });
    }
  }

  async submit(complete = true): Promise<void> {
    if (!this.summary) return;
    const outcome = await this.edits.submit(
      this.client,
      this.jobId,
      complete,
      this.summary.version,
    );
    if (outcome.ok) {
      await this.refresh();
    } else {
      this.renderPending(); // keeps drafts, shows the server message inline
      if (outcome.error && outcome.error.code !== "validation_failed") {
        this.showError(outcome.error);
      }
    }
  }

  async advance(): Promise<void> {
    if (!this.summary) return;
    try {
      await this.client.advance(this.jobId, this.summary.version);
      await this.refresh();
    } catch (error) {
      this.showError(error);
    }
  }

  private showError(error: unknown): void {
    if (error instanceof ApiError) {
      renderError(this.elements.error, error, () => void this.refresh());
    } else {
      throw error;
    }
  }
}

export function mount(doc: Document, client: ApiClient, jobId: string): App {
  const root = doc.getElementById("app") ?? doc.body;
  root.innerHTML = `
    <header id="summary"></header>
    <div id="error"></div>
    <main class="columns">
      <section id="stage"></section>
      <aside id="passages"></aside>
    </main>
    <section id="pending"></section>
    <div class="controls">
      <button id="submit-review">Submit review</button>
      <button id="advance">Advance</button>
    </div>
    <section id="graph"></section>
  `;
  const app = new App(client, jobId, {
    summary: doc.getElementById("summary") as HTMLElement,
    stage: doc.getElementById("stage") as HTMLElement,
    passages: doc.getElementById("passages") as HTMLElement,
    pending: doc.getElementById("pending") as HTMLElement,
    graph: doc.getElementById("graph") as HTMLElement,
    error: doc.getElementById("error") as HTMLElement,
    submitButton: doc.getElementById("submit-review") as HTMLButtonElement,
    advanceButton: doc.getElementById("advance") as HTMLButtonElement,
  });
  return app;
}

/** Browser entry point: ?api=<base>&job=<id>. */
export async function bootstrap(win: Window & typeof globalThis): Promise<App | null> {
  const params = new URLSearchParams(win.location.search);
  const jobId = params.get("job");
  if (!jobId) return null;
  const base = params.get("api") ?? "http://127.0.0.1:8099";
  const app = mount(win.document, new ApiClient(base), jobId);
  await app.refresh();
  return app;
}

declare global {
  interface Window {
    __STIXTRACT_NO_AUTOBOOT__?: boolean;
  }
}

if (typeof window !== "undefined" && !window.__STIXTRACT_NO_AUTOBOOT__) {
  void bootstrap(window);
}
