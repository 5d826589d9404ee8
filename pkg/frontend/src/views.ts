/** DOM rendering for the review console. Render functions are given the
 * server payloads plus callbacks; they never invent items, options or
 * verdicts: all of those render straight from API data. */

import { ApiError } from "./api.js";
import { segmentText, type HighlightSpan } from "./highlight.js";
import type {
  EntityItem,
  JobSummary,
  PairItem,
  Passage,
  RelationshipItem,
  ReviewActionDraft,
  StageItems,
} from "./types.js";

export interface StageCallbacks {
  enqueue(draft: ReviewActionDraft): void;
  jumpToSpan(passageId: string, start: number, end: number): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function badge(doc: Document, flag: string): HTMLElement {
  const isWarning = flag.includes("not-sure") || flag.includes("conflict") || flag.includes("fault");
  const span = el(doc, "span", isWarning ? "badge badge-warning" : "badge", flag);
  span.setAttribute("data-flag", flag);
  return span;
}

export function renderSummary(container: HTMLElement, summary: JobSummary): void {
  const doc = container.ownerDocument;
  container.replaceChildren(
    el(doc, "span", "job-id", summary.job_id),
    el(doc, "span", "job-stage", summary.stage),
    el(doc, "span", "job-mode", summary.review_mode),
    el(
      doc,
      "span",
      "job-counts",
      `${summary.entities} entities / ${summary.pairs} pairs / ${summary.relationships} relationships`,
    ),
  );
  container.setAttribute("data-version", String(summary.version));
  container.setAttribute("data-stage", summary.stage);
}

export function renderError(container: HTMLElement, error: ApiError, onRetry: () => void): void {
  const doc = container.ownerDocument;
  const box = el(doc, "div", "error-banner");
  box.setAttribute("data-code", error.code);
  box.appendChild(el(doc, "strong", "error-code", error.code));
  box.appendChild(el(doc, "span", "error-message", ` ${error.message}`));
  const retry = el(doc, "button", "retry", "Retry");
  retry.addEventListener("click", onRetry);
  box.appendChild(retry);
  container.replaceChildren(box);
}

export function clearError(container: HTMLElement): void {
  container.replaceChildren();
}

function entityRow(
  doc: Document,
  item: EntityItem,
  typeOptions: string[],
  callbacks: StageCallbacks,
): HTMLTableRowElement {
  const row = el(doc, "tr", "entity-row") as HTMLTableRowElement;
  row.setAttribute("data-entity-id", item.local_id);

  const nameCell = el(doc, "td", "entity-name", item.name);
  if (item.aliases.length) {
    nameCell.appendChild(el(doc, "small", "aliases", ` (${item.aliases.join(", ")})`));
  }
  row.appendChild(nameCell);

  const typeCell = el(doc, "td", "entity-type");
  const select = el(doc, "select", "type-select") as HTMLSelectElement;
  const blank = el(doc, "option", undefined, "(untyped)") as HTMLOptionElement;
  blank.value = "";
  select.appendChild(blank);
  for (const option of typeOptions) {
    const optionEl = el(doc, "option", undefined, option) as HTMLOptionElement;
    optionEl.value = option;
    select.appendChild(optionEl);
  }
  select.value = item.entity_type ?? "";
  select.addEventListener("change", () => {
    callbacks.enqueue({
      kind: "alter",
      target: item.local_id,
      payload: { entity_type: select.value },
    });
  });
  typeCell.appendChild(select);
  row.appendChild(typeCell);

  const spanCell = el(doc, "td", "entity-spans");
  item.spans.forEach((span, index) => {
    const link = el(doc, "a", "span-link", `${span.passage_id}@${span.start}`);
    link.setAttribute("href", "#");
    link.addEventListener("click", (event) => {
      event.preventDefault();
      callbacks.jumpToSpan(span.passage_id, span.start, span.end);
    });
    spanCell.appendChild(link);
    if (index < item.spans.length - 1) spanCell.appendChild(doc.createTextNode(" "));
  });
  row.appendChild(spanCell);

  const flagCell = el(doc, "td", "entity-flags");
  for (const flag of item.flags) flagCell.appendChild(badge(doc, flag));
  row.appendChild(flagCell);

  const actions = el(doc, "td", "entity-actions");
  const deleteButton = el(doc, "button", "delete-entity", "Delete");
  deleteButton.addEventListener("click", () => {
    callbacks.enqueue({ kind: "delete", target: item.local_id });
  });
  actions.appendChild(deleteButton);
  row.appendChild(actions);
  return row;
}

function pairRow(doc: Document, item: PairItem, callbacks: StageCallbacks): HTMLTableRowElement {
  const row = el(doc, "tr", "pair-row") as HTMLTableRowElement;
  row.setAttribute("data-pair-id", item.pair_id);
  row.setAttribute("data-verdict", item.verdict);
  row.appendChild(el(doc, "td", "pair-source", item.source_name));
  row.appendChild(el(doc, "td", "pair-target", item.target_name));
  // Allowed labels come from the server; shown so the analyst knows what T4
  // will be able to choose from.
  const labelsCell = el(doc, "td", "pair-allowed-labels");
  for (const label of item.allowed_labels) {
    const chip = el(doc, "span", "label-chip", label);
    chip.setAttribute("data-allowed-label", label);
    labelsCell.appendChild(chip);
  }
  row.appendChild(labelsCell);
  row.appendChild(el(doc, "td", "pair-verdict", item.verdict));

  const flagCell = el(doc, "td", "pair-flags");
  for (const flag of item.flags) flagCell.appendChild(badge(doc, flag));
  row.appendChild(flagCell);

  const actions = el(doc, "td", "pair-actions");
  const reject = el(doc, "button", "reject-pair", "Not related");
  reject.addEventListener("click", () =>
    callbacks.enqueue({ kind: "alter", target: item.pair_id, payload: { verdict: "not_related" } }),
  );
  const restore = el(doc, "button", "restore-pair", "Related");
  restore.addEventListener("click", () =>
    callbacks.enqueue({ kind: "alter", target: item.pair_id, payload: { verdict: "related" } }),
  );
  actions.appendChild(reject);
  actions.appendChild(restore);
  row.appendChild(actions);
  return row;
}

function relationshipRow(
  doc: Document,
  item: RelationshipItem,
  callbacks: StageCallbacks,
): HTMLTableRowElement {
  const row = el(doc, "tr", "relationship-row") as HTMLTableRowElement;
  row.setAttribute("data-rel-id", item.rel_id);
  row.appendChild(el(doc, "td", "rel-source", item.source_name));

  const labelCell = el(doc, "td", "rel-label");
  const select = el(doc, "select", "label-select") as HTMLSelectElement;
  for (const label of item.allowed_labels) {
    const option = el(doc, "option", undefined, label) as HTMLOptionElement;
    option.value = label;
    select.appendChild(option);
  }
  select.value = item.label;
  select.addEventListener("change", () =>
    callbacks.enqueue({ kind: "alter", target: item.rel_id, payload: { label: select.value } }),
  );
  labelCell.appendChild(select);
  row.appendChild(labelCell);

  row.appendChild(el(doc, "td", "rel-target", item.target_name));
  row.appendChild(el(doc, "td", "rel-state", item.review_state));

  const actions = el(doc, "td", "rel-actions");
  const deleteButton = el(doc, "button", "delete-relationship", "Delete");
  deleteButton.addEventListener("click", () =>
    callbacks.enqueue({ kind: "delete", target: item.rel_id }),
  );
  actions.appendChild(deleteButton);
  row.appendChild(actions);
  return row;
}

function addEntityForm(doc: Document, items: StageItems, callbacks: StageCallbacks): HTMLElement {
  const form = el(doc, "div", "add-entity-form");
  const name = el(doc, "input", "add-entity-name") as HTMLInputElement;
  name.placeholder = "entity name";
  const typeSelect = el(doc, "select", "add-entity-type") as HTMLSelectElement;
  const blank = el(doc, "option", undefined, "(untyped)") as HTMLOptionElement;
  blank.value = "";
  typeSelect.appendChild(blank);
  for (const option of items.entity_type_options) {
    const optionEl = el(doc, "option", undefined, option) as HTMLOptionElement;
    optionEl.value = option;
    typeSelect.appendChild(optionEl);
  }
  const button = el(doc, "button", "add-entity", "Add entity");
  button.addEventListener("click", () => {
    if (!name.value.trim()) return;
    const payload: Record<string, unknown> = { name: name.value.trim() };
    if (typeSelect.value) payload.entity_type = typeSelect.value;
    callbacks.enqueue({ kind: "add", payload });
    name.value = "";
  });
  form.append(name, typeSelect, button);
  return form;
}

function addPairForm(
  doc: Document,
  entities: { local_id: string; name: string }[],
  callbacks: StageCallbacks,
  withLabel?: string[],
): HTMLElement {
  const form = el(doc, "div", withLabel ? "add-relationship-form" : "add-pair-form");
  const source = el(doc, "select", "add-source") as HTMLSelectElement;
  const target = el(doc, "select", "add-target") as HTMLSelectElement;
  for (const select of [source, target]) {
    for (const entity of entities) {
      const option = el(doc, "option", undefined, entity.name) as HTMLOptionElement;
      option.value = entity.local_id;
      select.appendChild(option);
    }
  }
  form.append(source, target);
  let labelInput: HTMLInputElement | null = null;
  if (withLabel) {
    labelInput = el(doc, "input", "add-label") as HTMLInputElement;
    labelInput.placeholder = "label";
    form.appendChild(labelInput);
  }
  const button = el(
    doc,
    "button",
    withLabel ? "add-relationship" : "add-pair",
    withLabel ? "Add relationship" : "Add related pair",
  );
  button.addEventListener("click", () => {
    const payload: Record<string, unknown> = {
      source_id: source.value,
      target_id: target.value,
    };
    if (labelInput) payload.label = labelInput.value.trim();
    callbacks.enqueue({ kind: "add", payload });
  });
  form.appendChild(button);
  return form;
}

export interface EntityRef {
  local_id: string;
  name: string;
}

export function renderStage(
  container: HTMLElement,
  items: StageItems,
  entityRefs: EntityRef[],
  callbacks: StageCallbacks,
): void {
  const doc = container.ownerDocument;
  container.replaceChildren();
  container.setAttribute("data-kind", items.kind);

  if (items.items.length === 0) {
    container.appendChild(
      el(doc, "p", "empty-state", "Nothing to review at this stage yet."),
    );
  }

  const table = el(doc, "table", `stage-table stage-${items.kind}`) as HTMLTableElement;
  const body = el(doc, "tbody");
  table.appendChild(body);

  if (items.kind === "entities") {
    for (const item of items.items as EntityItem[]) {
      body.appendChild(entityRow(doc, item, items.entity_type_options, callbacks));
    }
    container.appendChild(table);
    container.appendChild(addEntityForm(doc, items, callbacks));
  } else if (items.kind === "pairs") {
    for (const item of items.items as PairItem[]) {
      body.appendChild(pairRow(doc, item, callbacks));
    }
    container.appendChild(table);
    container.appendChild(addPairForm(doc, entityRefs, callbacks));
  } else if (items.kind === "relationships") {
    for (const item of items.items as RelationshipItem[]) {
      body.appendChild(relationshipRow(doc, item, callbacks));
    }
    container.appendChild(table);
    container.appendChild(addPairForm(doc, entityRefs, callbacks, []));
  }
}

export function renderPassages(
  container: HTMLElement,
  passages: Passage[],
  spansByPassage: Map<string, HighlightSpan[]>,
): void {
  const doc = container.ownerDocument;
  container.replaceChildren();
  for (const passage of passages) {
    const block = el(doc, "article", "passage");
    block.setAttribute("data-passage-id", passage.passage_id);
    if (passage.heading) block.appendChild(el(doc, "h3", "passage-heading", passage.heading));
    const paragraph = el(doc, "p", "passage-text");
    const segments = segmentText(passage.text, spansByPassage.get(passage.passage_id) ?? []);
    for (const segment of segments) {
      if (segment.entityIds.length === 0) {
        paragraph.appendChild(doc.createTextNode(segment.text));
      } else {
        const mark = el(doc, "mark", "entity-span", segment.text);
        mark.setAttribute("data-entity-ids", segment.entityIds.join(" "));
        if (segment.entityIds.length > 1) mark.classList.add("stacked");
        paragraph.appendChild(mark);
      }
    }
    block.appendChild(paragraph);
    container.appendChild(block);
  }
}

export function renderPendingEdits(
  container: HTMLElement,
  drafts: readonly ReviewActionDraft[],
  onUndo: (index: number) => void,
  lastError: ApiError | null,
): void {
  const doc = container.ownerDocument;
  container.replaceChildren();
  const list = el(doc, "ul", "pending-edits");
  drafts.forEach((draft, index) => {
    const item = el(
      doc,
      "li",
      "pending-edit",
      `${draft.kind} ${draft.target ?? ""} ${JSON.stringify(draft.payload ?? {})}`,
    );
    if (lastError && index === drafts.length - 1) {
      // highlight the offending submission with the server's own message
      item.classList.add("rejected");
      item.appendChild(el(doc, "span", "server-message", ` ${lastError.message}`));
    }
    const undo = el(doc, "button", "undo-edit", "Undo");
    undo.addEventListener("click", () => onUndo(index));
    item.appendChild(undo);
    list.appendChild(item);
  });
  container.appendChild(list);
  container.setAttribute("data-count", String(drafts.length));
}
