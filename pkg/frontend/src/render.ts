/** HTML-string views; no DOM access so tests run in plain node. */

import type { ConsoleController } from "./controller.js";
import type { QueueItem } from "./model.js";

const REPLACEMENTS: Record<string, string> = {
  "&": "&amp;",
  "<": "&lt;",
  ">": "&gt;",
  '"': "&quot;",
  "'": "&#39;",
};

export function esc(value: unknown): string {
  return String(value).replace(/[&<>"']/g, (ch) => REPLACEMENTS[ch] ?? ch);
}

function pct(p: number): string {
  return `${(100 * p).toFixed(1)}%`;
}

export function renderHeader(controller: ConsoleController): string {
  const status = controller.model.status;
  if (!status) return `<header class="status"><p>connecting…</p></header>`;
  const pools = status.pool_sizes;
  const badges = [
    status.suspended ? `<span class="badge suspended">suspended</span>` : "",
    status.done ? `<span class="badge done">done</span>` : "",
  ].join("");
  const error = status.error
    ? `<p class="error">run failed: ${esc(status.error)}</p>`
    : "";
  const final = status.final
    ? `<p class="final">final: ${esc(JSON.stringify(status.final))}</p>`
    : "";
  return `<header class="status">
    <p>phase <strong>${esc(status.phase)}</strong>, epoch <strong>${status.epoch}</strong>${badges}</p>
    <p>pool: ${pools.unlabeled} unlabeled / ${pools.labeled} labeled / ${pools.flagged} flagged,
       ${status.pending_count} pending</p>
    ${error}${final}
  </header>`;
}

function renderPicker(item: QueueItem, terms: readonly string[]): string {
  const id = item.view.instance_id;
  const options = terms
    .map(
      (term) =>
        `<option value="${esc(term)}"${term === item.selectedTerm ? " selected" : ""}>${esc(term)}</option>`,
    )
    .join("");
  return `<select data-id="${id}" aria-label="replacement term">
    <option value=""${item.selectedTerm === "" ? " selected" : ""}>pick a term…</option>
    ${options}
  </select>`;
}

export function renderRow(item: QueueItem, terms: readonly string[]): string {
  const view = item.view;
  const id = view.instance_id;
  const busy = item.status === "submitted" ? " disabled" : "";
  const predictions = view.predictions
    .map((p) => `<li>${esc(p.surface)} <span class="p">${pct(p.probability)}</span></li>`)
    .join("");
  const suggestion = view.suggested
    ? `<p class="suggested">suggested: <strong>${esc(view.suggested)}</strong>
       <button data-action="accept" data-id="${id}"${busy}>accept suggestion</button></p>`
    : "";
  const retry =
    item.status === "failed"
      ? `<button data-action="retry" data-id="${id}">retry</button>`
      : "";
  const note = item.note ? `<p class="note">${esc(item.note)}${retry}</p>` : "";
  return `<article class="request" data-id="${id}">
    <h3>#${id} <span class="qtype">${esc(view.qtype)}</span> <span class="case">${esc(view.case)}</span></h3>
    <p>answer <strong>${esc(view.surface_answer ?? "(none)")}</strong>,
       current label <strong>${esc(view.current_label)}</strong></p>
    <ol class="predictions">${predictions}</ol>
    <p class="evidence">spread logdet ${view.logdet_cov.toFixed(3)}, loss ${view.loss.toFixed(3)}</p>
    ${suggestion}
    <p class="actions">
      <button data-action="keep" data-id="${id}"${busy}>keep</button>
      ${renderPicker(item, terms)}
      <button data-action="replace" data-id="${id}"${busy}>replace</button>
    </p>
    ${note}
  </article>`;
}

export function renderQueue(controller: ConsoleController): string {
  const model = controller.model;
  const notices = model.notices.length
    ? `<ul class="notices">${model.notices.map((n) => `<li>${esc(n)}</li>`).join("")}</ul>`
    : "";
  const rows = model.ordered();
  if (rows.length === 0) {
    const epoch = model.status ? ` (epoch ${model.status.epoch})` : "";
    return `${notices}<p class="empty">no pending requests${epoch}</p>`;
  }
  const canonical = model.status?.canonical_terms ?? {};
  const body = rows
    .map((item) => renderRow(item, canonical[item.view.qtype] ?? []))
    .join("\n");
  return `${notices}<section class="queue">${body}</section>`;
}

export function renderApp(controller: ConsoleController): string {
  const banner = controller.offline
    ? `<div class="banner offline">service unreachable; retrying…</div>`
    : "";
  return `${banner}${renderHeader(controller)}${renderQueue(controller)}`;
}
