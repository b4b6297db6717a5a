/** Queue state: server rows plus per-row UI bookkeeping. */

import type { DecisionBody, PendingItem, Status } from "./types.js";

export type SubmissionStatus = "pending" | "submitted" | "acknowledged" | "failed";

// Forward-only lattice; failed -> submitted is a fresh attempt, acknowledged
// is terminal, and nothing ever returns to pending.
const ALLOWED: Record<SubmissionStatus, readonly SubmissionStatus[]> = {
  pending: ["submitted"],
  submitted: ["acknowledged", "failed"],
  failed: ["submitted"],
  acknowledged: [],
};

export interface QueueItem {
  view: PendingItem;
  /** Picker state; starts on the pipeline suggestion when one exists. */
  selectedTerm: string;
  status: SubmissionStatus;
  /** Inline error or hint for this row. */
  note: string;
  /** Last body sent, kept so a failed submission can be retried verbatim. */
  lastBody?: DecisionBody;
}

const MAX_NOTICES = 5;

export class QueueModel {
  status: Status | null = null;
  readonly items = new Map<number, QueueItem>();
  /** Recent queue-level events, most recent first. */
  readonly notices: string[] = [];
  // Ids decided locally; a poll snapshot taken before the decision landed
  // must not resurrect their rows.
  private readonly settled = new Set<number>();

  setStatus(status: Status): void {
    this.status = status;
  }

  /** Server list wins for membership and content; local UI state survives. */
  merge(rows: PendingItem[]): void {
    const listed = new Set<number>();
    for (const row of rows) {
      listed.add(row.instance_id);
      if (this.settled.has(row.instance_id)) continue;
      const existing = this.items.get(row.instance_id);
      if (existing) {
        existing.view = row;
      } else {
        this.items.set(row.instance_id, {
          view: row,
          selectedTerm: row.suggested ?? "",
          status: "pending",
          note: "",
        });
      }
    }
    for (const id of [...this.items.keys()]) {
      if (!listed.has(id)) this.items.delete(id);
    }
    // once the server stops listing a settled id the guard has done its job
    for (const id of [...this.settled]) {
      if (!listed.has(id)) this.settled.delete(id);
    }
  }

  /** Rows ascending by instance id, the order the service promises anyway. */
  ordered(): QueueItem[] {
    return [...this.items.values()].sort(
      (a, b) => a.view.instance_id - b.view.instance_id,
    );
  }

  /** Apply a submission-status transition; illegal moves are refused. */
  advance(id: number, next: SubmissionStatus): boolean {
    const item = this.items.get(id);
    if (!item || !ALLOWED[item.status].includes(next)) return false;
    item.status = next;
    return true;
  }

  /** Drop the row and remember the id so a stale poll cannot bring it back. */
  settle(id: number, notice?: string): void {
    this.items.delete(id);
    this.settled.add(id);
    if (notice) this.pushNotice(notice);
  }

  pushNotice(text: string): void {
    this.notices.unshift(text);
    if (this.notices.length > MAX_NOTICES) this.notices.length = MAX_NOTICES;
  }
}
