/** Polling and submission flow; owns the one-request-at-a-time rule. */

import type { ApiClient } from "./api.js";
import type { DecisionBody } from "./types.js";
import { QueueModel } from "./model.js";

export const POLL_INTERVAL_MS = 2000;
const MAX_BACKOFF_MS = 30000;

export class ConsoleController {
  readonly model = new QueueModel();
  offline = false;
  private inFlight = false;
  private failures = 0;

  constructor(private readonly api: ApiClient) {}

  /** One poll of status + pending; returns false when one is already running. */
  async tick(): Promise<boolean> {
    if (this.inFlight) return false;
    this.inFlight = true;
    try {
      const status = await this.api.status();
      const pending = await this.api.pending();
      this.model.setStatus(status);
      this.model.merge(pending);
      this.offline = false;
      this.failures = 0;
    } catch {
      this.offline = true;
      this.failures += 1;
    } finally {
      this.inFlight = false;
    }
    return true;
  }

  /** 2 s while healthy, doubling per consecutive failure, capped at 30 s. */
  nextDelay(): number {
    if (this.failures === 0) return POLL_INTERVAL_MS;
    return Math.min(POLL_INTERVAL_MS * 2 ** this.failures, MAX_BACKOFF_MS);
  }

  async keep(id: number): Promise<void> {
    await this.submit(id, { action: "keep" });
  }

  async acceptSuggestion(id: number): Promise<void> {
    const item = this.model.items.get(id);
    if (!item?.view.suggested) return;
    await this.submit(id, { action: "replace", term_surface: item.view.suggested });
  }

  async replace(id: number): Promise<void> {
    const item = this.model.items.get(id);
    if (!item) return;
    if (!item.selectedTerm) {
      // mirror of the API's 400; never leaves the client
      item.note = "pick a replacement term first";
      return;
    }
    await this.submit(id, { action: "replace", term_surface: item.selectedTerm });
  }

  async retry(id: number): Promise<void> {
    const body = this.model.items.get(id)?.lastBody;
    if (body) await this.submit(id, body);
  }

  private async submit(id: number, body: DecisionBody): Promise<void> {
    const item = this.model.items.get(id);
    // advance() also swallows double-clicks while a submission is in flight
    if (!item || !this.model.advance(id, "submitted")) return;
    item.lastBody = body;
    item.note = "";
    const result = await this.api.submit(id, body);
    if (result.kind === "ok") {
      this.model.advance(id, "acknowledged");
      this.model.settle(id, `instance ${id}: ${body.action} recorded`);
    } else if (result.kind === "rejected" && result.status === 409) {
      // someone else decided it; drop the row but say so
      this.model.advance(id, "acknowledged");
      this.model.settle(id, `instance ${id} was already decided; removed from the queue`);
    } else {
      this.model.advance(id, "failed");
      item.note =
        result.kind === "network"
          ? `network error (${result.detail}); retry when the service is back`
          : result.detail;
    }
  }
}
