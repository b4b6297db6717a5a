/** Thin typed client over the three service endpoints. */

import type { DecisionBody, PendingItem, Status } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface Acknowledgment {
  instance_id: number;
  action: string;
  accepted: boolean;
}

export type SubmitResult =
  | { kind: "ok"; body: Acknowledgment }
  | { kind: "rejected"; status: number; detail: string }
  | { kind: "network"; detail: string };

export class ApiClient {
  private readonly fetchImpl: FetchLike;

  constructor(
    private readonly base: string = "",
    fetchImpl?: FetchLike,
  ) {
    // fetch must stay bound to its global; passing it around raw breaks in browsers
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  async status(): Promise<Status> {
    const res = await this.fetchImpl(`${this.base}/api/status`);
    if (!res.ok) throw new Error(`status endpoint replied ${res.status}`);
    return (await res.json()) as Status;
  }

  async pending(): Promise<PendingItem[]> {
    const res = await this.fetchImpl(`${this.base}/api/reannotation/pending`);
    if (!res.ok) throw new Error(`pending endpoint replied ${res.status}`);
    return (await res.json()) as PendingItem[];
  }

  /** 4xx is a structured outcome, not an exception; the queue decides what to do. */
  async submit(instanceId: number, body: DecisionBody): Promise<SubmitResult> {
    let res: Response;
    try {
      res = await this.fetchImpl(`${this.base}/api/reannotation/${instanceId}`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (err) {
      return { kind: "network", detail: err instanceof Error ? err.message : String(err) };
    }
    if (res.ok) {
      return { kind: "ok", body: (await res.json()) as Acknowledgment };
    }
    let detail = `HTTP ${res.status}`;
    try {
      const doc: unknown = await res.json();
      if (doc && typeof doc === "object" && "detail" in doc && typeof doc.detail === "string") {
        detail = doc.detail;
      }
    } catch {
      // non-JSON error body; the status line is all we have
    }
    return { kind: "rejected", status: res.status, detail };
  }
}
