/** Wire types; field names mirror the service JSON exactly. */

export interface PoolSizes {
  unlabeled: number;
  labeled: number;
  flagged: number;
}

export interface Status {
  epoch: number;
  phase: string;
  pool_sizes: PoolSizes;
  suspended: boolean;
  pending_count: number;
  done: boolean;
  canonical_terms: Record<string, string[]>;
  final?: Record<string, number | null>;
  error?: string;
}

export interface Prediction {
  surface: string;
  probability: number;
}

export interface PendingItem {
  instance_id: number;
  qtype: string;
  surface_answer: string | null;
  current_label: string;
  predictions: Prediction[];
  logdet_cov: number;
  loss: number;
  case: string;
  suggested?: string;
}

export type DecisionBody =
  | { action: "keep" }
  | { action: "replace"; term_surface: string };
