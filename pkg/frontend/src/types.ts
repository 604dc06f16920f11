// DTOs for the session service, one interface per documented payload
// (see docs/api.md in the repository root).

export interface HealthInfo {
  status: string;
  model_kind: string;
  n_items: number;
  rho: number;
}

export interface ItemInfo {
  item: number;
  label: string;
}

export interface Catalog {
  rho: number;
  n_items: number;
  items: ItemInfo[];
}

export interface HistoryEntry {
  item: number;
  rating: number;
  /** EVOI the item carried when the server suggested it; null for volunteered ratings. */
  evoi: number | null;
}

export interface SessionSummary {
  id: string;
  model_kind: string;
  evoi_threshold: number;
  use_prototypes: boolean;
  created: number;
  updated: number;
  n_ratings: number;
  history: HistoryEntry[];
}

export interface RankedCandidate {
  item: number;
  label: string;
  expected_evoi: number;
}

export interface QueryResponse {
  item: number | null;
  label?: string;
  expected_evoi: number | null;
  stop: boolean;
  reason?: string;
  candidates_pruned: number;
  ranked: RankedCandidate[];
}

export interface Recommendation {
  item: number;
  label: string;
  posterior_mean: number;
}

export interface RecommendationList {
  items: Recommendation[];
}

export interface CreateSessionOptions {
  model_kind?: string;
  evoi_threshold?: number;
  use_prototypes?: boolean;
}
