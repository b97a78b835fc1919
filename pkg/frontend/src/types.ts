/** Wire shapes of the recommendation service's JSON API. */

export interface ItemView {
  id: number;
  name: string;
  difficulty: number | null;
}

export interface Candidate extends ItemView {
  probability: number;
}

export interface Resolution {
  corrected_id: number;
  resolver: string | null;
  resolved_at: number;
}

export interface Review {
  review_id: string;
  user_id: string;
  created_at: number;
  window_ids: number[];
  history: (ItemView | null)[];
  candidates: Candidate[];
  top_k: [number, number][];
  z: number;
  theta: number;
  step_index: number;
  status: "pending" | "resolved";
  resolution: Resolution | null;
  user_summary?: Record<string, number | null>;
}

export interface CatalogEntry {
  id: number;
  name: string;
  difficulty: number | null;
  path: string[];
}

export interface NextResponse {
  status: "auto" | "pending_expert";
  recommendation?: Candidate;
  top_k: Candidate[];
  z: number;
  theta: number;
  review_id?: string;
}
