/** Pure display helpers for review cards. */

import type { Candidate, Review } from "./types.js";

export function percent(p: number, digits = 1): string {
  return `${(100 * p).toFixed(digits)}%`;
}

/** Width of a probability bar relative to the card's strongest candidate. */
export function barWidth(candidate: Candidate, candidates: Candidate[]): number {
  const top = Math.max(...candidates.map((c) => c.probability), 1e-12);
  return Math.max(1, Math.round((100 * candidate.probability) / top));
}

/** Total probability mass of the displayed candidates; shown on the card so
 * the rendered bars visibly sum to it. */
export function displayedMass(candidates: Candidate[]): number {
  return candidates.reduce((acc, c) => acc + c.probability, 0);
}

export function difficultyBadge(difficulty: number | null): string {
  if (difficulty === null || difficulty === undefined) return "";
  return `L${difficulty.toFixed(1)}`;
}

export function marginSummary(review: Review): string {
  return `margin z = ${review.z.toFixed(4)} < threshold ${review.theta.toFixed(4)}`;
}

export function ageSeconds(review: Review, nowMs: number): number {
  return Math.max(0, Math.round(nowMs / 1000 - review.created_at));
}

export function describeHistory(review: Review): string {
  const names = review.history.map((h) => (h ? h.name : "—"));
  return names.join("  ·  ");
}
