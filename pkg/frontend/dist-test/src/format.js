/** Pure display helpers for review cards. */
export function percent(p, digits = 1) {
    return `${(100 * p).toFixed(digits)}%`;
}
/** Width of a probability bar relative to the card's strongest candidate. */
export function barWidth(candidate, candidates) {
    const top = Math.max(...candidates.map((c) => c.probability), 1e-12);
    return Math.max(1, Math.round((100 * candidate.probability) / top));
}
/** Total probability mass of the displayed candidates; shown on the card so
 * the rendered bars visibly sum to it. */
export function displayedMass(candidates) {
    return candidates.reduce((acc, c) => acc + c.probability, 0);
}
export function difficultyBadge(difficulty) {
    if (difficulty === null || difficulty === undefined)
        return "";
    return `L${difficulty.toFixed(1)}`;
}
export function marginSummary(review) {
    return `margin z = ${review.z.toFixed(4)} < threshold ${review.theta.toFixed(4)}`;
}
export function ageSeconds(review, nowMs) {
    return Math.max(0, Math.round(nowMs / 1000 - review.created_at));
}
export function describeHistory(review) {
    const names = review.history.map((h) => (h ? h.name : "—"));
    return names.join("  ·  ");
}
//# sourceMappingURL=format.js.map