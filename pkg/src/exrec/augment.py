"""Sequence augmentation: category substitution and association-rule substitution.

Both methods pick a seeded fraction of positions per sequence and swap the
exercise for a plausible stand-in: either a category-mate from the expert
taxonomy (deepest category level) or a mined rule's consequent. Augmented
copies are meant to be trained on alongside the originals; random noise
injection is deliberately not offered.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .data import TaxonomyEntry
from .errors import InputError


@dataclass(frozen=True)
class AssociationRule:
    antecedent: int
    consequent: int
    support: float
    confidence: float

    def __post_init__(self):
        if self.antecedent == self.consequent:
            raise InputError("rule antecedent and consequent must differ")
        if not (0.0 < self.support <= 1.0 and 0.0 < self.confidence <= 1.0):
            raise InputError(f"support/confidence out of (0, 1]: {self}")


def _pick_positions(rng: np.random.Generator, length: int, rate: float) -> np.ndarray:
    count = math.ceil(rate * length)
    if count == 0:
        return np.empty(0, dtype=np.int64)
    return rng.choice(length, size=min(count, length), replace=False)


def augment_expert(sequences: Sequence[Sequence[int]],
                   taxonomy: dict[int, TaxonomyEntry],
                   rate: float = 0.10, seed: int = 0) -> list[list[int]]:
    """Copy each sequence with ceil(rate * len) positions swapped for a random
    exercise sharing the original's deepest category. Positions whose category
    has no alternative member are left as-is. Returns the augmented copies,
    one per input sequence, to be appended to the training originals.
    """
    if not (0.0 <= rate <= 1.0):
        raise InputError(f"rate must be in [0, 1], got {rate}")
    by_leaf: dict[str, list[int]] = {}
    for item, entry in taxonomy.items():
        by_leaf.setdefault(entry.leaf, []).append(item)
    rng = np.random.default_rng(seed)
    out: list[list[int]] = []
    for seq in sequences:
        for item in seq:
            if item not in taxonomy:
                raise InputError(f"sequence contains unknown exercise id {item}")
        copy = list(seq)
        for pos in sorted(_pick_positions(rng, len(copy), rate)):
            original = copy[pos]
            mates = [i for i in by_leaf[taxonomy[original].leaf] if i != original]
            if not mates:
                continue
            copy[pos] = int(mates[rng.integers(len(mates))])
        out.append(copy)
    return out


def augment_rules(sequences: Sequence[Sequence[int]],
                  rules: Iterable[AssociationRule],
                  rate: float = 0.10, seed: int = 0) -> list[list[int]]:
    """Like augment_expert, but replacements come from mined rules: a selected
    exercise is swapped for a uniformly random consequent among rules whose
    antecedent matches it; no matching rule skips the position."""
    if not (0.0 <= rate <= 1.0):
        raise InputError(f"rate must be in [0, 1], got {rate}")
    consequents: dict[int, list[int]] = {}
    for rule in rules:
        consequents.setdefault(rule.antecedent, []).append(rule.consequent)
    rng = np.random.default_rng(seed)
    out: list[list[int]] = []
    for seq in sequences:
        copy = list(seq)
        for pos in sorted(_pick_positions(rng, len(copy), rate)):
            options = consequents.get(copy[pos])
            if not options:
                continue
            copy[pos] = int(options[rng.integers(len(options))])
        out.append(copy)
    return out


def day_transactions(sequences: Sequence[Sequence[int]],
                     days: Sequence[Sequence[int]] | None = None,
                     fallback_window: int = 3) -> list[frozenset[int]]:
    """Group sequences into itemset transactions.

    With day indices, one transaction per user-day; otherwise consecutive
    fallback_window-length chunks stand in for days.
    """
    transactions: list[frozenset[int]] = []
    if days is not None:
        if len(days) != len(sequences):
            raise InputError("days and sequences must be parallel")
        for seq, day_seq in zip(sequences, days):
            if len(seq) != len(day_seq):
                raise InputError("per-user days must align with the sequence")
            current: dict[int, set[int]] = {}
            for item, day in zip(seq, day_seq):
                current.setdefault(day, set()).add(item)
            transactions.extend(frozenset(items) for _, items in sorted(current.items()))
    else:
        for seq in sequences:
            for start in range(0, len(seq), fallback_window):
                chunk = seq[start:start + fallback_window]
                if chunk:
                    transactions.append(frozenset(chunk))
    return [t for t in transactions if t]


def apriori_itemsets(transactions: Sequence[frozenset[int]],
                     min_support: float) -> dict[frozenset[int], float]:
    """Classic levelwise Apriori; returns frequent itemsets with their support."""
    n = len(transactions)
    if n == 0:
        return {}
    counts: dict[frozenset[int], int] = {}
    for t in transactions:
        for item in t:
            key = frozenset([item])
            counts[key] = counts.get(key, 0) + 1
    threshold = min_support * n
    frequent = {s: c / n for s, c in counts.items() if c >= threshold - 1e-12}
    result = dict(frequent)
    current = set(frequent)
    k = 2
    while current:
        candidates: set[frozenset[int]] = set()
        for a, b in combinations(sorted(current, key=sorted), 2):
            union = a | b
            if len(union) == k and all(
                    frozenset(sub) in current for sub in combinations(union, k - 1)):
                candidates.add(union)
        tallies = {c: 0 for c in candidates}
        for t in transactions:
            for c in candidates:
                if c <= t:
                    tallies[c] += 1
        current = {c for c, cnt in tallies.items() if cnt >= threshold - 1e-12}
        result.update({c: tallies[c] / n for c in current})
        k += 1
    return result


def mine_rules(sequences: Sequence[Sequence[int]],
               days: Sequence[Sequence[int]] | None = None,
               min_support: float = 0.05, min_confidence: float = 0.6,
               fallback_window: int = 3) -> list[AssociationRule]:
    """Mine singleton-to-singleton rules from user-day transactions.

    Rules are ranked by confidence descending (then support descending, then
    ids, for determinism). An empty corpus yields an empty list.
    """
    if not (0.0 < min_support <= 1.0 and 0.0 < min_confidence <= 1.0):
        raise InputError("thresholds must be in (0, 1]")
    transactions = day_transactions(sequences, days, fallback_window)
    itemsets = apriori_itemsets(transactions, min_support)
    rules: list[AssociationRule] = []
    for itemset, support in itemsets.items():
        if len(itemset) != 2:
            continue
        a, b = sorted(itemset)
        for ante, cons in ((a, b), (b, a)):
            base = itemsets.get(frozenset([ante]))
            if base is None or base <= 0:
                continue
            confidence = support / base
            if confidence >= min_confidence - 1e-12:
                rules.append(AssociationRule(ante, cons, support, min(confidence, 1.0)))
    rules.sort(key=lambda r: (-r.confidence, -r.support, r.antecedent, r.consequent))
    return rules


def save_rules_csv(rules: Iterable[AssociationRule], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["antecedent", "consequent", "support", "confidence"])
        for r in rules:
            writer.writerow([r.antecedent, r.consequent, repr(r.support), repr(r.confidence)])


def load_rules_csv(path: str) -> list[AssociationRule]:
    rules = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            rules.append(AssociationRule(int(row["antecedent"]), int(row["consequent"]),
                                         float(row["support"]), float(row["confidence"])))
    return rules
