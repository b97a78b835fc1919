"""Dataset schemas, loaders, window extraction, ACF order selection, and the
adaptive-difficulty synthetic corpus generator.

The original exercise study corpus is private; the generator simulates its
coaching policy (finite state machine: a fully completed day advances the
difficulty level, any failure regresses it) so that the full pipeline runs
end to end on schema-compatible data. Real data drops in through
history.csv / users.csv / exercises.json loaders.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InputError, ParseError
from .model import WindowSample

DAY_EXERCISE_COUNT = 3
EXERCISE_WEEKDAYS = (0, 2, 4)  # Mon/Wed/Fri pattern


@dataclass
class TaxonomyEntry:
    name: str
    difficulty: float
    path: tuple[str, ...]
    alt_group: str | None = None

    @property
    def leaf(self) -> str:
        return self.path[-1]


@dataclass
class Event:
    item_id: int
    day: int
    slot: int = 0
    completed: bool = True


@dataclass
class ProfileSchema:
    fields: list[str]
    demographic: list[str]

    def select(self, which: str) -> list[str]:
        if which == "demographic":
            return list(self.demographic)
        if which == "full":
            return list(self.fields)
        raise InputError(f"unknown profile schema '{which}'")


@dataclass
class Corpus:
    item_ids: list[int]
    item_names: dict[int, str]
    events: dict[str, list[Event]]
    profiles: dict[str, np.ndarray]
    schema: ProfileSchema
    taxonomy: dict[int, TaxonomyEntry] | None = None
    item_profiles: dict[int, np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    def users(self) -> list[str]:
        return list(self.events.keys())

    def history(self, user: str) -> list[int]:
        """Completed item ids for a user, in chronological order."""
        return [e.item_id for e in self.events[user] if e.completed]

    def subset(self, users: Iterable[str]) -> "Corpus":
        keep = list(users)
        return Corpus(
            item_ids=self.item_ids,
            item_names=self.item_names,
            events={u: self.events[u] for u in keep},
            profiles={u: self.profiles[u] for u in keep},
            schema=self.schema,
            taxonomy=self.taxonomy,
            item_profiles=self.item_profiles,
            meta=self.meta,
        )


class VocabMap:
    """Raw item id <-> dense model index. Index 0 is the padding class."""

    def __init__(self, item_ids: Iterable[int]):
        self.ids = sorted(set(item_ids))
        self.index = {item: i + 1 for i, item in enumerate(self.ids)}

    @property
    def n_classes(self) -> int:
        return len(self.ids) + 1

    def to_index(self, item_id: int) -> int:
        try:
            return self.index[item_id]
        except KeyError:
            raise InputError(f"item id {item_id} not in vocabulary") from None

    def to_item(self, index: int) -> int:
        if not (1 <= index <= len(self.ids)):
            raise InputError(f"model index {index} out of range")
        return self.ids[index - 1]


@dataclass
class ProfileStats:
    """Imputation means and z-score statistics for a field subset."""

    fields: list[str]
    mean: np.ndarray
    std: np.ndarray

    def to_json(self) -> dict:
        return {"fields": self.fields, "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "ProfileStats":
        return cls(doc["fields"], np.array(doc["mean"]), np.array(doc["std"]))


def profile_stats(corpus: Corpus, fields: list[str] | None = None) -> ProfileStats:
    fields = fields or corpus.schema.fields
    idx = [corpus.schema.fields.index(f) for f in fields]
    rows = np.array([corpus.profiles[u][idx] for u in corpus.users()], dtype=np.float64)
    if rows.size == 0:
        raise InputError("profile_stats: corpus has no users")
    mean = np.nanmean(rows, axis=0)
    mean = np.where(np.isfinite(mean), mean, 0.0)
    filled = np.where(np.isnan(rows), mean, rows)
    std = filled.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    return ProfileStats(fields=list(fields), mean=mean, std=std)


def profile_vector(corpus: Corpus, user: str, stats: ProfileStats) -> np.ndarray:
    """User profile restricted to stats.fields, missing values imputed with means."""
    idx = [corpus.schema.fields.index(f) for f in stats.fields]
    raw = np.asarray(corpus.profiles[user], dtype=np.float64)[idx]
    return np.where(np.isnan(raw), stats.mean, raw)


def item_profile_matrix(corpus: Corpus, vocab: VocabMap) -> np.ndarray:
    """(n_classes, item_profile_dim) matrix; row 0 (padding) is all zeros."""
    if corpus.item_profiles:
        dim = len(next(iter(corpus.item_profiles.values())))
        mat = np.zeros((vocab.n_classes, dim))
        for item, vec in corpus.item_profiles.items():
            mat[vocab.to_index(item)] = vec
        return mat
    # fall back to a single normalized-rank feature
    n = len(vocab.ids)
    mat = np.zeros((vocab.n_classes, 1))
    mat[1:, 0] = (np.arange(n) + 1) / n
    return mat


def build_item_profiles(taxonomy: dict[int, TaxonomyEntry]) -> dict[int, np.ndarray]:
    """Default item features: [normalized difficulty, leaf-category one-hot]."""
    leaves = sorted({entry.leaf for entry in taxonomy.values()})
    leaf_pos = {leaf: i for i, leaf in enumerate(leaves)}
    difficulties = np.array([entry.difficulty for entry in taxonomy.values()])
    lo, hi = difficulties.min(), difficulties.max()
    span = hi - lo if hi > lo else 1.0
    out: dict[int, np.ndarray] = {}
    for item, entry in taxonomy.items():
        vec = np.zeros(1 + len(leaves))
        vec[0] = (entry.difficulty - lo) / span
        vec[1 + leaf_pos[entry.leaf]] = 1.0
        out[item] = vec
    return out


def make_windows(corpus: Corpus, window: int, padded: bool = True,
                 stats: ProfileStats | None = None,
                 sequences: list[tuple[str, list[int]]] | None = None) -> list[WindowSample]:
    """Slice every user's completed history into next-item windows.

    With padding, a user with L >= 2 events yields L-1 windows (the first
    window-1 of them left-padded with the zero class); without padding only
    the L-window full slices remain. Targets are always real events.
    `sequences` overrides the per-user histories as (user, item ids) pairs,
    allowing augmented copies keyed to the same user.
    """
    if window < 1:
        raise InputError(f"window must be >= 1, got {window}")
    vocab = VocabMap(corpus.item_ids)
    stats = stats or profile_stats(corpus)
    profile_cache = {u: profile_vector(corpus, u, stats) for u in corpus.users()}
    item_mat = item_profile_matrix(corpus, vocab)
    out: list[WindowSample] = []
    source = sequences if sequences is not None else [
        (u, corpus.history(u)) for u in corpus.users()]
    for user, history in source:
        seq = [vocab.to_index(i) for i in history]
        if len(seq) < 2:
            continue
        start = 1 if padded else window
        for t in range(start, len(seq)):
            ids = seq[max(0, t - window):t]
            ids = [0] * (window - len(ids)) + ids
            arr = np.array(ids, dtype=np.int64)
            out.append(WindowSample(
                item_ids=arr,
                item_profiles=item_mat[arr],
                user_profile=profile_cache[user],
                target=seq[t],
            ))
    return out


def window_count(corpus: Corpus, window: int, padded: bool = True) -> int:
    total = 0
    for u in corpus.users():
        n = len(corpus.history(u))
        if padded:
            total += max(n - 1, 0)
        else:
            total += max(n - window, 0)
    return total


# --- MovieLens ------------------------------------------------------------------

@dataclass
class PreparedSplit:
    corpus: Corpus
    train_counts: dict[str, int]   # completed-event prefix length per user


def movielens_prepare(path: str, top_n: int = 100, train_fraction: float = 0.8) -> PreparedSplit:
    """Build a corpus from a MovieLens u.data ratings file.

    Keeps only the top_n most-rated items (ties broken by ascending item
    id), orders each user's events by timestamp (ties by item id), and
    records a per-user chronological train/test boundary.
    """
    rows: list[tuple[int, int, int, int]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"line {lineno}: expected 4 tab-separated fields, "
                                 f"got {len(parts)}", line_number=lineno)
            try:
                user, item, rating, ts = (int(parts[0]), int(parts[1]),
                                          int(parts[2]), int(parts[3]))
            except ValueError:
                raise ParseError(f"line {lineno}: non-integer field in {parts!r}",
                                 line_number=lineno) from None
            rows.append((user, item, rating, ts))
    if not rows:
        raise InputError(f"{path}: no rating rows found")

    counts: dict[int, int] = {}
    for _, item, _, _ in rows:
        counts[item] = counts.get(item, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = {item for item, _ in ranked[:top_n]}

    per_user: dict[str, list[tuple[int, int, int]]] = {}
    ratings: dict[str, list[int]] = {}
    for user, item, rating, ts in rows:
        if item not in kept:
            continue
        uid = f"u{user}"
        per_user.setdefault(uid, []).append((ts, item, rating))
    events: dict[str, list[Event]] = {}
    train_counts: dict[str, int] = {}
    for uid, entries in per_user.items():
        entries.sort(key=lambda e: (e[0], e[1]))
        events[uid] = [Event(item_id=item, day=ts, slot=0, completed=True)
                       for ts, item, _ in entries]
        ratings[uid] = [r for _, _, r in entries]
        train_counts[uid] = int(len(entries) * train_fraction)

    profiles = {}
    spans = {u: (ev[-1].day - ev[0].day) / 86400.0 for u, ev in events.items()}
    for uid, ev in events.items():
        profiles[uid] = np.array([
            np.log1p(len(ev)),
            float(np.mean(ratings[uid])),
            np.log1p(spans[uid]),
        ])
    schema = ProfileSchema(fields=["log_events", "mean_rating", "log_span_days"],
                           demographic=["log_events", "mean_rating", "log_span_days"])
    item_ids = sorted(kept)
    corpus = Corpus(
        item_ids=item_ids,
        item_names={i: f"movie {i}" for i in item_ids},
        events=events,
        profiles=profiles,
        schema=schema,
        taxonomy=None,
        item_profiles={i: np.ones(3) for i in item_ids},
    )
    return PreparedSplit(corpus=corpus, train_counts=train_counts)


# --- ACF window selection ---------------------------------------------------------

def sample_acf(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation at lags 1..max_lag; zeros for flat series."""
    x = np.asarray(series, dtype=np.float64)
    centered = x - x.mean()
    denom = np.sum(centered * centered)
    if denom < 1e-12:
        return np.zeros(max_lag)
    return np.array([
        np.sum(centered[k:] * centered[:-k]) / denom for k in range(1, max_lag + 1)
    ])


def difficulty_series(corpus: Corpus, user: str) -> np.ndarray:
    """Completed events mapped to difficulty (taxonomy) or item-id rank."""
    history = corpus.history(user)
    if corpus.taxonomy:
        return np.array([corpus.taxonomy[i].difficulty for i in history])
    rank = {item: r for r, item in enumerate(sorted(corpus.item_ids))}
    return np.array([float(rank[i]) for i in history])


def acf_window(corpus: Corpus, max_lag: int = 10) -> int:
    """Window length suggestion: largest lag whose mean |ACF| is significant.

    The per-user sample ACFs are averaged and compared against the
    1.96/sqrt(mean sequence length) band; lags beyond it indicate
    dependencies the recurrent window should cover. Minimum 1.
    """
    series = [difficulty_series(corpus, u) for u in corpus.users()]
    usable = [s for s in series if len(s) >= max_lag + 2]
    if not usable:
        raise InputError(
            f"acf_window: need at least one user with >= {max_lag + 2} completed events")
    acfs = np.stack([sample_acf(s, max_lag) for s in usable])
    mean_acf = acfs.mean(axis=0)
    mean_len = float(np.mean([len(s) for s in usable]))
    band = 1.96 / np.sqrt(mean_len)
    significant = np.nonzero(np.abs(mean_acf) > band)[0]
    if significant.size == 0:
        return 1
    return int(significant[-1] + 1)


# --- synthetic corpus ------------------------------------------------------------

SUBCATEGORIES = ("push", "pull", "squats", "lunges", "single leg stance", "core")
LEAF_BASES = ("chest", "back", "legs", "legs/glutes", "core/abs", "abs/glutes")
ALT_GROUPS = ("full body", "compound", "power")
SEED_NAMES = ("Wall Pushups", "Standing Knee Lifts", "Squats", "Burpees")

# Probability that a whole assigned day is completed, as a function of how far
# the level sits above the user's latent fitness. Comfortably easy days are
# always completed; inside the +-2 band around fitness the outcome is a gently
# drifted coin flip, which makes level traces wander like a mean-reverting
# walk (day-to-day dependence reaching a few lags) instead of flip-flopping.
EASY_ZONE = 2.0
DAY_SUCCESS_DRIFT = 0.25
DAY_SUCCESS_FLOOR = 0.05
DAY_SUCCESS_CAP = 0.95

# within-level assignment skew: trainers favor a level's staple exercises
PICK_DECAY = 0.45

# latent per-user preference: half the users follow the standard staple
# ordering, half rotate it (their staple is another bin member). The type is
# not in the profile and the population is balanced, so a population model
# faces a genuine tie that only in-session personalization resolves.
PREFERENCE_TYPES = ((0, 0.5), (2, 0.5))   # (rotation, probability)


def completion_probability(level: float, fitness: float) -> float:
    """Chance the user completes a full day assigned at `level`."""
    excess = level - fitness
    if excess <= -EASY_ZONE:
        return 1.0
    return float(np.clip(0.5 - DAY_SUCCESS_DRIFT * excess,
                         DAY_SUCCESS_FLOOR, DAY_SUCCESS_CAP))


def build_taxonomy(n_exercises: int, levels: int) -> dict[int, TaxonomyEntry]:
    per_level = n_exercises // levels
    taxonomy: dict[int, TaxonomyEntry] = {}
    item = 1
    for level in range(1, levels + 1):
        count = per_level + (1 if level <= n_exercises % levels else 0)
        for j in range(count):
            supercat = "resistance" if (level + j) % 3 else "metabolic conditioning"
            subcat = SUBCATEGORIES[(level + j) % len(SUBCATEGORIES)]
            # leaf groups pair same-level exercises so category-mates are
            # interchangeable under the coaching policy
            pair = j // 2
            leaf = f"{LEAF_BASES[(level + pair) % len(LEAF_BASES)]} L{level}.{pair}"
            name = (SEED_NAMES[item - 1] if item - 1 < len(SEED_NAMES)
                    else f"{subcat.title()} drill {item}")
            # offsets stay well inside the level so difficulty bins are clean
            difficulty = level + 0.4 + 0.2 * (j + 1) / (count + 1)
            taxonomy[item] = TaxonomyEntry(
                name=name, difficulty=difficulty,
                path=(supercat, subcat, leaf),
                alt_group=ALT_GROUPS[item % len(ALT_GROUPS)],
            )
            item += 1
    return taxonomy


def simulate_user(rng: np.random.Generator, fitness: float, n_days: int,
                  by_level: dict[int, list[int]], levels: int,
                  preference: int = 0) -> tuple[list[Event], list[dict]]:
    """One user's run of the adaptive policy; returns (events, level trace).

    `preference` rotates the within-level assignment weights, modeling a
    user whose plan favors different bin members than the population staple.
    """
    level = int(np.clip(round(fitness), 1, levels))
    user_events: list[Event] = []
    trace: list[dict] = []
    for day in range(n_days):
        if day % 7 not in EXERCISE_WEEKDAYS:
            continue
        pool = by_level[level]
        weights = PICK_DECAY ** np.arange(len(pool))
        weights = np.roll(weights, preference % len(pool))
        weights /= weights.sum()
        picks = rng.choice(pool, size=DAY_EXERCISE_COUNT, replace=False, p=weights)
        picks = np.sort(picks)  # a day warms up from easier to harder
        p = completion_probability(level, fitness)
        done = np.ones(DAY_EXERCISE_COUNT, dtype=bool)
        if rng.random() >= p:
            # failed day: one assigned exercise goes uncompleted
            done[rng.integers(DAY_EXERCISE_COUNT)] = False
        for slot, (item, ok) in enumerate(zip(picks, done)):
            user_events.append(Event(item_id=int(item), day=day, slot=slot,
                                     completed=bool(ok)))
        new_level = min(level + 1, levels) if done.all() else max(level - 1, 1)
        trace.append({"day": day, "level": level,
                      "completed": int(done.sum()), "next_level": new_level})
        level = new_level
    return user_events, trace


def level_bins(taxonomy: dict[int, TaxonomyEntry]) -> dict[int, list[int]]:
    bins: dict[int, list[int]] = {}
    for item, entry in taxonomy.items():
        bins.setdefault(int(entry.difficulty), []).append(item)
    return bins


def synth_generate(n_users: int = 72, n_days: int = 28, n_exercises: int = 44,
                   levels: int = 11, seed: int = 0) -> Corpus:
    """Simulate the adaptive-difficulty coaching policy.

    Exercises are binned into difficulty levels. Each exercise day assigns
    three distinct exercises at the user's current level; completing all
    three advances the level, any failure regresses it (clamped). Only
    completed exercises enter the history. Level traces are kept in
    corpus.meta for replay audits.
    """
    if levels < 2:
        raise InputError("levels must be >= 2")
    if n_exercises // levels < DAY_EXERCISE_COUNT:
        raise InputError(
            f"levels={levels} too many for {n_exercises} exercises: each level needs "
            f">= {DAY_EXERCISE_COUNT} exercises")
    rng = np.random.default_rng(seed)
    taxonomy = build_taxonomy(n_exercises, levels)
    by_level = level_bins(taxonomy)

    events: dict[str, list[Event]] = {}
    profiles: dict[str, np.ndarray] = {}
    traces: dict[str, list[dict]] = {}
    rotations = np.array([r for r, _ in PREFERENCE_TYPES])
    type_probs = np.array([p for _, p in PREFERENCE_TYPES])
    preferences: dict[str, int] = {}
    for u in range(n_users):
        uid = f"user{u:03d}"
        fitness = float(rng.uniform(1.5, levels - 0.5))
        preference = int(rotations[rng.choice(len(rotations), p=type_probs)])
        preferences[uid] = preference
        events[uid], traces[uid] = simulate_user(rng, fitness, n_days, by_level,
                                                 levels, preference=preference)
        profiles[uid] = np.array([
            fitness,
            45.0 - 2.2 * fitness + rng.normal(0, 4.0),
            31.0 - 0.9 * fitness + rng.normal(0, 1.5),
            float(rng.normal(20, 6)),
            float(rng.normal(10, 4)),
            float(rng.normal(40, 10)),
            50.0 + 1.5 * fitness + rng.normal(0, 8.0),
        ])
    schema = ProfileSchema(
        fields=["activity_level", "age", "bmi", "stress_score", "anxiety_score",
                "physical_symptoms", "self_efficacy"],
        demographic=["activity_level", "age", "bmi"],
    )
    item_ids = sorted(taxonomy.keys())
    return Corpus(
        item_ids=item_ids,
        item_names={i: taxonomy[i].name for i in item_ids},
        events=events,
        profiles=profiles,
        schema=schema,
        taxonomy=taxonomy,
        item_profiles=build_item_profiles(taxonomy),
        meta={"level_traces": traces, "levels": levels, "seed": seed,
              "preferences": preferences},
    )


def verify_level_traces(corpus: Corpus) -> None:
    """Replay the policy FSM over the stored traces; raises on any violation."""
    traces = corpus.meta.get("level_traces")
    if traces is None:
        raise InputError("corpus has no level traces to audit")
    levels = corpus.meta["levels"]
    for user, trace in traces.items():
        day_completed: dict[int, int] = {}
        for e in corpus.events[user]:
            if e.completed:
                day_completed[e.day] = day_completed.get(e.day, 0) + 1
        prev = None
        for step in trace:
            if step["completed"] != day_completed.get(step["day"], 0):
                raise InputError(
                    f"{user}: day {step['day']} completion count mismatch")
            expected = (min(step["level"] + 1, levels)
                        if step["completed"] == DAY_EXERCISE_COUNT
                        else max(step["level"] - 1, 1))
            if step["next_level"] != expected:
                raise InputError(
                    f"{user}: day {step['day']} level transition violates the policy")
            if prev is not None and step["level"] != prev:
                raise InputError(f"{user}: level trace discontinuity at day {step['day']}")
            prev = step["next_level"]


# --- corpus file I/O --------------------------------------------------------------

def save_corpus(corpus: Corpus, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "history.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "day", "slot", "exercise_id", "completed"])
        for user in corpus.users():
            for e in corpus.events[user]:
                writer.writerow([user, e.day, e.slot, e.item_id, int(e.completed)])
    with open(os.path.join(directory, "users.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id"] + corpus.schema.fields)
        for user in corpus.users():
            writer.writerow([user] + [repr(float(v)) for v in corpus.profiles[user]])
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump({"profile_fields": corpus.schema.fields,
                   "demographic_fields": corpus.schema.demographic,
                   "meta": corpus.meta}, fh, default=str)
    if corpus.taxonomy:
        doc = {str(item): {"name": t.name, "difficulty": t.difficulty,
                           "path": list(t.path), "alt_group": t.alt_group}
               for item, t in corpus.taxonomy.items()}
        with open(os.path.join(directory, "exercises.json"), "w") as fh:
            json.dump(doc, fh)


def load_corpus(directory: str) -> Corpus:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    schema = ProfileSchema(fields=manifest["profile_fields"],
                           demographic=manifest["demographic_fields"])
    taxonomy = None
    tax_path = os.path.join(directory, "exercises.json")
    if os.path.exists(tax_path):
        with open(tax_path) as fh:
            raw = json.load(fh)
        taxonomy = {int(item): TaxonomyEntry(name=entry["name"],
                                             difficulty=entry["difficulty"],
                                             path=tuple(entry["path"]),
                                             alt_group=entry.get("alt_group"))
                    for item, entry in raw.items()}
    events: dict[str, list[Event]] = {}
    with open(os.path.join(directory, "history.csv")) as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                events.setdefault(row["user_id"], []).append(Event(
                    item_id=int(row["exercise_id"]), day=int(row["day"]),
                    slot=int(row["slot"]), completed=bool(int(row["completed"]))))
            except (KeyError, ValueError):
                raise ParseError(f"history.csv line {lineno}: bad row {row!r}",
                                 line_number=lineno) from None
    for user in events:
        events[user].sort(key=lambda e: (e.day, e.slot))
    profiles: dict[str, np.ndarray] = {}
    with open(os.path.join(directory, "users.csv")) as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                profiles[row["user_id"]] = np.array(
                    [float(row[f]) for f in schema.fields])
            except (KeyError, ValueError):
                raise ParseError(f"users.csv line {lineno}: bad row {row!r}",
                                 line_number=lineno) from None
    if taxonomy:
        item_ids = sorted(taxonomy.keys())
        names = {i: taxonomy[i].name for i in item_ids}
        item_profiles = build_item_profiles(taxonomy)
    else:
        item_ids = sorted({e.item_id for evs in events.values() for e in evs})
        names = {i: f"item {i}" for i in item_ids}
        item_profiles = None
    return Corpus(item_ids=item_ids, item_names=names, events=events,
                  profiles=profiles, schema=schema, taxonomy=taxonomy,
                  item_profiles=item_profiles, meta=manifest.get("meta", {}))
