"""Leave-one-user-out and holdout evaluation with ablation flags.

Each ablation row toggles augmentation, cold-start initialization, and the
expert loop independently. Held-out users are always walked step by step
through the same session machinery, so a zero threshold reduces exactly to
the plain recommender; fold audits record which users trained each fold so
leakage is checkable after the fact.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import active, augment, coldstart, data, model, nn, uncertainty
from .errors import ConfigError, InputError

TOPK_LEVELS = (1, 5, 10)

# ablation rows: (augmentation, coldstart, active, profile schema)
TABLE1_ROWS: dict[int, dict] = {
    1: {"augmentation": "none", "coldstart": False, "active": False, "profile_schema": "demographic"},
    2: {"augmentation": "none", "coldstart": False, "active": False, "profile_schema": "full"},
    3: {"augmentation": "expert", "coldstart": False, "active": False, "profile_schema": "demographic"},
    4: {"augmentation": "rules", "coldstart": False, "active": False, "profile_schema": "demographic"},
    5: {"augmentation": "none", "coldstart": False, "active": True, "profile_schema": "demographic"},
    6: {"augmentation": "none", "coldstart": True, "active": False, "profile_schema": "demographic"},
    7: {"augmentation": "expert", "coldstart": False, "active": True, "profile_schema": "demographic"},
    8: {"augmentation": "expert", "coldstart": True, "active": False, "profile_schema": "demographic"},
    9: {"augmentation": "expert", "coldstart": True, "active": True, "profile_schema": "demographic"},
}


@dataclass
class ExperimentConfig:
    augmentation: str = "none"            # none | expert | rules
    coldstart: bool = False
    active: bool = False
    profile_schema: str = "demographic"   # demographic | full
    window: int = 3
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    alpha_level: float = 0.01
    seeds: tuple[int, ...] = (0,)
    similar_k: int = 3
    coldstart_lr: float = 1e-4
    finetune_lr: float = 1e-4
    finetune_steps: int = 5
    budget: int | None = None
    augment_rate: float = 0.10
    min_support: float = 0.05
    min_confidence: float = 0.6
    padded_windows: bool = True
    theta_override: float | None = None
    score_corrected_as_hit: bool = False
    dims: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.augmentation not in ("none", "expert", "rules"):
            raise ConfigError(f"unknown augmentation '{self.augmentation}'")
        if self.profile_schema not in ("demographic", "full"):
            raise ConfigError(f"unknown profile schema '{self.profile_schema}'")
        self.seeds = tuple(self.seeds)

    @classmethod
    def table1_row(cls, row: int, **overrides) -> "ExperimentConfig":
        if row not in TABLE1_ROWS:
            raise ConfigError(f"table 1 has rows 1..9, got {row}")
        kwargs = dict(TABLE1_ROWS[row])
        kwargs.update(overrides)
        return cls(**kwargs)


def topk_accuracy(predictions: Sequence[Sequence[int]], targets: Sequence[int],
                  k: int) -> float:
    """Fraction of cases whose target appears in the first k ranked ids."""
    if len(predictions) != len(targets):
        raise InputError(
            f"{len(predictions)} prediction lists vs {len(targets)} targets")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if not targets:
        raise InputError("no cases to score")
    hits = sum(1 for ranked, t in zip(predictions, targets) if t in list(ranked)[:k])
    return hits / len(targets)


def model_config_for(corpus: data.Corpus, cfg: ExperimentConfig) -> model.ModelConfig:
    fields = corpus.schema.select(cfg.profile_schema)
    vocab = data.VocabMap(corpus.item_ids)
    item_mat = data.item_profile_matrix(corpus, vocab)
    dims = {
        "n_classes": vocab.n_classes,
        "window": cfg.window,
        "item_embed_dim": 20,
        "user_embed_dim": 15,
        "profile_embed_dim": 3,
        "gate_dim": 10,
        "user_profile_dim": len(fields),
        "item_profile_dim": item_mat.shape[1],
    }
    dims.update(cfg.dims)
    return model.ModelConfig(**dims)


def _training_sequences(corpus: data.Corpus, users: list[str],
                        cfg: ExperimentConfig, seed: int) -> list[tuple[str, list[int]]]:
    """Original sequences plus augmented copies, per the configured method."""
    originals = [(u, corpus.history(u)) for u in users]
    if cfg.augmentation == "none":
        return originals
    sequences = [seq for _, seq in originals]
    if cfg.augmentation == "expert":
        if not corpus.taxonomy:
            raise ConfigError("expert augmentation requires an exercise taxonomy")
        copies = augment.augment_expert(sequences, corpus.taxonomy,
                                        rate=cfg.augment_rate, seed=seed)
    else:
        days = [[e.day for e in corpus.events[u] if e.completed] for u in users]
        rules = augment.mine_rules(sequences, days, min_support=cfg.min_support,
                                   min_confidence=cfg.min_confidence)
        copies = augment.augment_rules(sequences, rules,
                                       rate=cfg.augment_rate, seed=seed)
    return originals + [(u, copy) for (u, _), copy in zip(originals, copies)]


def _fit_distribution(params: nn.Params, mcfg: model.ModelConfig,
                      windows: Sequence[model.WindowSample],
                      cfg: ExperimentConfig) -> uncertainty.MarginalDistribution:
    if cfg.theta_override is not None:
        dist = _inactive_distribution()
        dist.theta = cfg.theta_override
        return dist
    batch = model.Batch.from_samples(windows)
    probs, _ = model.forward_batch(params, mcfg, batch)
    triples = np.array([uncertainty.sorted_triple(p) for p in probs])
    return uncertainty.fit_threshold(triples, level=cfg.alpha_level)


def _inactive_distribution() -> uncertainty.MarginalDistribution:
    # theta 0 never queries, which makes the inactive path share the
    # active path's code exactly
    dist = uncertainty.marginal_pdf(uncertainty.DirichletParams(1, 1, 1), grid_size=101)
    dist.level = 0.0
    dist.theta = 0.0
    return dist


@dataclass
class UserEvalResult:
    user: str
    steps: int
    queries: int
    hits: dict[int, int]

    def accuracy(self, k: int) -> float:
        return self.hits[k] / self.steps if self.steps else 0.0

    @property
    def query_rate(self) -> float:
        return self.queries / self.steps if self.steps else 0.0


def evaluate_sequence(params: nn.Params, mcfg: model.ModelConfig, user: str,
                      sequence: list[int], user_profile: np.ndarray,
                      item_profiles: np.ndarray,
                      dist: uncertainty.MarginalDistribution,
                      cfg: ExperimentConfig) -> UserEvalResult:
    """Walk one user's sequence step by step through the expert loop.

    The model is scored on its own pre-correction ranking at every step;
    history always follows the ground-truth sequence (in replay the expert
    answer is the actual next item, so both agree).
    """
    session = active.SessionState(
        user_id=user,
        params={k: w.copy() for k, w in params.items()},
        config=mcfg,
        user_profile=user_profile,
        item_profiles=item_profiles,
        distribution=dist,
        budget=cfg.budget,
        finetune_lr=cfg.finetune_lr,
        finetune_steps=cfg.finetune_steps,
    )
    targets = sequence[1:]
    oracle = active.replay_oracle(targets)
    hits = {k: 0 for k in TOPK_LEVELS}
    for t in range(1, len(sequence)):
        session.history = list(sequence[:t])
        decision = active.step(session)
        target = sequence[t]
        ranked = [i for i, _ in decision.top_k]
        scored_hit = {k: target in ranked[:k] for k in TOPK_LEVELS}
        if decision.kind == "queried":
            corrected = oracle.resolve(decision.ticket)
            active.resolve(session, decision.ticket, corrected)
            if cfg.score_corrected_as_hit:
                scored_hit = {k: True for k in TOPK_LEVELS}
        for k in TOPK_LEVELS:
            hits[k] += int(scored_hit[k])
    return UserEvalResult(user=user, steps=len(targets),
                          queries=session.queries, hits=hits)


@dataclass
class EvalResult:
    config: dict
    per_fold: list[dict]
    mean: dict
    std: dict
    fold_audit: list[dict]
    runtime_seconds: float

    def to_json(self) -> dict:
        return asdict(self)


def _aggregate(config: ExperimentConfig, rows: list[dict],
               audit: list[dict], started: float) -> EvalResult:
    by_seed: dict[int, list[dict]] = {}
    for row in rows:
        by_seed.setdefault(row["seed"], []).append(row)
    seed_means = []
    for seed, seed_rows in sorted(by_seed.items()):
        seed_means.append({
            "seed": seed,
            **{f"top{k}": float(np.mean([r[f"top{k}"] for r in seed_rows]))
               for k in TOPK_LEVELS},
            "query_rate": float(np.mean([r["query_rate"] for r in seed_rows])),
        })
    mean = {f"top{k}": float(np.mean([m[f"top{k}"] for m in seed_means]))
            for k in TOPK_LEVELS}
    mean["query_rate"] = float(np.mean([m["query_rate"] for m in seed_means]))
    std = {f"top{k}": float(np.std([m[f"top{k}"] for m in seed_means]))
           for k in TOPK_LEVELS}
    cfg_doc = asdict(config)
    cfg_doc["seeds"] = list(config.seeds)
    return EvalResult(config=cfg_doc, per_fold=rows, mean=mean, std=std,
                      fold_audit=audit, runtime_seconds=time.time() - started)


def loocv_run(corpus: data.Corpus, cfg: ExperimentConfig) -> EvalResult:
    """Leave-one-user-out evaluation over every configured seed."""
    started = time.time()
    users = corpus.users()
    if len(users) < 2:
        raise InputError("leave-one-user-out needs at least 2 users")
    if cfg.augmentation == "expert" and not corpus.taxonomy:
        raise ConfigError("expert augmentation requires an exercise taxonomy")
    mcfg = model_config_for(corpus, cfg)
    fields = corpus.schema.select(cfg.profile_schema)
    vocab = data.VocabMap(corpus.item_ids)
    item_mat = data.item_profile_matrix(corpus, vocab)
    rows: list[dict] = []
    audit: list[dict] = []
    for seed in cfg.seeds:
        for held_out in users:
            train_users = [u for u in users if u != held_out]
            train_corpus = corpus.subset(train_users)
            stats = data.profile_stats(train_corpus, fields)
            sequences = _training_sequences(train_corpus, train_users, cfg, seed)
            windows = data.make_windows(train_corpus, cfg.window,
                                        padded=cfg.padded_windows,
                                        stats=stats, sequences=sequences)
            if not windows:
                raise InputError(f"no training windows for fold holding out {held_out}")
            trained = model.train(windows, mcfg, epochs=cfg.epochs, seed=seed,
                                  batch_size=cfg.batch_size, lr=cfg.lr)
            params = trained.params
            if cfg.coldstart:
                index = coldstart.ProfileIndex.build(
                    {u: corpus.profiles[u][[corpus.schema.fields.index(f) for f in fields]]
                     for u in train_users}, stats)
                query = data.profile_vector(corpus, held_out, stats)
                neighbors = coldstart.similar_users(index, query, cfg.similar_k)
                pool = data.make_windows(
                    train_corpus, cfg.window, padded=cfg.padded_windows, stats=stats,
                    sequences=[(u, train_corpus.history(u)) for u in neighbors])
                params = coldstart.init_for_new_user(
                    params, mcfg, pool, lr=cfg.coldstart_lr, epochs=1, seed=seed).params
            if cfg.active:
                dist = _fit_distribution(params, mcfg, windows, cfg)
            else:
                dist = _inactive_distribution()
            sequence = [vocab.to_index(i) for i in corpus.history(held_out)]
            if len(sequence) < 2:
                continue
            profile = data.profile_vector(corpus, held_out, stats)
            result = evaluate_sequence(params, mcfg, held_out, sequence, profile,
                                       item_mat, dist, cfg)
            rows.append({"seed": seed, "user": held_out,
                         **{f"top{k}": result.accuracy(k) for k in TOPK_LEVELS},
                         "query_rate": result.query_rate,
                         "steps": result.steps, "queries": result.queries})
            audit.append({
                "seed": seed,
                "held_out": held_out,
                "train_users": train_users,
                "n_train_windows": len(windows),
                "n_eval_steps": result.steps,
                "held_out_in_train": held_out in train_users,
            })
    return _aggregate(cfg, rows, audit, started)


def holdout_run(prepared: data.PreparedSplit, cfg: ExperimentConfig) -> EvalResult:
    """Chronological per-user holdout; history crosses the boundary at eval."""
    started = time.time()
    corpus = prepared.corpus
    users = corpus.users()
    mcfg = model_config_for(corpus, cfg)
    fields = corpus.schema.select(cfg.profile_schema)
    vocab = data.VocabMap(corpus.item_ids)
    item_mat = data.item_profile_matrix(corpus, vocab)
    stats = data.profile_stats(corpus, fields)
    train_seqs = []
    test_extents: dict[str, tuple[list[int], int]] = {}
    for u in users:
        history = corpus.history(u)
        boundary = prepared.train_counts[u]
        if boundary >= 2:
            train_seqs.append((u, history[:boundary]))
        if boundary < len(history):
            seq = [vocab.to_index(i) for i in history]
            test_extents[u] = (seq, boundary)
    if not train_seqs:
        raise InputError("holdout: empty training split")
    if not test_extents:
        raise InputError("holdout: empty test split")
    rows: list[dict] = []
    audit: list[dict] = []
    for seed in cfg.seeds:
        sequences = list(train_seqs)
        if cfg.augmentation != "none":
            base = [s for _, s in train_seqs]
            if cfg.augmentation == "expert":
                if not corpus.taxonomy:
                    raise ConfigError("expert augmentation requires a taxonomy")
                copies = augment.augment_expert(base, corpus.taxonomy,
                                                rate=cfg.augment_rate, seed=seed)
            else:
                rules = augment.mine_rules(base, None, min_support=cfg.min_support,
                                           min_confidence=cfg.min_confidence)
                copies = augment.augment_rules(base, rules,
                                               rate=cfg.augment_rate, seed=seed)
            sequences = sequences + [(u, c) for (u, _), c in zip(train_seqs, copies)]
        windows = data.make_windows(corpus, cfg.window, padded=cfg.padded_windows,
                                    stats=stats, sequences=sequences)
        trained = model.train(windows, mcfg, epochs=cfg.epochs, seed=seed,
                              batch_size=cfg.batch_size, lr=cfg.lr)
        params = trained.params
        if cfg.active:
            dist = _fit_distribution(params, mcfg, windows, cfg)
        else:
            dist = _inactive_distribution()
        train_metrics = ranked_metrics(params, mcfg, windows)
        for u, (seq, boundary) in test_extents.items():
            profile = data.profile_vector(corpus, u, stats)
            # walk only the test suffix; the train prefix provides context
            session_seq = seq
            result = _evaluate_suffix(params, mcfg, u, session_seq, boundary,
                                      profile, item_mat, dist, cfg)
            rows.append({"seed": seed, "user": u,
                         **{f"top{k}": result.accuracy(k) for k in TOPK_LEVELS},
                         "query_rate": result.query_rate,
                         "steps": result.steps, "queries": result.queries})
        audit.append({"seed": seed, "n_train_windows": len(windows),
                      "train_metrics": train_metrics,
                      "n_test_users": len(test_extents)})
    return _aggregate(cfg, rows, audit, started)


def _evaluate_suffix(params: nn.Params, mcfg: model.ModelConfig, user: str,
                     sequence: list[int], start: int, user_profile: np.ndarray,
                     item_profiles: np.ndarray,
                     dist: uncertainty.MarginalDistribution,
                     cfg: ExperimentConfig) -> UserEvalResult:
    session = active.SessionState(
        user_id=user,
        params={k: w.copy() for k, w in params.items()},
        config=mcfg,
        user_profile=user_profile,
        item_profiles=item_profiles,
        distribution=dist,
        budget=cfg.budget,
        finetune_lr=cfg.finetune_lr,
        finetune_steps=cfg.finetune_steps,
    )
    oracle = active.replay_oracle(sequence[start:])
    hits = {k: 0 for k in TOPK_LEVELS}
    steps = 0
    for t in range(start, len(sequence)):
        session.history = list(sequence[:t])
        decision = active.step(session)
        ranked = [i for i, _ in decision.top_k]
        target = sequence[t]
        scored = {k: target in ranked[:k] for k in TOPK_LEVELS}
        if decision.kind == "queried":
            corrected = oracle.resolve(decision.ticket)
            active.resolve(session, decision.ticket, corrected)
            if cfg.score_corrected_as_hit:
                scored = {k: True for k in TOPK_LEVELS}
        for k in TOPK_LEVELS:
            hits[k] += int(scored[k])
        steps += 1
    return UserEvalResult(user=user, steps=steps, queries=session.queries, hits=hits)


def ranked_metrics(params: nn.Params, mcfg: model.ModelConfig,
                   windows: Sequence[model.WindowSample]) -> dict:
    """Batch top-k accuracy of a fixed model over a window set (no expert loop)."""
    batch = model.Batch.from_samples(windows)
    probs, _ = model.forward_batch(params, mcfg, batch)
    out = {}
    for k in TOPK_LEVELS:
        hits = 0
        for p, t in zip(probs, batch.targets):
            ranked = model.rank_classes(p)[:k]
            hits += int(t in ranked)
        out[f"top{k}"] = hits / len(windows)
    return out


def popularity_metrics(prepared: data.PreparedSplit) -> dict:
    """Rank items by training-split frequency; score the test suffixes."""
    corpus = prepared.corpus
    vocab = data.VocabMap(corpus.item_ids)
    counts: dict[int, int] = {}
    targets: list[int] = []
    for u in corpus.users():
        history = corpus.history(u)
        boundary = prepared.train_counts[u]
        for item in history[:boundary]:
            counts[vocab.to_index(item)] = counts.get(vocab.to_index(item), 0) + 1
        targets.extend(vocab.to_index(i) for i in history[boundary:])
    ranking = sorted(range(1, vocab.n_classes),
                     key=lambda i: (-counts.get(i, 0), i))
    if not targets:
        raise InputError("holdout: empty test split")
    return {f"top{k}": sum(1 for t in targets if t in ranking[:k]) / len(targets)
            for k in TOPK_LEVELS}


def render_table(results: dict[int, EvalResult]) -> str:
    """Plain-text ablation table in the standard row order."""
    lines = [f"{'row':>3}  {'method':<58} {'top-1':>7} {'top-5':>7} {'top-10':>7} {'queries':>8}"]
    labels = {
        1: "Baseline (Demographic)",
        2: "Baseline (Full Profile)",
        3: "Baseline + Data Augmentation (Expert)",
        4: "Baseline + Data Augmentation (Rule based)",
        5: "Baseline (Demographic) + Active Learning",
        6: "Baseline (Demographic) + New user Init",
        7: "Baseline + Data Augmentation (Expert) + Active Learning",
        8: "Baseline + Data Augmentation (Expert) + New user Init",
        9: "Baseline + Data Augmentation (Expert) + New user Init + Active Learning",
    }
    for row in sorted(results):
        r = results[row]
        lines.append(
            f"{row:>3}  {labels.get(row, '?'):<58} "
            f"{r.mean['top1'] * 100:6.2f}% {r.mean['top5'] * 100:6.2f}% "
            f"{r.mean['top10'] * 100:6.2f}% {r.mean['query_rate'] * 100:7.2f}%")
    return "\n".join(lines)
