"""Operator command line: data prep, training, margin-threshold fitting,
experiment reproduction, augmentation, and serving."""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import augment, data, evaluate, model, service, uncertainty
from .errors import ExrecError


def _parse_seeds(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip() != "")


def _load_corpus_arg(args) -> data.Corpus:
    if args.corpus == "synth":
        return data.synth_generate(n_users=args.synth_users, n_days=args.synth_days,
                                   n_exercises=args.synth_exercises,
                                   levels=args.synth_levels, seed=args.synth_seed)
    return data.load_corpus(args.corpus)


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--synth-users", type=int, default=72)
    p.add_argument("--synth-days", type=int, default=28)
    p.add_argument("--synth-exercises", type=int, default=44)
    p.add_argument("--synth-levels", type=int, default=11)
    p.add_argument("--synth-seed", type=int, default=0)


def cmd_synth(args) -> int:
    corpus = data.synth_generate(n_users=args.users, n_days=args.days,
                                 n_exercises=args.exercises, levels=args.levels,
                                 seed=args.seed)
    data.save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.users())} users, "
          f"{sum(len(corpus.history(u)) for u in corpus.users())} completed events "
          f"to {args.out}")
    print(f"window count (w={args.window}, padded): "
          f"{data.window_count(corpus, args.window, True)}; "
          f"unpadded: {data.window_count(corpus, args.window, False)}")
    return 0


def cmd_prep_movielens(args) -> int:
    prepared = data.movielens_prepare(args.ratings, top_n=args.top)
    data.save_corpus(prepared.corpus, args.out)
    with open(f"{args.out}/split.json", "w") as fh:
        json.dump({"train_counts": prepared.train_counts}, fh)
    n_windows = data.window_count(prepared.corpus, args.window, padded=False)
    print(f"kept {len(prepared.corpus.item_ids)} items, "
          f"{len(prepared.corpus.users())} users")
    print(f"window count (w={args.window}, unpadded): {n_windows}; "
          f"padded: {data.window_count(prepared.corpus, args.window, True)}")
    return 0


def cmd_train(args) -> int:
    corpus = _load_corpus_arg(args)
    cfg = evaluate.ExperimentConfig(
        profile_schema=args.schema, window=args.window, epochs=args.epochs,
        lr=args.lr, batch_size=args.batch_size, seeds=(args.seed,))
    if args.preset == "movielens":
        cfg.dims = {"item_embed_dim": 1000, "user_embed_dim": 1000, "gate_dim": 300}
    mcfg = evaluate.model_config_for(corpus, cfg)
    fields = corpus.schema.select(args.schema)
    stats = data.profile_stats(corpus, fields)
    windows = data.make_windows(corpus, args.window, stats=stats)
    result = model.train(windows, mcfg, epochs=args.epochs, seed=args.seed,
                         batch_size=args.batch_size, lr=args.lr)
    service.save_bundle(args.out, result.params, mcfg, None, corpus, stats)
    print(f"trained on {len(windows)} windows for {args.epochs} epochs; "
          f"final loss {result.epoch_losses[-1]:.4f}")
    print(f"bundle written to {args.out} (no distribution yet; run fit-dirichlet)")
    return 0


def cmd_fit_dirichlet(args) -> int:
    bundle_params, mcfg = model.load_checkpoint(f"{args.bundle}/checkpoint.json")
    corpus = _load_corpus_arg(args)
    fields = corpus.schema.select(args.schema)
    stats = data.profile_stats(corpus, fields)
    windows = data.make_windows(corpus, mcfg.window, stats=stats)
    batch = model.Batch.from_samples(windows)
    probs, _ = model.forward_batch(bundle_params, mcfg, batch)
    triples = np.array([uncertainty.sorted_triple(p) for p in probs])
    dist = uncertainty.fit_threshold(triples, level=args.alpha_level,
                                     grid_size=args.grid_size)
    dist.save(f"{args.bundle}/distribution.json")
    a = dist.alpha
    print(f"fitted Dirichlet concentrations: ({a.a1:.4f}, {a.a2:.4f}, {a.a3:.4f})")
    print(f"alpha level {args.alpha_level} -> threshold {dist.theta:.4f}")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    overrides = dict(window=args.window, epochs=args.epochs, lr=args.lr,
                     batch_size=args.batch_size, seeds=_parse_seeds(args.seeds),
                     alpha_level=args.alpha_level, augment_rate=args.rate,
                     similar_k=args.similar_k,
                     finetune_lr=args.finetune_lr,
                     finetune_steps=args.finetune_steps)
    if args.theta_override is not None:
        overrides["theta_override"] = args.theta_override
    cfg = evaluate.ExperimentConfig.table1_row(args.table1_row, **overrides)
    if args.movielens:
        prepared = data.movielens_prepare(args.movielens, top_n=args.top)
        cfg.dims = {"item_embed_dim": 1000, "user_embed_dim": 1000, "gate_dim": 300}
        cfg.padded_windows = False
        result = evaluate.holdout_run(prepared, cfg)
    else:
        corpus = _load_corpus_arg(args)
        result = evaluate.loocv_run(corpus, cfg)
    doc = result.to_json()
    runtime = doc.pop("runtime_seconds")
    out = {"created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
           "runtime_seconds": runtime,
           "result": doc}
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
    print(evaluate.render_table({args.table1_row: result}))
    print(f"results written to {args.out}")
    return 0


def cmd_augment(args) -> int:
    corpus = _load_corpus_arg(args)
    users = corpus.users()
    sequences = [corpus.history(u) for u in users]
    if args.method == "expert":
        if not corpus.taxonomy:
            raise ExrecError("expert augmentation needs exercises.json in the corpus")
        copies = augment.augment_expert(sequences, corpus.taxonomy,
                                        rate=args.rate, seed=args.seed)
    else:
        days = [[e.day for e in corpus.events[u] if e.completed] for u in users]
        rules = augment.mine_rules(sequences, days, min_support=args.min_support,
                                   min_confidence=args.min_confidence)
        if args.rules_csv:
            augment.save_rules_csv(rules, args.rules_csv)
            print(f"{len(rules)} rules written to {args.rules_csv}")
        copies = augment.augment_rules(sequences, rules, rate=args.rate, seed=args.seed)
    with open(args.out, "w") as fh:
        json.dump({u: copy for u, copy in zip(users, copies)}, fh)
    changed = sum(1 for seq, copy in zip(sequences, copies)
                  for a, b in zip(seq, copy) if a != b)
    print(f"augmented copies for {len(users)} users written to {args.out} "
          f"({changed} positions substituted)")
    return 0


def cmd_serve(args) -> int:
    cfg = service.ServiceConfig.load(args.config)
    if args.port is not None:
        cfg.port = args.port
    if args.data_dir is not None:
        cfg.data_dir = args.data_dir
    if args.bundle is not None:
        cfg.bundle_dir = args.bundle
    service.serve_forever(cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exrec",
        description="Exercise recommendation engine with expert-in-the-loop "
                    "active learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic coaching corpus")
    p.add_argument("--users", type=int, default=72)
    p.add_argument("--days", type=int, default=28)
    p.add_argument("--exercises", type=int, default=44)
    p.add_argument("--levels", type=int, default=11)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("prep-movielens", help="prepare the MovieLens100K subset")
    p.add_argument("--ratings", required=True, help="path to u.data")
    p.add_argument("--top", type=int, default=100)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_prep_movielens)

    p = sub.add_parser("train", help="train the recommender and write a bundle")
    p.add_argument("--corpus", required=True, help="corpus dir or 'synth'")
    _add_synth_flags(p)
    p.add_argument("--schema", choices=["demographic", "full"], default="demographic")
    p.add_argument("--preset", choices=["mhealth", "movielens"], default="mhealth")
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="bundle output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("fit-dirichlet",
                       help="fit the margin distribution and query threshold")
    p.add_argument("--bundle", required=True)
    p.add_argument("--corpus", required=True, help="corpus dir or 'synth'")
    _add_synth_flags(p)
    p.add_argument("--schema", choices=["demographic", "full"], default="demographic")
    p.add_argument("--alpha-level", type=float, default=0.01)
    p.add_argument("--grid-size", type=int, default=2001)
    p.set_defaults(fn=cmd_fit_dirichlet)

    p = sub.add_parser("eval", help="reproduce an ablation table row")
    p.add_argument("--table1-row", type=int, required=True, choices=range(1, 10))
    p.add_argument("--corpus", default="synth", help="corpus dir or 'synth'")
    _add_synth_flags(p)
    p.add_argument("--movielens", help="u.data path: run the holdout protocol instead")
    p.add_argument("--top", type=int, default=100)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--alpha-level", type=float, default=0.01)
    p.add_argument("--rate", type=float, default=0.10)
    p.add_argument("--similar-k", type=int, default=3)
    p.add_argument("--finetune-lr", type=float, default=1e-4)
    p.add_argument("--finetune-steps", type=int, default=5)
    p.add_argument("--theta-override", type=float, default=None)
    p.add_argument("--out", default="results.json")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("augment", help="write augmented sequence copies")
    p.add_argument("--corpus", required=True, help="corpus dir or 'synth'")
    _add_synth_flags(p)
    p.add_argument("--method", choices=["expert", "rules"], default="expert")
    p.add_argument("--rate", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-support", type=float, default=0.05)
    p.add_argument("--min-confidence", type=float, default=0.6)
    p.add_argument("--rules-csv", help="also export mined rules as CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("serve", help="start the recommendation service")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--port", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--bundle")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ExrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
