"""Command line entry points.

Verbs: preprocess, build-context, embed, train, evaluate, ablate, sweep-dim,
case-study, report. Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys


from .config import PipelineConfig
from .corpus import corpus_report, load_corpus, preprocess, save_corpus
from .context import build_context, load_context, save_context
from .embeddings import load_embeddings, save_embeddings, train_corpus_embeddings
from .errors import DataError, NumericError
from .experiments import case_study, embedding_dim_sweep, run_ablation, save_case_study
from .metrics import evaluate
from .samples import build_test_samples
from .train import load_checkpoint, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _load_config(args):
    cfg = PipelineConfig.from_json(args.config) if getattr(args, "config", None) else PipelineConfig()
    # Any explicitly passed flag overrides the config file.
    for section_name in ("preprocess", "context", "graph_embedding", "model", "train"):
        section = getattr(cfg, section_name)
        for f in dataclasses.fields(section):
            value = getattr(args, f.name, None)
            if value is not None:
                setattr(section, f.name, value)
    return cfg


def _add_config_flag(p):
    p.add_argument("--config", help="JSON config file; flags override its values")


def build_parser():
    parser = _Parser(prog="poinext", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="parse, filter, segment and split a raw TSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-poi-visits", type=int, dest="min_poi_visits")
    p.add_argument("--min-traj-len", type=int, dest="min_traj_len")
    p.add_argument("--min-user-trajs", type=int, dest="min_user_trajs")
    p.add_argument("--window-hours", type=int, dest="window_hours")
    p.add_argument("--train-frac", type=float, dest="train_frac")
    p.add_argument("--tz-mode", choices=["local", "utc"], dest="tz_mode")
    p.add_argument("--window-mode", choices=["anchor", "gap"], dest="window_mode")
    p.add_argument("--filter-order", choices=["pois_first", "users_first"], dest="filter_order")
    _add_config_flag(p)

    p = sub.add_parser("build-context", help="build context matrices from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--category-norm", choices=["softmax", "ratio"], dest="category_norm")
    _add_config_flag(p)

    p = sub.add_parser("embed", help="train graph embeddings for POIs and categories")
    p.add_argument("--corpus", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--walk-length", type=int, dest="walk_length")
    p.add_argument("--walks-per-node", type=int, dest="walks_per_node")
    p.add_argument("--window", type=int)
    p.add_argument("--epochs", type=int)
    _add_config_flag(p)

    p = sub.add_parser("train", help="train the model")
    _train_like_flags(p)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--out", help="metrics.json destination")
    p.add_argument("--per-user-metrics", action="store_true", dest="per_user_metrics", default=None)
    _add_config_flag(p)

    p = sub.add_parser("ablate", help="train and evaluate one ablation variant")
    p.add_argument("--variant", required=True)
    _train_like_flags(p)

    p = sub.add_parser("sweep-dim", help="retrain across POI embedding dimensions")
    p.add_argument("--dims", required=True, help="comma-separated, e.g. 100,200,300")
    _train_like_flags(p)

    p = sub.add_parser("case-study", help="most similar historical trajectory for a user")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--out", help="JSON destination")
    _add_config_flag(p)

    p = sub.add_parser("report", help="corpus summary distributions")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_config_flag(p)
    return parser


def _train_like_flags(p):
    p.add_argument("--corpus", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--hidden", type=int)
    p.add_argument("--kappa-max", type=int, dest="kappa_max")
    p.add_argument("--epsilon-mode", choices=["hard", "straight-through"], dest="epsilon_mode")
    p.add_argument("--lambda-aux", type=float, dest="lambda_aux")
    p.add_argument("--max-histories", type=int, dest="max_histories")
    _add_config_flag(p)


def _load_artifacts(args, cfg):
    split = load_corpus(args.corpus)
    stats = load_context(args.context)
    poi, cat = load_embeddings(args.embeddings)
    cfg.model.dim_poi = poi.shape[1]
    cfg.model.dim_cat = cat.shape[1]
    return split, stats, poi, cat


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _dispatch(args):
    cfg = _load_config(args)

    if args.command == "preprocess":
        split = preprocess(
            args.input,
            min_poi_visits=cfg.preprocess.min_poi_visits,
            min_traj_len=cfg.preprocess.min_traj_len,
            min_user_trajs=cfg.preprocess.min_user_trajs,
            window_hours=cfg.preprocess.window_hours,
            train_frac=cfg.preprocess.train_frac,
            tz_mode=cfg.preprocess.tz_mode,
            window_mode=cfg.preprocess.window_mode,
            filter_order=cfg.preprocess.filter_order,
        )
        save_corpus(split, args.out)
        print(json.dumps(vars(split.stats)))
        return 0

    if args.command == "build-context":
        split = load_corpus(args.corpus)
        stats = build_context(split, cfg.context)
        save_context(stats, args.out)
        print(f"context written to {args.out}")
        return 0

    if args.command == "embed":
        split = load_corpus(args.corpus)
        stats = load_context(args.context)
        poi, cat = train_corpus_embeddings(
            split, stats.graph, cfg.graph_embedding, args.seed, cat_dim=cfg.model.dim_cat
        )
        save_embeddings(poi, cat, args.out, cfg.graph_embedding, args.seed)
        print(f"embeddings written to {args.out} (poi {poi.shape}, category {cat.shape})")
        return 0

    if args.command == "train":
        split, stats, poi, cat = _load_artifacts(args, cfg)
        model, _ = train(split, stats, poi, cat, cfg.model, cfg.train, run_dir=args.run_dir)
        best = os.path.join(args.run_dir, "best.pt")
        if os.path.exists(best):
            model, _ = load_checkpoint(best, stats)
        samples = build_test_samples(split, include_test_history=cfg.train.include_test_history,
                                     max_histories=cfg.train.max_histories)
        report = evaluate(model, samples, per_user=cfg.train.per_user_metrics,
                          seed=cfg.train.seed, dataset=os.path.basename(args.corpus))
        report.save(os.path.join(args.run_dir, "metrics.json"))
        print(json.dumps(report.to_dict()))
        return 0

    if args.command == "evaluate":
        stats = load_context(args.context)
        model, _ = load_checkpoint(args.checkpoint, stats)
        split = load_corpus(args.corpus)
        samples = build_test_samples(split, include_test_history=cfg.train.include_test_history,
                                     max_histories=cfg.train.max_histories)
        report = evaluate(model, samples, per_user=cfg.train.per_user_metrics,
                          dataset=os.path.basename(args.corpus))
        if args.out:
            report.save(args.out)
        print(json.dumps(report.to_dict()))
        return 0

    if args.command == "ablate":
        split, stats, poi, cat = _load_artifacts(args, cfg)
        report = run_ablation(split, stats, poi, cat, args.variant, cfg.model, cfg.train,
                              run_dir=args.run_dir, dataset=os.path.basename(args.corpus))
        print(json.dumps(report.to_dict()))
        return 0

    if args.command == "sweep-dim":
        split, stats, _, _ = _load_artifacts(args, cfg)
        dims = [int(d) for d in args.dims.split(",") if d]
        if not dims:
            raise ValueError("--dims must name at least one dimension")
        rows = embedding_dim_sweep(split, stats, dims, cfg.graph_embedding, cfg.model,
                                   cfg.train, run_dir=args.run_dir)
        print(json.dumps(rows))
        return 0

    if args.command == "case-study":
        stats = load_context(args.context)
        model, _ = load_checkpoint(args.checkpoint, stats)
        split = load_corpus(args.corpus)
        result = case_study(model, split, args.user)
        if args.out:
            save_case_study(result, args.out)
        print(json.dumps({"user": result["user"],
                          "best_match_traj": result["best_match"]["traj_id"],
                          "cosine": result["similarities"][0]["cosine"]}))
        return 0

    if args.command == "report":
        split = load_corpus(args.corpus)
        rep = corpus_report(split, out_dir=args.out)
        print(json.dumps({k: rep[k] for k in ("radius_hist", "hour_counts")}))
        return 0

    raise ValueError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
