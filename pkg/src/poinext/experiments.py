"""Ablation runner, embedding-dimension sweep, and the case-study report."""

import dataclasses
import json
import os
import re

import numpy as np
import torch

from .config import GraphEmbeddingConfig, ModelConfig, TrainConfig
from .embeddings import train_corpus_embeddings
from .layers import masked_mean, run_plain_cell
from .metrics import evaluate
from .samples import PredictionSample, build_test_samples, collate, traj_arrays
from .train import train

# Component toggles for every published variant.
VARIANTS = {
    "full": {},
    "wo_short": {"use_short": False},
    "wo_long": {"use_long": False},
    "wo_short_social": {"use_short": False, "use_social": False},
    "wo_short_self_att": {"use_short": False, "use_self_att": False},
    "wo_short_st_att": {"use_short": False, "use_st_att": False},
    "wo_long_c_dilated_lstm": {
        "use_long": False, "category_in_epsilon": False, "use_plain_cell": False,
    },
    "wo_long_lstm": {"use_long": False, "use_plain_cell": False},
    "wo_long_stc_dilated": {"use_long": False, "use_dilated_cell": False},
}

_ALIASES = {"socail": "social", "selfatt": "self_att", "statt": "st_att"}


def normalize_variant(tag):
    """Accept 'w/o Short&Self-Att' style names as well as slugs."""
    slug = tag.strip().lower()
    slug = slug.replace("w/o", "wo").replace("&", " ").replace("-", "_")
    slug = re.sub(r"[^a-z0-9_]+", "_", slug)
    slug = re.sub(r"_+", "_", slug).strip("_")
    for bad, good in _ALIASES.items():
        slug = slug.replace(bad, good)
    if slug not in VARIANTS:
        raise ValueError(
            f"unknown ablation variant {tag!r}; valid tags: {sorted(VARIANTS)}"
        )
    return slug


def variant_model_config(base: ModelConfig, tag):
    slug = normalize_variant(tag)
    cfg = dataclasses.replace(base, **VARIANTS[slug])
    cfg.validate()
    return slug, cfg


def run_ablation(split, stats, poi_matrix, cat_matrix, variant, model_cfg,
                 train_cfg, run_dir=None, dataset=""):
    """Train and evaluate one variant; returns its EvalReport."""
    slug, cfg = variant_model_config(model_cfg, variant)
    out_dir = os.path.join(run_dir, slug) if run_dir else None
    model, _ = train(split, stats, poi_matrix, cat_matrix, cfg, train_cfg, run_dir=out_dir)
    samples = build_test_samples(
        split, include_test_history=train_cfg.include_test_history,
        max_histories=train_cfg.max_histories,
    )
    report = evaluate(
        model, samples, per_user=train_cfg.per_user_metrics, ablation=slug,
        dataset=dataset, seed=train_cfg.seed,
    )
    if out_dir:
        report.save(os.path.join(out_dir, "metrics.json"))
    return report


def embedding_dim_sweep(split, stats, dims, emb_cfg: GraphEmbeddingConfig,
                        model_cfg: ModelConfig, train_cfg: TrainConfig,
                        run_dir=None, dataset=""):
    """Retrain graph embeddings and the model per POI embedding dimension."""
    rows = []
    for dim in dims:
        e_cfg = dataclasses.replace(emb_cfg, dim=dim)
        m_cfg = dataclasses.replace(model_cfg, dim_poi=dim)
        poi, cat = train_corpus_embeddings(
            split, stats.graph, e_cfg, train_cfg.seed, cat_dim=m_cfg.dim_cat
        )
        out_dir = os.path.join(run_dir, f"dim_{dim}") if run_dir else None
        model, _ = train(split, stats, poi, cat, m_cfg, train_cfg, run_dir=out_dir)
        samples = build_test_samples(split, include_test_history=train_cfg.include_test_history)
        report = evaluate(model, samples, ablation=f"dim={dim}", dataset=dataset,
                          seed=train_cfg.seed)
        rows.append({"dim": dim, "recall@5": report.recall[5], "ndcg@5": report.ndcg[5]})
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "dim_sweep.csv"), "w") as f:
            f.write("dim,recall@5,ndcg@5\n")
            for r in rows:
                f.write(f"{r['dim']},{r['recall@5']:.6f},{r['ndcg@5']:.6f}\n")
        _plot_sweep(rows, run_dir)
    return rows


def _plot_sweep(rows, run_dir):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    dims = [r["dim"] for r in rows]
    for metric in ("recall@5", "ndcg@5"):
        fig, ax = plt.subplots()
        ax.plot(dims, [r[metric] for r in rows], marker="o")
        ax.set_xlabel("POI embedding dimension")
        ax.set_ylabel(metric)
        fig.savefig(os.path.join(run_dir, f"dim_sweep_{metric.replace('@', '_at_')}.png"))
        plt.close(fig)


def _pooled_vector(model, traj):
    poi, cat, slot, week = traj_arrays(traj)
    arrays = (poi, cat, slot, week)
    fake = collate([
        PredictionSample(user=traj.user, cur=arrays, hist=[arrays], target=int(poi[-1]))
    ])
    with torch.no_grad():
        e = model.tables.checkin_vectors(fake.cur_poi, fake.cur_cat, fake.cur_week, fake.cur_slot)
        states, _ = run_plain_cell(model.current_cell, e, fake.cur_len)
        mask = fake.cur_mask()
        return masked_mean(states * mask.to(e.dtype).unsqueeze(-1), mask, dim=1)[0].numpy()


def case_study(model, split, user):
    """Rank a user's earlier trajectories by similarity to their latest one.

    Returns the ranked similarities plus the coordinate paths of the top
    match and the current trajectory, ready for plotting.
    """
    trajs = split.train.get(user, []) + split.test.get(user, [])
    if len(trajs) < 2:
        raise ValueError(f"user {user} has fewer than 2 trajectories")
    current = trajs[-1]
    history = trajs[:-1]
    cur_vec = _pooled_vector(model, current)
    sims = []
    for t in history:
        v = _pooled_vector(model, t)
        denom = np.linalg.norm(cur_vec) * np.linalg.norm(v)
        sims.append(float(np.dot(cur_vec, v) / denom) if denom > 0 else 0.0)
    order = np.argsort(sims)[::-1]

    def path(traj):
        return {
            "traj_id": traj.traj_id,
            "weekday": traj.checkins[0].weekday,
            "coords": [[q.lat, q.lon] for q in traj.checkins],
            "pois": [q.poi for q in traj.checkins],
        }

    return {
        "user": user,
        "similarities": [
            {"traj_id": history[i].traj_id, "cosine": sims[i]} for i in order
        ],
        "best_match": path(history[order[0]]),
        "current": path(current),
    }


def save_case_study(result, out_path):
    with open(out_path, "w") as f:
        json.dump(result, f, indent=2)


# ---------------------------------------------------------------------------
# Desk-scale reproduction helpers
# ---------------------------------------------------------------------------

def subsample_corpus(raw_path, n_users, preprocess_cfg=None):
    """Re-run the preprocessing pipeline on the most active n_users.

    Activity is measured by trajectory count in the full corpus; restricting
    the raw rows first keeps the subsample's vocabulary dense and its
    filters self-consistent.
    """
    from .config import PreprocessConfig
    from .corpus import (
        filter_rare_pois, filter_users, parse_dataset, segment_trajectories, split_corpus,
    )

    cfg = preprocess_cfg or PreprocessConfig()

    def pipeline(rows):
        rows = filter_rare_pois(rows, min_visits=cfg.min_poi_visits)
        sessions = segment_trajectories(rows, window_hours=cfg.window_hours,
                                        min_len=cfg.min_traj_len,
                                        window_mode=cfg.window_mode)
        return filter_users(sessions, min_trajs=cfg.min_user_trajs)

    rows, _ = parse_dataset(raw_path, tz_mode=cfg.tz_mode)
    sessions = pipeline(rows)
    counts = {}
    for s in sessions:
        counts[s.user_id] = counts.get(s.user_id, 0) + 1
    keep = {u for u, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n_users]}
    rows = [r for r in rows if r.user_id in keep]
    return split_corpus(pipeline(rows), train_frac=cfg.train_frac)


def desk_scale_comparison(split, seeds=(1, 2, 3), run_dir=None, emb_cfg=None,
                          model_cfg=None, train_cfg=None):
    """Full model vs the two coarse ablations on Rec@5, one row per seed.

    Defaults to a reduced desk configuration (64-dim embeddings and hidden
    state) because the comparison targets the ORDERING of the variants, not
    absolute scores; every variant trains until validation Recall@1 stops
    improving so no variant is judged while undertrained.
    """
    emb_cfg = emb_cfg or GraphEmbeddingConfig(walk_length=20, walks_per_node=5,
                                              window=5, epochs=2, dim=64)
    model_cfg = model_cfg or ModelConfig(hidden=64, dim_poi=64, dim_cat=16,
                                         dim_user=16, dim_time=4, dim_week=4)
    train_cfg = train_cfg or TrainConfig(lr=1e-3, batch_size=32, max_epochs=25,
                                         stop_patience=6, val_frac=0.1,
                                         max_histories=30, track_test_loss=False)
    stats = None
    rows = []
    for seed in seeds:
        if stats is None:
            from .context import build_context
            stats = build_context(split)
        t_cfg = dataclasses.replace(train_cfg, seed=seed)
        poi, cat = train_corpus_embeddings(split, stats.graph, emb_cfg, seed,
                                           cat_dim=model_cfg.dim_cat)
        row = {"seed": seed}
        for tag in ("full", "wo_long", "wo_short"):
            out = os.path.join(run_dir, f"seed{seed}") if run_dir else None
            report = run_ablation(split, stats, poi, cat, tag, model_cfg, t_cfg,
                                  run_dir=out)
            row[tag] = report.recall[5]
        rows.append(row)
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "desk_scale.json"), "w") as f:
            json.dump(rows, f, indent=2)
    return rows
