"""Training loop, checkpointing and the end-to-end train entry point."""

import json
import logging
import os
import time
from dataclasses import asdict

import numpy as np
import torch

from .config import ModelConfig, TrainConfig, config_hash
from .errors import NumericError
from .metrics import evaluate
from .model import NextPoiNet, compute_loss
from .samples import build_test_samples, build_train_samples, make_batches

log = logging.getLogger(__name__)


def batch_loss(model, batch):
    out = model(batch)
    coef = model.cfg.epsilon_loss_coef if model.cfg.epsilon_mode == "straight-through" else 0.0
    return compute_loss(
        out, batch, lambda_aux=model.cfg.lambda_aux, epsilon_coef=coef,
        poi_table=model.tables.poi_table,
    )


def _mean_loss(model, batches):
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for b in batches:
            total += float(batch_loss(model, b)) * len(b)
            n += len(b)
    return total / max(1, n)


def save_checkpoint(model, path, epoch=0, extra=None):
    payload = {
        "state_dict": model.state_dict(),
        "model_config": asdict(model.cfg),
        "config_hash": config_hash(asdict(model.cfg)),
        "sizes": {"n_users": model.n_users, "n_pois": model.n_pois, "n_cats": model.n_cats},
        "seed": model.seed,
        "epoch": epoch,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, stats, dtype=torch.float32):
    """Rebuild the network from a checkpoint plus a context directory's stats."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    cfg = ModelConfig(**payload["model_config"])
    sizes = payload["sizes"]
    poi = np.zeros((sizes["n_pois"], cfg.dim_poi), dtype=np.float64)
    cat = np.zeros((sizes["n_cats"], cfg.dim_cat), dtype=np.float64)
    model = NextPoiNet(
        sizes["n_users"], sizes["n_pois"], sizes["n_cats"], cfg, stats, poi, cat,
        seed=payload["seed"], dtype=dtype,
    )
    model.load_state_dict(payload["state_dict"])
    return model, payload


def train_model(model, train_samples, val_samples, cfg: TrainConfig, run_dir=None,
                test_samples=None):
    """Optimize the model in place; returns the per-epoch history rows.

    Adam with L2 regularization and global-norm gradient clipping; the
    learning rate halves after cfg.lr_patience epochs without a validation
    Recall@1 improvement and training stops after cfg.stop_patience.
    """
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    batches = make_batches(train_samples, cfg.batch_size)
    test_batches = make_batches(test_samples, cfg.batch_size) if test_samples else None

    history = []
    best_rec1, best_epoch = -1.0, 0
    since_improve = 0
    lr = cfg.lr
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = rng.permutation(len(batches))
        total, seen = 0.0, 0
        t0 = time.time()
        for bi in order:
            batch = batches[bi]
            loss = batch_loss(model, batch)
            if not torch.isfinite(loss):
                _dump_bad_batch(run_dir, batch, epoch, step)
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step}; batch dumped"
                )
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, cfg.clip_norm)
            opt.step()
            total += float(loss.detach()) * len(batch)
            seen += len(batch)
            step += 1
            if cfg.max_steps and step >= cfg.max_steps:
                break

        row = {
            "epoch": epoch,
            "train_loss": total / max(1, seen),
            "lr": lr,
            "seconds": time.time() - t0,
        }
        if test_batches and cfg.track_test_loss:
            row["test_loss"] = _mean_loss(model, test_batches)
        if val_samples:
            val = evaluate(model, val_samples, ks=(1,), seed=cfg.seed)
            row["val_recall@1"] = val.recall[1]
            if val.recall[1] > best_rec1:
                best_rec1, best_epoch = val.recall[1], epoch
                since_improve = 0
                if run_dir:
                    save_checkpoint(model, os.path.join(run_dir, "best.pt"), epoch, row)
            else:
                since_improve += 1
                if since_improve and since_improve % cfg.lr_patience == 0:
                    lr *= 0.5
                    for g in opt.param_groups:
                        g["lr"] = lr
        history.append(row)
        log.info("epoch %d: %s", epoch, {k: v for k, v in row.items() if k != "epoch"})
        if run_dir:
            save_checkpoint(model, os.path.join(run_dir, "last.pt"), epoch, row)
            if cfg.keep_epoch_checkpoints:
                save_checkpoint(model, os.path.join(run_dir, f"epoch_{epoch:03d}.pt"), epoch, row)
            _write_history(run_dir, history)
        if cfg.max_steps and step >= cfg.max_steps:
            break
        if val_samples and since_improve >= cfg.stop_patience:
            log.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
            break
    return history


def _write_history(run_dir, history):
    keys = sorted({k for row in history for k in row})
    with open(os.path.join(run_dir, "loss_curve.csv"), "w") as f:
        f.write(",".join(keys) + "\n")
        for row in history:
            f.write(",".join(str(row.get(k, "")) for k in keys) + "\n")


def _dump_bad_batch(run_dir, batch, epoch, step):
    if not run_dir:
        return
    path = os.path.join(run_dir, "bad_batch.json")
    with open(path, "w") as f:
        json.dump(
            {
                "epoch": epoch,
                "step": step,
                "users": batch.user.tolist(),
                "targets": batch.target.tolist(),
                "cur_len": batch.cur_len.tolist(),
                "cur_poi": batch.cur_poi.tolist(),
            },
            f,
        )


def train(split, stats, poi_matrix, cat_matrix, model_cfg: ModelConfig,
          train_cfg: TrainConfig, run_dir=None, dtype=torch.float32):
    """Build the network and fit it on the split's training half."""
    torch.manual_seed(train_cfg.seed)
    model = NextPoiNet(
        split.vocab.n_users, split.vocab.n_pois, split.vocab.n_cats,
        model_cfg, stats, poi_matrix, cat_matrix, seed=train_cfg.seed, dtype=dtype,
    )
    train_samples, val_samples = build_train_samples(
        split, val_frac=train_cfg.val_frac, max_histories=train_cfg.max_histories
    )
    test_samples = build_test_samples(
        split, include_test_history=train_cfg.include_test_history,
        max_histories=train_cfg.max_histories,
    ) if train_cfg.track_test_loss else None
    history = train_model(
        model, train_samples, val_samples, train_cfg, run_dir=run_dir,
        test_samples=test_samples,
    )
    if run_dir:
        with open(os.path.join(run_dir, "train_config.json"), "w") as f:
            json.dump(
                {
                    "model": asdict(model_cfg),
                    "train": asdict(train_cfg),
                    "config_hash": config_hash({"model": asdict(model_cfg), "train": asdict(train_cfg)}),
                },
                f, indent=2, sort_keys=True,
            )
    return model, history
