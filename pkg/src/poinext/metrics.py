"""Top-K ranking metrics and test-set evaluation."""

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .samples import make_batches


def recall_at_k(ranked, target, k):
    """1 if the target POI appears in the first k ranked entries, else 0."""
    return 1.0 if target in ranked[:k] else 0.0


def ndcg_at_k(ranked, target, k):
    """Position-discounted credit 1/log2(rank+1) within the top k."""
    for i, poi in enumerate(ranked[:k]):
        if poi == target:
            return 1.0 / math.log2(i + 2)
    return 0.0


def target_ranks(scores, targets):
    """1-based rank of each row's target under stable descending order.

    Equal scores rank by ascending index, matching a stable sort of the
    score vector.
    """
    rows = np.arange(len(targets))
    t_scores = scores[rows, targets]
    higher = (scores > t_scores[:, None]).sum(axis=1)
    idx = np.arange(scores.shape[1])[None, :]
    tied_before = ((scores == t_scores[:, None]) & (idx < np.asarray(targets)[:, None])).sum(axis=1)
    return higher + tied_before + 1


@dataclass
class EvalReport:
    recall: dict
    ndcg: dict
    n_samples: int
    ablation: str = "full"
    dataset: str = ""
    runtime_s: float = 0.0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {f"recall@{k}": v for k, v in self.recall.items()}
        d.update({f"ndcg@{k}": v for k, v in self.ndcg.items()})
        d.update(
            n_samples=self.n_samples, ablation=self.ablation, dataset=self.dataset,
            runtime_s=self.runtime_s, seed=self.seed,
        )
        d.update(self.extra)
        return d

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def evaluate(model, samples, ks=(1, 5, 10), batch_size=64, per_user=False,
             ablation="full", dataset="", seed=0):
    """Mean Recall@K / NDCG@K over every prediction sample.

    per_user=True first averages within each user, then across users.
    """
    t0 = time.time()
    ks = sorted(ks)
    model.eval()
    ranks, users = [], []
    with torch.no_grad():
        for batch in make_batches(samples, batch_size):
            out = model(batch)
            scores = out.probs.cpu().numpy()
            ranks.extend(target_ranks(scores, batch.target.numpy()).tolist())
            users.extend(batch.user.numpy().tolist())
    ranks = np.asarray(ranks, dtype=np.float64)
    users = np.asarray(users)

    def agg(values):
        if not per_user:
            return float(values.mean())
        return float(np.mean([values[users == u].mean() for u in np.unique(users)]))

    recall = {k: agg((ranks <= k).astype(np.float64)) for k in ks}
    ndcg = {
        k: agg(np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)) for k in ks
    }
    return EvalReport(
        recall=recall, ndcg=ndcg, n_samples=len(ranks), ablation=ablation,
        dataset=dataset, runtime_s=time.time() - t0, seed=seed,
    )
