"""Multi-modal check-in embedding: frozen graph vectors + trainable tables.

Each check-in embeds as [poi | category | weekday | time-slot] (570 dims at
the default sizes). POI and category vectors come from graph embeddings over
the training transition graphs and are never updated afterwards; user,
time-slot and weekday tables are trainable.
"""

import json
import os

import numpy as np
import torch
import torch.nn as nn

from .corpus import N_TIME_SLOTS, N_WEEKDAYS
from .context import PoiGraph
from .errors import DataError
from .graphembed import train_graph_embedding


def build_category_graph(train, n_cats):
    """Directed category graph mirroring the POI graph: consecutive
    within-trajectory category transitions, weighted by count."""
    edges = {}
    for t in train:
        for a, b in zip(t.checkins, t.checkins[1:]):
            key = (a.category, b.category)
            edges[key] = edges.get(key, 0) + 1
    return PoiGraph(n_nodes=n_cats, edges=edges)


def train_corpus_embeddings(split, graph, cfg, seed, cat_dim=50):
    """POI and category embedding matrices for a corpus split.

    graph is the training POI transition graph; the category graph is built
    here the same way. Returns (poi_matrix, cat_matrix).
    """
    import dataclasses

    poi = train_graph_embedding(graph, cfg, seed)
    cat_cfg = dataclasses.replace(cfg, dim=cat_dim)
    cat_graph = build_category_graph(list(split.all_train_trajectories()), split.vocab.n_cats)
    cat = train_graph_embedding(cat_graph, cat_cfg, seed + 1)
    return poi, cat


class EmbeddingTables(nn.Module):
    """Lookup tables for one check-in and the user vector.

    poi_table / cat_table are registered as buffers so no optimizer can
    touch them; user/time/week tables are parameters initialized uniformly
    in [-0.1, 0.1] under the given seed.
    """

    def __init__(self, poi_matrix, cat_matrix, n_users, dim_user=40, dim_time=10,
                 dim_week=10, seed=42, dtype=torch.float32):
        super().__init__()
        self.register_buffer("poi_table", torch.as_tensor(np.asarray(poi_matrix), dtype=dtype))
        self.register_buffer("cat_table", torch.as_tensor(np.asarray(cat_matrix), dtype=dtype))
        gen = torch.Generator().manual_seed(seed)
        self.user_table = nn.Parameter(
            torch.empty(n_users, dim_user, dtype=dtype).uniform_(-0.1, 0.1, generator=gen)
        )
        self.time_table = nn.Parameter(
            torch.empty(N_TIME_SLOTS, dim_time, dtype=dtype).uniform_(-0.1, 0.1, generator=gen)
        )
        self.week_table = nn.Parameter(
            torch.empty(N_WEEKDAYS, dim_week, dtype=dtype).uniform_(-0.1, 0.1, generator=gen)
        )

    @property
    def checkin_dim(self):
        return (
            self.poi_table.shape[1]
            + self.cat_table.shape[1]
            + self.week_table.shape[1]
            + self.time_table.shape[1]
        )

    def checkin_vectors(self, poi, cat, week, slot):
        """Concatenated [poi | cat | week | slot] vectors for index tensors
        of any common shape; output gains a trailing checkin_dim axis."""
        return torch.cat(
            [
                self.poi_table[poi],
                self.cat_table[cat],
                self.week_table[week],
                self.time_table[slot],
            ],
            dim=-1,
        )

    def user_vectors(self, users):
        return self.user_table[users]


def embed_checkin(q, tables):
    """Embedding of one corpus Checkin as a 1-D tensor."""
    idx = torch.tensor([[q.poi]], dtype=torch.long)
    cat = torch.tensor([[q.category]], dtype=torch.long)
    week = torch.tensor([[q.weekday]], dtype=torch.long)
    slot = torch.tensor([[q.time_slot]], dtype=torch.long)
    return tables.checkin_vectors(idx, cat, week, slot)[0, 0]


def embed_user(u, tables):
    """The trainable user vector; out-of-range indices fail loudly."""
    if not 0 <= u < tables.user_table.shape[0]:
        raise IndexError(f"user index {u} out of range")
    return tables.user_table[u]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_embeddings(poi_matrix, cat_matrix, out_dir, cfg, seed):
    os.makedirs(out_dir, exist_ok=True)
    from .config import config_hash

    np.save(os.path.join(out_dir, "poi.npy"), poi_matrix)
    np.save(os.path.join(out_dir, "category.npy"), cat_matrix)
    manifest = {
        "poi_shape": list(poi_matrix.shape),
        "cat_shape": list(cat_matrix.shape),
        "seed": seed,
        "config": vars(cfg).copy(),
        "config_hash": config_hash(vars(cfg)),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_embeddings(emb_dir):
    try:
        poi = np.load(os.path.join(emb_dir, "poi.npy"))
        cat = np.load(os.path.join(emb_dir, "category.npy"))
    except OSError as e:
        raise DataError(f"cannot load embeddings from {emb_dir}: {e}") from e
    return poi, cat
