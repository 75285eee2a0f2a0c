"""Static context statistics computed once from the training corpus.

Everything here is derived from train trajectories only: the POI transition
graph, the geographic distance matrix, the average time-interval matrix, the
48x48 time-slot correlation matrix, the category transition matrix, and the
user check-in similarity / friend map.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .corpus import N_TIME_SLOTS
from .errors import DataError
from .geo import haversine_km


@dataclass
class PoiGraph:
    n_nodes: int
    edges: dict  # (src, dst) -> consecutive-visit count

    def edge_arrays(self):
        """Deterministically ordered (src, dst, weight) arrays."""
        if not self.edges:
            return (np.zeros(0, dtype=np.int64),) * 2 + (np.zeros(0, dtype=np.float64),)
        items = sorted(self.edges.items())
        src = np.array([k[0] for k, _ in items], dtype=np.int64)
        dst = np.array([k[1] for k, _ in items], dtype=np.int64)
        w = np.array([v for _, v in items], dtype=np.float64)
        return src, dst, w


@dataclass
class DistanceMatrix:
    dis: np.ndarray  # (L, L) kilometers
    dis_norm: np.ndarray  # (L, L) min-max scaled over off-diagonal entries
    bounds: tuple  # (min_offdiag, max_offdiag)


@dataclass
class TimeIntervalMatrix:
    tim: np.ndarray  # (L, L) hours; unobserved entries hold the observed max
    tim_norm: np.ndarray
    observed: np.ndarray  # (L, L) bool
    bounds: tuple


@dataclass
class TimeCorrelationMatrix:
    tau: np.ndarray  # (48, 48) Jaccard similarity of slot location sets
    slot_locs: list  # 48 sets of POI indices


@dataclass
class CategoryTransitionMatrix:
    counts: np.ndarray  # (C, C)
    probs: np.ndarray  # (C, C) row-stochastic


@dataclass
class SocialContext:
    freq: sp.csr_matrix  # (U, L) training visit counts
    sim: np.ndarray  # (U, U) cosine similarities, or None above the density cap
    friend: np.ndarray  # (U,) most similar other user

    def similarity_row(self, u):
        if self.sim is not None:
            return self.sim[u]
        return _cosine_rows(self.freq, u)


@dataclass
class ContextStats:
    graph: PoiGraph
    dist: DistanceMatrix
    tint: TimeIntervalMatrix
    tcorr: TimeCorrelationMatrix
    cats: CategoryTransitionMatrix
    social: SocialContext
    config: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _consecutive_pairs(trajectories):
    for t in trajectories:
        for a, b in zip(t.checkins, t.checkins[1:]):
            yield a, b


def build_poi_graph(train, n_pois):
    """Directed graph weighted by within-trajectory consecutive visit counts."""
    train = list(train)
    if not train:
        raise DataError("build_poi_graph: empty training set")
    edges = {}
    for a, b in _consecutive_pairs(train):
        key = (a.poi, b.poi)
        edges[key] = edges.get(key, 0) + 1
    return PoiGraph(n_nodes=n_pois, edges=edges)


def _minmax(values):
    lo, hi = float(values.min()), float(values.max())
    return lo, hi


def build_distance_matrix(coords, dtype=np.float64, block=2048):
    """Haversine distances plus an off-diagonal min-max scaling to [0, 1].

    Computed in float64 row blocks and stored as dtype, so |L| in the tens
    of thousands stays within a few GB instead of several float64
    temporaries of the full matrix.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2 or not np.isfinite(coords).all():
        raise DataError("build_distance_matrix: every POI needs finite coordinates")
    n = len(coords)
    lat = coords[:, 0]
    lon = coords[:, 1]
    dis = np.empty((n, n), dtype=dtype)
    for lo_i in range(0, n, block):
        hi_i = min(lo_i + block, n)
        dis[lo_i:hi_i] = haversine_km(
            lat[lo_i:hi_i, None], lon[lo_i:hi_i, None], lat[None, :], lon[None, :]
        )

    # Off-diagonal bounds without materializing an (n, n) mask.
    if n > 1:
        np.fill_diagonal(dis, np.inf)
        lo = float(dis.min())
        np.fill_diagonal(dis, -np.inf)
        hi = float(dis.max())
        np.fill_diagonal(dis, 0.0)
    else:
        lo, hi = 0.0, 0.0
    dis_norm = np.zeros((n, n), dtype=dtype)
    if hi > lo:
        np.subtract(dis, dtype(lo), out=dis_norm)
        dis_norm /= dtype(hi - lo)
        np.fill_diagonal(dis_norm, 0.0)
        np.clip(dis_norm, 0.0, 1.0, out=dis_norm)  # float32 rounding guard
    return DistanceMatrix(dis=dis, dis_norm=dis_norm, bounds=(lo, hi))


def build_time_interval_matrix(train, n_pois, dtype=np.float64):
    """Mean hours between observed consecutive transitions l_i -> l_j.

    Unobserved pairs receive the maximum observed interval so that skipping
    across a never-seen transition is never rewarded; min-max scaling runs
    over observed entries and collapses to all zeros when degenerate.
    """
    train = list(train)
    if not train:
        raise DataError("build_time_interval_matrix: empty training set")
    total = np.zeros((n_pois, n_pois), dtype=np.float64)
    count = np.zeros((n_pois, n_pois), dtype=np.int32)
    for a, b in _consecutive_pairs(train):
        total[a.poi, b.poi] += (b.epoch_utc - a.epoch_utc) / 3600.0
        count[a.poi, b.poi] += 1
    observed = count > 0
    np.divide(total, count, out=total, where=observed)
    tim = total.astype(dtype, copy=False)
    max_obs = float(tim[observed].max()) if observed.any() else 0.0
    tim[~observed] = max_obs
    lo, hi = (_minmax(tim[observed]) if observed.any() else (0.0, 0.0))
    tim_norm = np.zeros_like(tim)
    if hi > lo:
        tim_norm = ((tim - dtype(lo)) / dtype(hi - lo)).astype(dtype, copy=False)
        np.clip(tim_norm, 0.0, 1.0, out=tim_norm)  # float32 rounding guard
    return TimeIntervalMatrix(tim=tim, tim_norm=tim_norm, observed=observed, bounds=(lo, hi))


def build_time_correlation(train):
    """48x48 Jaccard similarity between per-slot POI sets; empty/empty -> 0."""
    slot_locs = [set() for _ in range(N_TIME_SLOTS)]
    for t in train:
        for q in t.checkins:
            slot_locs[q.time_slot].add(q.poi)
    tau = np.zeros((N_TIME_SLOTS, N_TIME_SLOTS), dtype=np.float64)
    for i in range(N_TIME_SLOTS):
        for j in range(i, N_TIME_SLOTS):
            union = len(slot_locs[i] | slot_locs[j])
            if union:
                tau[i, j] = tau[j, i] = len(slot_locs[i] & slot_locs[j]) / union
    return TimeCorrelationMatrix(tau=tau, slot_locs=slot_locs)


def build_category_transitions(train, n_cats, norm="softmax"):
    """Consecutive-category counts normalized per source row.

    norm="softmax" exponentiates raw counts (an all-zero row becomes
    uniform); norm="ratio" divides by the row sum with a uniform fallback.
    """
    counts = np.zeros((n_cats, n_cats), dtype=np.float64)
    for a, b in _consecutive_pairs(train):
        counts[a.category, b.category] += 1
    if norm == "softmax":
        z = counts - counts.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
    elif norm == "ratio":
        rows = counts.sum(axis=1, keepdims=True)
        probs = np.where(rows > 0, counts / np.maximum(rows, 1.0), 1.0 / n_cats)
    else:
        raise ValueError(f"unknown category norm {norm!r}")
    return CategoryTransitionMatrix(counts=counts, probs=probs)


def _cosine_rows(freq, u):
    norms = np.sqrt(np.asarray(freq.multiply(freq).sum(axis=1))).ravel()
    row = freq.getrow(u).toarray().ravel()
    dots = freq @ row
    denom = norms * max(norms[u], 1e-30)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, dots / denom, 0.0)
    return out


def build_social_context(train, n_users, n_pois, max_dense_users=10000):
    """Cosine similarity of training visit-frequency vectors plus friend map.

    The dense (U, U) matrix is materialized only below max_dense_users; above
    it rows are computed on demand. friend[u] is the most similar other user,
    ties broken toward the smaller index.
    """
    if n_users < 2:
        raise DataError("build_social_context: need at least 2 users")
    rows, cols = [], []
    for t in train:
        for q in t.checkins:
            rows.append(q.user)
            cols.append(q.poi)
    data = np.ones(len(rows), dtype=np.float64)
    freq = sp.csr_matrix((data, (rows, cols)), shape=(n_users, n_pois))
    freq.sum_duplicates()

    norms = np.sqrt(np.asarray(freq.multiply(freq).sum(axis=1))).ravel()
    normed = sp.diags(np.where(norms > 0, 1.0 / np.maximum(norms, 1e-30), 0.0)) @ freq

    sim = None
    friend = np.zeros(n_users, dtype=np.int64)
    if n_users <= max_dense_users:
        sim = np.asarray((normed @ normed.T).todense())
        masked = sim.copy()
        np.fill_diagonal(masked, -np.inf)
        friend = masked.argmax(axis=1)
    else:
        for u in range(n_users):
            row = np.asarray((normed @ normed.getrow(u).T).todense()).ravel()
            row[u] = -np.inf
            friend[u] = int(row.argmax())
    # A user who is everyone's argmin tie can still map to itself only when
    # n_users == 1, which is excluded above.
    return SocialContext(freq=freq, sim=sim, friend=friend)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def epsilon_cost(d_norm, t_norm, cat_p, weights):
    """Skip cost combining distance, time-interval and category transition.

    cost = W1*sigma(d) + W2*sigma(t) + W3*(1 - sigma(c)); lower is a more
    attractive skip edge. Differentiable in all weights and inputs.
    """
    w1, w2, w3 = weights
    return w1 * sigmoid(d_norm) + w2 * sigmoid(t_norm) + w3 * (1.0 - sigmoid(cat_p))


def build_context(split, cfg=None):
    """Assemble every context structure from the split's training half."""
    from .config import ContextConfig

    cfg = cfg or ContextConfig()
    if cfg.matrix_dtype not in ("float64", "float32"):
        raise ValueError(f"unknown matrix_dtype {cfg.matrix_dtype!r}")
    dtype = np.dtype(cfg.matrix_dtype).type
    train = list(split.all_train_trajectories())
    vocab = split.vocab
    return ContextStats(
        graph=build_poi_graph(train, vocab.n_pois),
        dist=build_distance_matrix(vocab.poi_coords, dtype=dtype),
        tint=build_time_interval_matrix(train, vocab.n_pois, dtype=dtype),
        tcorr=build_time_correlation(train),
        cats=build_category_transitions(train, vocab.n_cats, norm=cfg.category_norm),
        social=build_social_context(train, vocab.n_users, vocab.n_pois, cfg.max_dense_users),
        config=vars(cfg).copy(),
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_context(stats, out_dir):
    """Typed binary arrays plus a JSON manifest under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    from .config import config_hash

    src, dst, w = stats.graph.edge_arrays()
    arrays = {
        "graph_src": src,
        "graph_dst": dst,
        "graph_weight": w,
        "dis": stats.dist.dis,
        "dis_norm": stats.dist.dis_norm,
        "tim": stats.tint.tim,
        "tim_norm": stats.tint.tim_norm,
        "tim_observed": stats.tint.observed,
        "tau": stats.tcorr.tau,
        "cat_counts": stats.cats.counts,
        "cat_probs": stats.cats.probs,
        "friend": stats.social.friend,
        "freq_data": stats.social.freq.data,
        "freq_indices": stats.social.freq.indices,
        "freq_indptr": stats.social.freq.indptr,
    }
    if stats.social.sim is not None:
        arrays["sim"] = stats.social.sim
    for name, arr in arrays.items():
        np.save(os.path.join(out_dir, name + ".npy"), arr)
    manifest = {
        "n_nodes": stats.graph.n_nodes,
        "n_users": stats.social.freq.shape[0],
        "n_pois": stats.social.freq.shape[1],
        "dist_bounds": list(stats.dist.bounds),
        "tim_bounds": list(stats.tint.bounds),
        "slot_locs": [sorted(s) for s in stats.tcorr.slot_locs],
        "dense_sim": stats.social.sim is not None,
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "config": stats.config,
        "config_hash": config_hash(stats.config),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_context(context_dir):
    try:
        with open(os.path.join(context_dir, "manifest.json")) as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot load context from {context_dir}: {e}") from e

    def arr(name):
        return np.load(os.path.join(context_dir, name + ".npy"))

    src, dst, w = arr("graph_src"), arr("graph_dst"), arr("graph_weight")
    graph = PoiGraph(
        n_nodes=manifest["n_nodes"],
        edges={(int(s), int(d)): float(x) for s, d, x in zip(src, dst, w)},
    )
    n_users, n_pois = manifest["n_users"], manifest["n_pois"]
    freq = sp.csr_matrix(
        (arr("freq_data"), arr("freq_indices"), arr("freq_indptr")), shape=(n_users, n_pois)
    )
    return ContextStats(
        graph=graph,
        dist=DistanceMatrix(arr("dis"), arr("dis_norm"), tuple(manifest["dist_bounds"])),
        tint=TimeIntervalMatrix(
            arr("tim"), arr("tim_norm"), arr("tim_observed"), tuple(manifest["tim_bounds"])
        ),
        tcorr=TimeCorrelationMatrix(
            tau=arr("tau"), slot_locs=[set(s) for s in manifest["slot_locs"]]
        ),
        cats=CategoryTransitionMatrix(arr("cat_counts"), arr("cat_probs")),
        social=SocialContext(freq=freq, sim=arr("sim") if manifest["dense_sim"] else None, friend=arr("friend")),
        config=manifest["config"],
    )
