"""Graph node embeddings from biased random walks plus skip-gram training.

Walks follow the second-order (p, q) transition rule over edge weights; the
embedding itself is skip-gram with negative sampling. All randomness flows
through a single numpy Generator so a fixed seed gives a byte-identical
matrix; the dense update math runs in torch, whose CPU gather/scatter
kernels are deterministic and considerably faster than ufunc.at.
"""

import logging

import numpy as np
import torch

log = logging.getLogger(__name__)


class _Csr:
    """Weighted adjacency in CSR form with per-row cumulative weights."""

    def __init__(self, n_nodes, edges):
        src, dst, w = [], [], []
        for (a, b), weight in sorted(edges.items()):
            src.append(a)
            dst.append(b)
            w.append(float(weight))
        src = np.asarray(src, dtype=np.int64)
        order = np.argsort(src, kind="stable")
        self.n = n_nodes
        self.indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.add.at(self.indptr, src + 1, 1)
        self.indptr = np.cumsum(self.indptr)
        self.indices = np.asarray(dst, dtype=np.int64)[order]
        self.weights = np.asarray(w, dtype=np.float64)[order]
        self.cum = np.zeros_like(self.weights)
        for i in range(n_nodes):
            s, e = self.indptr[i], self.indptr[i + 1]
            if e > s:
                self.cum[s:e] = np.cumsum(self.weights[s:e])
        self.edge_set = set(zip(src.tolist(), np.asarray(dst, dtype=np.int64).tolist()))

    def degree(self, v):
        return self.indptr[v + 1] - self.indptr[v]

    def sample_neighbor(self, v, u):
        """First-order weighted neighbor draw; u is uniform in [0, 1)."""
        s, e = self.indptr[v], self.indptr[v + 1]
        total = self.cum[e - 1]
        k = s + np.searchsorted(self.cum[s:e], u * total, side="right")
        return self.indices[min(k, e - 1)]


def _second_order_step(csr, prev, cur, p, q, rng):
    # Candidates x keep weight w when an edge x -> prev exists (distance-1
    # case of the second-order rule), w/p when returning, w/q otherwise.
    s, e = csr.indptr[cur], csr.indptr[cur + 1]
    nbrs = csr.indices[s:e]
    w = csr.weights[s:e].copy()
    for i, x in enumerate(nbrs):
        if x == prev:
            w[i] /= p
        elif (int(x), prev) not in csr.edge_set:
            w[i] /= q
    cum = np.cumsum(w)
    k = np.searchsorted(cum, rng.random() * cum[-1], side="right")
    return nbrs[min(k, len(nbrs) - 1)]


def simulate_walks(csr, walk_length, walks_per_node, p, q, rng):
    """walks_per_node truncated walks from every node, shuffled start order."""
    starts = np.tile(np.arange(csr.n, dtype=np.int64), walks_per_node)
    rng.shuffle(starts)
    unbiased = (p == 1.0 and q == 1.0)
    walks = []
    for start in starts:
        walk = [int(start)]
        while len(walk) < walk_length:
            cur = walk[-1]
            if csr.degree(cur) == 0:
                break
            if unbiased or len(walk) == 1:
                nxt = csr.sample_neighbor(cur, rng.random())
            else:
                nxt = _second_order_step(csr, walk[-2], cur, p, q, rng)
            walk.append(int(nxt))
        walks.append(np.asarray(walk, dtype=np.int64))
    return walks


def _skipgram_pairs(walks, window, rng):
    """(center, context) pairs with a word2vec-style shrunk window per center."""
    centers, contexts = [], []
    for walk in walks:
        n = len(walk)
        if n < 2:
            continue
        spans = rng.integers(1, window + 1, size=n)
        for i in range(n):
            b = spans[i]
            lo, hi = max(0, i - b), min(n, i + b + 1)
            for j in range(lo, hi):
                if j != i:
                    centers.append(walk[i])
                    contexts.append(walk[j])
    return (
        np.asarray(centers, dtype=np.int64),
        np.asarray(contexts, dtype=np.int64),
    )


def train_graph_embedding(graph, cfg, seed):
    """Embed every node of the weighted directed graph into cfg.dim floats.

    graph is a PoiGraph (n_nodes + edge dict). Deterministic for a fixed
    seed. Nodes that never occur in any training pair end up at exactly
    zero with a logged warning.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    csr = _Csr(graph.n_nodes, graph.edges)
    n, dim = graph.n_nodes, cfg.dim

    # float32 halves the memory traffic of the update steps, which dominate.
    w_in = torch.from_numpy(rng.uniform(-0.5 / dim, 0.5 / dim, size=(n, dim)).astype(np.float32))
    w_out = torch.zeros(n, dim, dtype=torch.float32)

    walks = simulate_walks(csr, cfg.walk_length, cfg.walks_per_node, cfg.return_p, cfg.inout_q, rng)
    token_counts = np.zeros(n, dtype=np.float64)
    for walk in walks:
        np.add.at(token_counts, walk, 1.0)
    noise = token_counts ** 0.75
    if noise.sum() == 0:
        noise = np.ones(n, dtype=np.float64)
    noise /= noise.sum()

    seen = np.zeros(n, dtype=bool)
    total_pairs_estimate = None
    done = 0
    for epoch in range(cfg.epochs):
        centers, contexts = _skipgram_pairs(walks, cfg.window, rng)
        if len(centers) == 0:
            break
        seen[centers] = True
        seen[contexts] = True
        if total_pairs_estimate is None:
            total_pairs_estimate = len(centers) * cfg.epochs
        order = rng.permutation(len(centers))
        centers, contexts = centers[order], contexts[order]
        for lo in range(0, len(centers), 4096):
            c = centers[lo:lo + 4096]
            o = contexts[lo:lo + 4096]
            lr = max(cfg.min_lr, cfg.lr * (1.0 - done / max(1, total_pairs_estimate)))
            negs = rng.choice(n, size=(len(c), cfg.negatives), p=noise)
            _sgns_step(w_in, w_out, c, o, negs, lr)
            done += len(c)

    result = w_in.numpy()
    silent = ~seen
    if silent.any():
        result[silent] = 0.0
        log.warning(
            "train_graph_embedding: %d of %d nodes absent from all walks; zero vectors emitted",
            int(silent.sum()),
            n,
        )
    return result


def _sgns_step(w_in, w_out, centers, contexts, negs, lr):
    dim = w_out.shape[1]
    c = torch.from_numpy(centers)
    o = torch.from_numpy(contexts)
    k = torch.from_numpy(negs)
    v_c = w_in[c]  # (B, D)
    v_o = w_out[o]  # (B, D)
    v_n = w_out[k]  # (B, K, D)

    pos_score = torch.sigmoid((v_c * v_o).sum(dim=1))  # (B,)
    neg_score = torch.sigmoid(torch.bmm(v_n, v_c.unsqueeze(2)).squeeze(2))  # (B, K)

    g_pos = (pos_score - 1.0).unsqueeze(1)  # d loss / d score
    grad_c = g_pos * v_o + torch.bmm(neg_score.unsqueeze(1), v_n).squeeze(1)

    rows = torch.cat([o, k.reshape(-1)])
    upd = torch.cat(
        [-lr * g_pos * v_c, -lr * (neg_score.unsqueeze(2) * v_c.unsqueeze(1)).reshape(-1, dim)]
    )
    w_out.index_add_(0, rows, upd)
    w_in.index_add_(0, c, -lr * grad_c)
