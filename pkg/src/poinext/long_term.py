"""Long-term preference encoder.

Historical trajectories pass through a bidirectional recurrent encoder, get
reweighted by spatial / temporal affinity to the query check-in, enriched
with personalized and social attention, pooled, related to each other by
scaled dot-product self-attention, and finally aggregated against the
current trajectory through pairwise-affinity (non-local) pooling.
"""

import numpy as np
import torch
import torch.nn as nn

from .layers import exp_normalize, masked_mean, run_bilstm

MIN_DISTANCE_KM = 0.1  # exp(1/dis) clamp; repeated POIs get the max affinity


class InterTrajectoryAttention(nn.Module):
    """Single-head scaled dot-product attention across pooled trajectories."""

    def __init__(self, dim):
        super().__init__()
        self.W_q = nn.Linear(dim, dim, bias=False)
        self.W_k = nn.Linear(dim, dim, bias=False)
        self.W_v = nn.Linear(dim, dim, bias=False)
        self.scale = dim ** -0.5

    def forward(self, x, mask):
        """x: (B, H, K); mask: (B, H). Returns (output (B, H, K), weights)."""
        q, k, v = self.W_q(x), self.W_k(x), self.W_v(x)
        scores = torch.matmul(q, k.transpose(-2, -1)) * self.scale
        weights = exp_normalize(scores, mask.unsqueeze(1).expand_as(scores), dim=-1)
        return torch.matmul(weights, v), weights


class LongTermEncoder(nn.Module):
    """Maps padded history tensors plus the current summary to one vector."""

    def __init__(self, in_dim, hidden, dim_user, use_social=True, use_self_att=True,
                 use_st_att=True):
        super().__init__()
        assert hidden % 2 == 0
        self.hidden = hidden
        self.use_social = use_social
        self.use_self_att = use_self_att
        self.use_st_att = use_st_att
        self.bilstm = nn.LSTM(in_dim, hidden // 2, batch_first=True, bidirectional=True)
        self.user_proj = nn.Linear(dim_user, hidden, bias=False)
        self.attn = InterTrajectoryAttention(hidden)
        self.history_proj = nn.Linear(hidden, hidden, bias=False)

    def encode_histories(self, e_hist, ck_mask):
        """Bidirectional pass over every padded history: (B, H, N, K)."""
        B, H, N, D = e_hist.shape
        lengths = ck_mask.sum(dim=-1).reshape(B * H)
        out = run_bilstm(self.bilstm, e_hist.reshape(B * H, N, D), lengths)
        return out.reshape(B, H, N, self.hidden)

    def spatial_weights(self, dis_km, ck_mask):
        """exp(1 / clamped km distance), normalized over each history."""
        return exp_normalize(1.0 / dis_km.clamp_min(MIN_DISTANCE_KM), ck_mask, dim=-1)

    def temporal_weights(self, tau_vals, ck_mask):
        """exp(slot correlation), normalized over each history."""
        return exp_normalize(tau_vals, ck_mask, dim=-1)

    def st_enrich(self, hidden, spatial_w, temporal_w):
        """Row-wise reweighting by summed spatial + temporal weights."""
        return (spatial_w + temporal_w).unsqueeze(-1) * hidden

    def personal_social_pool(self, hidden, ck_mask, user_vec, friend_vec):
        """Attention-pooled per-history vector from user (and friend) affinity."""
        p_user = self.user_proj(user_vec)  # (B, K)
        logits_u = torch.einsum("bhnk,bk->bhn", hidden, p_user)
        gamma_u = exp_normalize(logits_u, ck_mask, dim=-1)
        pooled = torch.einsum("bhn,bhnk->bhk", gamma_u, hidden)
        gammas = {"user": gamma_u}
        if self.use_social:
            p_friend = self.user_proj(friend_vec)
            logits_f = torch.einsum("bhnk,bk->bhn", hidden, p_friend)
            gamma_f = exp_normalize(logits_f, ck_mask, dim=-1)
            pooled = pooled + torch.einsum("bhn,bhnk->bhk", gamma_f, hidden)
            gammas["friend"] = gamma_f
        return pooled, gammas

    def nonlocal_aggregate(self, s_n, context, traj_mask):
        """Affinity-weighted pooling of projected history vectors."""
        logits = torch.einsum("bk,bhk->bh", s_n, context)
        weights = exp_normalize(logits, traj_mask, dim=-1)
        return torch.einsum("bh,bhk->bk", weights, self.history_proj(context)), weights

    def forward(self, e_hist, ck_mask, traj_mask, dis_km, tau_vals, user_vec, friend_vec, s_n):
        """All stages end to end.

        e_hist: (B, H, N, D) check-in embeddings of padded histories
        ck_mask: (B, H, N) valid check-ins; traj_mask: (B, H) valid histories
        dis_km / tau_vals: (B, H, N) query-to-history distance and slot
        correlation; user_vec / friend_vec: (B, D_u); s_n: (B, K).
        Returns (long-term vector (B, K), internals dict).
        """
        hidden = self.encode_histories(e_hist, ck_mask)
        spatial_w = self.spatial_weights(dis_km, ck_mask)
        temporal_w = self.temporal_weights(tau_vals, ck_mask)
        enriched = self.st_enrich(hidden, spatial_w, temporal_w) if self.use_st_att else hidden
        pooled_uf, gammas = self.personal_social_pool(hidden, ck_mask, user_vec, friend_vec)
        combined = enriched + pooled_uf.unsqueeze(2) * ck_mask.to(hidden.dtype).unsqueeze(-1)
        pooled = masked_mean(combined, ck_mask, dim=2)  # (B, H, K)
        if self.use_self_att:
            context, attn_w = self.attn(pooled, traj_mask)
        else:
            context, attn_w = pooled, None
        y_long, affinity = self.nonlocal_aggregate(s_n, context, traj_mask)
        return y_long, {
            "hidden": hidden,
            "spatial_w": spatial_w,
            "temporal_w": temporal_w,
            "gammas": gammas,
            "pooled": pooled,
            "context": context,
            "attn_weights": attn_w,
            "affinity": affinity,
        }


# ---------------------------------------------------------------------------
# Single-sample reference forms of the weight computations
# ---------------------------------------------------------------------------

def spatial_weights(query_poi, hist_pois, dist):
    """Normalized exp(1/km) influence of each historical POI on the query."""
    d = np.maximum(dist.dis[query_poi, np.asarray(hist_pois)], MIN_DISTANCE_KM)
    w = 1.0 / d
    e = np.exp(w - w.max())
    return e / e.sum()


def temporal_weights(query_slot, hist_slots, tcorr):
    """Normalized exp(slot correlation) over the history's check-ins."""
    tau = tcorr.tau[query_slot, np.asarray(hist_slots)]
    e = np.exp(tau - tau.max())
    return e / e.sum()
