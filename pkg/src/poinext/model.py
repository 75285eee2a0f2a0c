"""Full next-POI network: embeddings, long/short-term encoders, prediction.

The network owns the frozen context matrices as non-persistent buffers (they
are rebuilt from the context directory on load) and every trainable
parameter of both encoders plus the prediction and auxiliary heads.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig
from .embeddings import EmbeddingTables
from .layers import masked_mean, run_plain_cell
from .long_term import LongTermEncoder
from .short_term import ShortTermEncoder


@dataclass
class ModelOutput:
    probs: torch.Tensor  # (B, L)
    rep: torch.Tensor  # (B, rep_dim) pre-softmax concatenation
    aux_pred: torch.Tensor  # (B, D_l) projected hidden for the auxiliary loss
    skip_cost: torch.Tensor  # scalar, mean cost of the selected skip edges
    y_long: torch.Tensor
    y_short: torch.Tensor
    internals: dict


class NextPoiNet(nn.Module):
    def __init__(self, n_users, n_pois, n_cats, cfg: ModelConfig, stats, poi_matrix,
                 cat_matrix, seed=42, dtype=torch.float32):
        super().__init__()
        cfg.validate()
        if poi_matrix.shape != (n_pois, cfg.dim_poi) or cat_matrix.shape != (n_cats, cfg.dim_cat):
            raise ValueError("embedding matrices do not match vocab sizes / configured dims")
        torch.manual_seed(seed)
        self.cfg = cfg
        self.seed = seed
        self.n_users, self.n_pois, self.n_cats = n_users, n_pois, n_cats

        self.tables = EmbeddingTables(
            poi_matrix, cat_matrix, n_users,
            dim_user=cfg.dim_user, dim_time=cfg.dim_time, dim_week=cfg.dim_week, seed=seed,
        )
        in_dim = cfg.checkin_dim
        self.current_cell = nn.LSTMCell(in_dim, cfg.hidden)
        self.long_term = LongTermEncoder(
            in_dim, cfg.hidden, cfg.dim_user,
            use_social=cfg.use_social, use_self_att=cfg.use_self_att, use_st_att=cfg.use_st_att,
        ) if cfg.use_long else None
        self.short_term = ShortTermEncoder(
            in_dim, cfg.hidden, kappa_max=cfg.kappa_max, epsilon_mode=cfg.epsilon_mode,
            use_plain=cfg.use_plain_cell, use_dilated=cfg.use_dilated_cell,
            category_in_epsilon=cfg.category_in_epsilon,
        ) if cfg.use_short else None

        rep_dim = cfg.hidden * (int(cfg.use_long) + int(cfg.use_short)) + cfg.dim_user
        self.head = nn.Linear(rep_dim, n_pois, bias=False)
        self.aux_proj = nn.Linear(rep_dim, cfg.dim_poi)

        self.attach_context(stats)
        self.to(dtype)

    def attach_context(self, stats):
        """Register the static context matrices as non-persistent buffers."""
        dt = self.tables.poi_table.dtype if hasattr(self, "tables") else torch.float32
        pairs = {
            "dis_km": stats.dist.dis,
            "dis_norm": stats.dist.dis_norm,
            "tim_norm": stats.tint.tim_norm,
            "tau": stats.tcorr.tau,
            "cat_probs": stats.cats.probs,
        }
        for name, arr in pairs.items():
            tensor = torch.as_tensor(np.asarray(arr), dtype=dt)
            if hasattr(self, name):
                setattr(self, name, tensor)
            else:
                self.register_buffer(name, tensor, persistent=False)
        friend = torch.as_tensor(stats.social.friend, dtype=torch.long)
        if hasattr(self, "friend"):
            self.friend = friend
        else:
            self.register_buffer("friend", friend, persistent=False)

    def _dtype(self):
        return self.tables.poi_table.dtype

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def skip_candidate_features(self, poi, cat, cur_mask):
        """Gather (B, T, kappa_max) skip-edge features for the current prefix."""
        B, T = poi.shape
        kmax = self.cfg.kappa_max
        d = poi.new_zeros(B, T, kmax, dtype=self._dtype())
        tn = torch.zeros_like(d)
        cp = torch.zeros_like(d)
        valid = torch.zeros(B, T, kmax, dtype=torch.bool, device=poi.device)
        for k in range(1, kmax + 1):
            if k >= T:
                break
            src_poi, dst_poi = poi[:, :-k], poi[:, k:]
            src_cat, dst_cat = cat[:, :-k], cat[:, k:]
            d[:, k:, k - 1] = self.dis_norm[src_poi, dst_poi]
            tn[:, k:, k - 1] = self.tim_norm[src_poi, dst_poi]
            cp[:, k:, k - 1] = self.cat_probs[src_cat, dst_cat]
            valid[:, k:, k - 1] = cur_mask[:, k:] & cur_mask[:, :-k]
        return d, tn, cp, valid

    def forward(self, batch):
        cfg = self.cfg
        cur_mask = batch.cur_mask()
        lengths = batch.cur_len
        e_cur = self.tables.checkin_vectors(
            batch.cur_poi, batch.cur_cat, batch.cur_week, batch.cur_slot
        )
        states, h_last = run_plain_cell(self.current_cell, e_cur, lengths)
        h_cur = states * cur_mask.to(e_cur.dtype).unsqueeze(-1)
        s_n = masked_mean(h_cur, cur_mask, dim=1)  # (B, K)

        user_vec = self.tables.user_vectors(batch.user)
        batch_idx = torch.arange(len(lengths), device=lengths.device)
        internals = {}

        parts = []
        y_long = e_cur.new_zeros(len(lengths), cfg.hidden)
        y_short = e_cur.new_zeros(len(lengths), cfg.hidden)
        skip_cost = e_cur.new_zeros(())

        if cfg.use_long:
            ck_mask = batch.hist_ck_mask()
            traj_mask = batch.hist_mask()
            e_hist = self.tables.checkin_vectors(
                batch.hist_poi, batch.hist_cat, batch.hist_week, batch.hist_slot
            )
            query_poi = batch.cur_poi[batch_idx, lengths - 1]
            query_slot = batch.cur_slot[batch_idx, lengths - 1]
            dis_vals = self.dis_km[query_poi.unsqueeze(-1).unsqueeze(-1), batch.hist_poi]
            tau_vals = self.tau[query_slot.unsqueeze(-1).unsqueeze(-1), batch.hist_slot]
            friend_vec = self.tables.user_vectors(self.friend[batch.user])
            y_long, long_internals = self.long_term(
                e_hist, ck_mask, traj_mask, dis_vals, tau_vals, user_vec, friend_vec, s_n
            )
            internals["long"] = long_internals
            parts.append(y_long)

        if cfg.use_short:
            d, tn, cp, valid = self.skip_candidate_features(
                batch.cur_poi, batch.cur_cat, cur_mask
            )
            y_short, skip_cost, offsets = self.short_term(
                e_cur, lengths, h_last, d, tn, cp, valid
            )
            internals["skip_offsets"] = offsets
            parts.append(y_short)

        parts.append(user_vec)
        rep = torch.cat(parts, dim=-1)
        probs = torch.softmax(self.head(rep), dim=-1)
        aux_pred = self.aux_proj(rep)
        internals["s_n"] = s_n
        internals["h_last"] = h_last
        return ModelOutput(
            probs=probs, rep=rep, aux_pred=aux_pred, skip_cost=skip_cost,
            y_long=y_long, y_short=y_short, internals=internals,
        )

    # ------------------------------------------------------------------
    # Single-sample convenience
    # ------------------------------------------------------------------

    def predict_scores(self, sample):
        """Probability vector over all POIs for one prediction sample."""
        from .samples import collate

        self.eval()
        with torch.no_grad():
            out = self.forward(collate([sample]))
        return out.probs[0].cpu().numpy()


def compute_loss(out, batch, lambda_aux=0.1, epsilon_coef=0.0, poi_table=None):
    """Negative log likelihood plus the auxiliary embedding-match term.

    epsilon_coef > 0 additionally exposes the mean selected skip cost, which
    is how the cost weights receive gradient in straight-through mode.
    """
    probs_t = out.probs[torch.arange(len(batch.target)), batch.target]
    nll = -torch.log(probs_t.clamp_min(1e-12))
    loss = nll.mean()
    if lambda_aux > 0:
        target_emb = poi_table[batch.target]
        aux = ((target_emb - out.aux_pred) ** 2).sum(dim=-1)
        loss = loss + lambda_aux * aux.mean()
    if epsilon_coef > 0:
        loss = loss + epsilon_coef * out.skip_cost
    return loss
