"""Short-term preference encoder.

The current prefix runs through two recurrences: the plain pass (shared with
the long-term module) and a skip-routed pass whose carried state follows the
cheapest incoming edge under the distance/time/category cost. A trainable
convex fusion combines the two final states.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .context import epsilon_cost
from .layers import run_routed_cell


@dataclass
class DilatedPlan:
    """Chosen predecessor offsets for positions 1..len-1 of a prefix."""

    offsets: np.ndarray  # (len-1,) values in [1, kappa_max]
    costs: np.ndarray  # (len-1, kappa_max) candidate costs, inf where invalid


def plan_dilation(traj_prefix, stats, weights=(1 / 3, 1 / 3, 1 / 3), kappa_max=3):
    """Pick the cheapest predecessor offset for every position of a prefix.

    Candidates for position j are offsets 1..min(kappa_max, j); cost is the
    skip cost between the candidate predecessor and the position's POI.
    Ties go to the smallest offset. Independent of any trainable recurrent
    parameters.
    """
    pois = [q.poi for q in traj_prefix.checkins]
    cats = [q.category for q in traj_prefix.checkins]
    n = len(pois)
    if n < 2:
        return DilatedPlan(offsets=np.zeros(0, dtype=np.int64), costs=np.zeros((0, kappa_max)))
    costs = np.full((n - 1, kappa_max), np.inf)
    offsets = np.ones(n - 1, dtype=np.int64)
    for j in range(1, n):
        for k in range(1, min(kappa_max, j) + 1):
            a, b = j - k, j
            costs[j - 1, k - 1] = epsilon_cost(
                stats.dist.dis_norm[pois[a], pois[b]],
                stats.tint.tim_norm[pois[a], pois[b]],
                stats.cats.probs[cats[a], cats[b]],
                weights,
            )
        best = costs[j - 1, 0]
        for k in range(2, min(kappa_max, j) + 1):
            if costs[j - 1, k - 1] < best:
                best = costs[j - 1, k - 1]
                offsets[j - 1] = k
    return DilatedPlan(offsets=offsets, costs=costs)


def fuse_short_term(h_plain, h_routed, w1, w2):
    """Convex combination with normalized positive weights."""
    total = w1 + w2
    return (w1 / total) * h_plain + (w2 / total) * h_routed


class ShortTermEncoder(nn.Module):
    """Skip-routed recurrence plus adaptive fusion with the plain pass.

    The three cost weights start at 1/3 and train only in straight-through
    mode (hard selection blocks their gradient otherwise); the two fusion
    weights are stored unconstrained and pass through softplus so each
    starts at 0.5 and their sum stays positive.
    """

    def __init__(self, in_dim, hidden, kappa_max=3, epsilon_mode="hard",
                 use_plain=True, use_dilated=True, category_in_epsilon=True):
        super().__init__()
        self.kappa_max = kappa_max
        self.epsilon_mode = epsilon_mode
        self.use_plain = use_plain
        self.use_dilated = use_dilated
        self.category_in_epsilon = category_in_epsilon
        self.dilated_cell = nn.LSTMCell(in_dim, hidden) if use_dilated else None
        self.cost_weights = nn.Parameter(
            torch.full((3,), 1.0 / 3.0), requires_grad=(epsilon_mode == "straight-through")
        )
        raw = math.log(math.expm1(0.5))
        self.fusion_raw = nn.Parameter(torch.full((2,), raw))

    def fusion_weights(self):
        w = torch.nn.functional.softplus(self.fusion_raw)
        return w[0], w[1]

    def candidate_costs(self, d_norm, t_norm, cat_p, valid):
        """Skip costs for every (position, offset) candidate.

        d_norm/t_norm/cat_p/valid: (B, T, kappa_max) gathered features.
        Returns costs with invalid candidates at +inf.
        """
        w = self.cost_weights
        w3 = w[2] if self.category_in_epsilon else w[2] * 0.0
        cost = (
            w[0] * torch.sigmoid(d_norm)
            + w[1] * torch.sigmoid(t_norm)
            + w3 * (1.0 - torch.sigmoid(cat_p))
        )
        return cost.masked_fill(~valid, float("inf"))

    def choose_offsets(self, costs):
        """Per-position argmin with strict improvement, so ties keep the
        smallest offset."""
        best = costs[..., 0]
        offsets = torch.ones(costs.shape[:-1], dtype=torch.long, device=costs.device)
        for k in range(1, costs.shape[-1]):
            better = costs[..., k] < best
            best = torch.where(better, costs[..., k], best)
            offsets = torch.where(better, torch.full_like(offsets, k + 1), offsets)
        return offsets, best

    def forward(self, e_cur, lengths, h_plain, d_norm, t_norm, cat_p, valid):
        """Short-term vector for a batch of prefixes.

        e_cur: (B, T, D); lengths: (B,); h_plain: (B, K) final plain-pass
        state; remaining args are (B, T, kappa_max) candidate features.
        Returns (y_short, selected-cost mean, offsets).
        """
        selected_cost = e_cur.new_zeros(())
        offsets = None
        if self.use_dilated:
            costs = self.candidate_costs(d_norm, t_norm, cat_p, valid)
            offsets, best = self.choose_offsets(costs.detach())
            _, h_routed = run_routed_cell(self.dilated_cell, e_cur, offsets, lengths)
            pos_valid = valid.any(dim=-1)  # positions with >= 1 candidate
            if self.epsilon_mode == "straight-through" and pos_valid.any():
                chosen = torch.gather(costs, -1, (offsets - 1).unsqueeze(-1)).squeeze(-1)
                selected_cost = chosen[pos_valid].mean()
        if self.use_plain and self.use_dilated:
            w1, w2 = self.fusion_weights()
            y_short = fuse_short_term(h_plain, h_routed, w1, w2)
        elif self.use_dilated:
            y_short = h_routed
        else:
            y_short = h_plain
        return y_short, selected_cost, offsets
