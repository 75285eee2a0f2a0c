"""Shared tensor utilities: masked normalizations and recurrent runners."""

import torch


def exp_normalize(scores, mask, dim=-1):
    """Masked exp-and-normalize with max subtraction for overflow safety.

    Entries where mask is False get weight 0; a fully masked row yields all
    zeros instead of NaN.
    """
    neg_inf = torch.finfo(scores.dtype).min
    shifted = scores.masked_fill(~mask, neg_inf)
    shifted = shifted - shifted.max(dim=dim, keepdim=True).values.clamp_min(neg_inf / 2)
    w = torch.exp(shifted) * mask.to(scores.dtype)
    denom = w.sum(dim=dim, keepdim=True)
    return w / denom.clamp_min(torch.finfo(scores.dtype).tiny)


def masked_mean(x, mask, dim):
    """Mean over dim counting only mask-true entries (zeros when none)."""
    m = mask.to(x.dtype).unsqueeze(-1)
    total = (x * m).sum(dim=dim)
    count = m.sum(dim=dim)
    return total / count.clamp_min(1.0)


def run_routed_cell(cell, x, skip, lengths):
    """Recurrent pass whose carried state may skip back several steps.

    x: (B, T, D) inputs; skip: (B, T) offsets with skip[:, t] = how many
    positions back the incoming state of step t lives (ignored at t=0, which
    always starts from zeros); lengths: (B,) valid lengths.

    With skip == 1 everywhere this is exactly a plain recurrence, sharing
    the same arithmetic step for step, which keeps the plain and skip-routed
    passes bit-for-bit comparable when their cells share parameters.

    Returns (states (B, T, K) raw per-step hidden states, h_last (B, K)).
    """
    B, T, _ = x.shape
    K = cell.hidden_size
    zeros = x.new_zeros(B, K)
    hs, cs = [], []
    batch_idx = torch.arange(B, device=x.device)
    for t in range(T):
        if t == 0:
            h_prev, c_prev = zeros, zeros
        else:
            src = (t - skip[:, t]).clamp(0, t - 1)
            h_prev = torch.stack(hs, dim=1)[batch_idx, src]
            c_prev = torch.stack(cs, dim=1)[batch_idx, src]
        h, c = cell(x[:, t], (h_prev, c_prev))
        hs.append(h)
        cs.append(c)
    states = torch.stack(hs, dim=1)
    h_last = states[batch_idx, (lengths - 1).clamp_min(0)]
    return states, h_last


def run_plain_cell(cell, x, lengths):
    """Standard left-to-right recurrence (skip offset 1 at every step)."""
    skip = torch.ones(x.shape[0], x.shape[1], dtype=torch.long, device=x.device)
    return run_routed_cell(cell, x, skip, lengths)


def run_bilstm(lstm, x, lengths):
    """Bidirectional encoder over padded sequences; masked rows come back 0.

    x: (R, N, D); lengths: (R,) possibly containing zeros for padded rows.
    Returns (R, N, 2 * hidden).
    """
    R, N, _ = x.shape
    clamped = lengths.clamp_min(1)
    packed = torch.nn.utils.rnn.pack_padded_sequence(
        x, clamped.cpu(), batch_first=True, enforce_sorted=False
    )
    out, _ = lstm(packed)
    unpacked, _ = torch.nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=N)
    mask = torch.arange(N, device=x.device)[None, :] < lengths[:, None]
    return unpacked * mask.to(x.dtype).unsqueeze(-1)
