"""Prediction samples and batch collation.

Every position >= 2 of a trajectory yields one sample whose prefix is the
positions before it and whose history is every trajectory of the user that
chronologically precedes the current one. A sample taken from a user's very
first trajectory gets a single pseudo-history equal to its own prefix so the
long-term path stays total.
"""

from dataclasses import dataclass

import numpy as np
import torch


def traj_arrays(traj):
    """Index arrays (poi, cat, slot, week) for one trajectory."""
    return (
        np.array([q.poi for q in traj.checkins], dtype=np.int64),
        np.array([q.category for q in traj.checkins], dtype=np.int64),
        np.array([q.time_slot for q in traj.checkins], dtype=np.int64),
        np.array([q.weekday for q in traj.checkins], dtype=np.int64),
    )


@dataclass
class PredictionSample:
    user: int
    cur: tuple  # (poi, cat, slot, week) prefix arrays
    hist: list  # list of (poi, cat, slot, week) tuples, oldest first
    target: int


def _samples_from_traj(user, arrays, history, max_histories=0):
    poi, cat, slot, week = arrays
    samples = []
    for t in range(1, len(poi)):
        prefix = (poi[:t], cat[:t], slot[:t], week[:t])
        hist = history if history else [prefix]
        if max_histories and len(hist) > max_histories:
            hist = hist[-max_histories:]
        samples.append(PredictionSample(user=user, cur=prefix, hist=hist, target=int(poi[t])))
    return samples


def build_train_samples(split, val_frac=0.1, max_histories=0):
    """(train_samples, val_samples); the last val_frac of each user's train
    trajectories feed the validation samples and never the training ones."""
    train_samples, val_samples = [], []
    for u in sorted(split.train):
        trajs = split.train[u]
        arrays = [traj_arrays(t) for t in trajs]
        n_val = max(1, int(val_frac * len(trajs))) if (val_frac > 0 and len(trajs) >= 2) else 0
        n_fit = len(trajs) - n_val
        for k in range(len(trajs)):
            history = arrays[:k]
            sink = train_samples if k < n_fit else val_samples
            sink.extend(_samples_from_traj(u, arrays[k], history, max_histories))
    return train_samples, val_samples


def build_test_samples(split, include_test_history=True, max_histories=0):
    """Histories are all chronologically earlier trajectories: the user's
    full train list plus, by default, earlier test trajectories."""
    samples = []
    for u in sorted(split.test):
        base = [traj_arrays(t) for t in split.train.get(u, [])]
        test_arrays = [traj_arrays(t) for t in split.test[u]]
        for k, arrays in enumerate(test_arrays):
            history = base + (test_arrays[:k] if include_test_history else [])
            samples.extend(_samples_from_traj(u, arrays, history, max_histories))
    return samples


@dataclass
class Batch:
    user: torch.Tensor  # (B,)
    target: torch.Tensor  # (B,)
    cur_poi: torch.Tensor  # (B, T)
    cur_cat: torch.Tensor
    cur_slot: torch.Tensor
    cur_week: torch.Tensor
    cur_len: torch.Tensor  # (B,)
    hist_poi: torch.Tensor  # (B, H, N)
    hist_cat: torch.Tensor
    hist_slot: torch.Tensor
    hist_week: torch.Tensor
    hist_len: torch.Tensor  # (B, H)

    def cur_mask(self):
        T = self.cur_poi.shape[1]
        return torch.arange(T)[None, :] < self.cur_len[:, None]

    def hist_ck_mask(self):
        N = self.hist_poi.shape[2]
        return torch.arange(N)[None, None, :] < self.hist_len[:, :, None]

    def hist_mask(self):
        return self.hist_len > 0

    def __len__(self):
        return len(self.user)


def collate(samples):
    """Pad a list of samples into one Batch of index tensors."""
    B = len(samples)
    T = max(len(s.cur[0]) for s in samples)
    H = max(len(s.hist) for s in samples)
    N = max(len(h[0]) for s in samples for h in s.hist)

    cur = np.zeros((4, B, T), dtype=np.int64)
    cur_len = np.zeros(B, dtype=np.int64)
    hist = np.zeros((4, B, H, N), dtype=np.int64)
    hist_len = np.zeros((B, H), dtype=np.int64)
    user = np.zeros(B, dtype=np.int64)
    target = np.zeros(B, dtype=np.int64)

    for i, s in enumerate(samples):
        user[i] = s.user
        target[i] = s.target
        n = len(s.cur[0])
        cur_len[i] = n
        for f in range(4):
            cur[f, i, :n] = s.cur[f]
        for j, h in enumerate(s.hist):
            m = len(h[0])
            hist_len[i, j] = m
            for f in range(4):
                hist[f, i, j, :m] = h[f]

    t = torch.from_numpy
    return Batch(
        user=t(user), target=t(target),
        cur_poi=t(cur[0]), cur_cat=t(cur[1]), cur_slot=t(cur[2]), cur_week=t(cur[3]),
        cur_len=t(cur_len),
        hist_poi=t(hist[0]), hist_cat=t(hist[1]), hist_slot=t(hist[2]), hist_week=t(hist[3]),
        hist_len=t(hist_len),
    )


def make_batches(samples, batch_size):
    """Deterministic batches bucketed by (prefix length, history count) to
    limit padding waste. Shuffle the returned list order per epoch."""
    order = sorted(
        range(len(samples)),
        key=lambda i: (len(samples[i].cur[0]), len(samples[i].hist), i),
    )
    return [
        collate([samples[i] for i in order[lo:lo + batch_size]])
        for lo in range(0, len(order), batch_size)
    ]
