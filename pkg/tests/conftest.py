"""Shared synthetic corpora and micro model factories."""

import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
import torch

from poinext.config import ModelConfig
from poinext.context import build_context
from poinext.corpus import Checkin, CorpusSplit, CorpusStats, Trajectory, Vocab, time_slot_of
from poinext.model import NextPoiNet

BASE_DAY = datetime(2012, 4, 3, tzinfo=timezone.utc)  # a Tuesday
UTC_FMT = "%a %b %d %H:%M:%S +0000 %Y"


def synth_tsv_rows(n_users=6, n_sessions=6, session_len=4, n_pois=10, n_cats=4):
    """Deterministic Foursquare-layout rows that survive default filtering.

    Every POI collects >= 10 visits, sessions sit 3 days apart with 1-hour
    steps inside, and each user owns n_sessions sessions of session_len.
    """
    rows = []
    for u in range(n_users):
        for s in range(n_sessions):
            day = BASE_DAY + timedelta(days=u + 3 * s)
            for i in range(session_len):
                p = (u + 2 * s + i) % n_pois
                utc = day + timedelta(hours=13 + i)  # local 9..12 with tz -240
                rows.append(
                    "\t".join(
                        [
                            f"user{u}",
                            f"poi{p}",
                            f"cat{p % n_cats}",
                            f"Category {p % n_cats}",
                            f"{40.7 + 0.01 * p:.6f}",
                            f"{-74.0 - 0.005 * p:.6f}",
                            "-240",
                            utc.strftime(UTC_FMT),
                        ]
                    )
                )
    return rows


@pytest.fixture(scope="session")
def synth_tsv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "checkins.tsv"
    path.write_text("\n".join(synth_tsv_rows()) + "\n")
    return str(path)


def make_checkin(user, poi, cat, day, hour, coords, minute=0):
    when = datetime(2012, 4, 2, tzinfo=timezone.utc) + timedelta(days=day, hours=hour, minutes=minute)
    lat, lon = coords[poi]
    return Checkin(
        user=user,
        poi=poi,
        category=cat,
        time_slot=time_slot_of(when),
        weekday=when.weekday(),
        epoch_utc=when.timestamp(),
        epoch_local=when.timestamp(),
        lat=lat,
        lon=lon,
    )


def make_split(n_users=4, n_pois=8, n_cats=3, trajs_per_user=6, traj_len=4, seed=0,
               train_frac=0.8):
    """Programmatic CorpusSplit over a grid of POIs, no file round trip."""
    rng = np.random.default_rng(seed)
    coords = np.stack(
        [40.70 + 0.01 * np.arange(n_pois), -74.0 - 0.008 * np.arange(n_pois)], axis=1
    )
    poi_cat = np.arange(n_pois) % n_cats
    vocab = Vocab(
        users={f"u{i}": i for i in range(n_users)},
        pois={f"p{i}": i for i in range(n_pois)},
        cats={f"c{i}": i for i in range(n_cats)},
        poi_coords=coords,
        poi_category=poi_cat,
        cat_names=[f"c{i}" for i in range(n_cats)],
    )
    train, test = {}, {}
    traj_id = 0
    n_checkins = 0
    for u in range(n_users):
        trajs = []
        for s in range(trajs_per_user):
            day = u + 2 * s
            length = traj_len + int(rng.integers(0, 2))
            pois = rng.integers(0, n_pois, size=length)
            cks = [
                make_checkin(u, int(p), int(poi_cat[p]), day, 8 + i, coords, minute=int(rng.integers(0, 50)))
                for i, p in enumerate(pois)
            ]
            trajs.append(Trajectory(user=u, traj_id=traj_id, checkins=cks))
            traj_id += 1
            n_checkins += length
        n_train = min(math.ceil(train_frac * len(trajs)), len(trajs) - 1)
        train[u], test[u] = trajs[:n_train], trajs[n_train:]
    stats = CorpusStats(
        users=n_users, pois=n_pois, categories=n_cats,
        checkins=n_checkins, trajectories=traj_id,
    )
    return CorpusSplit(train=train, test=test, vocab=vocab, stats=stats)


@pytest.fixture(scope="session")
def split_small():
    return make_split()


@pytest.fixture(scope="session")
def context_small(split_small):
    return build_context(split_small)


def make_overfit_split(n_trajs=20, n_pois=10):
    """One user with n_trajs memorizable trajectories plus a filler user."""
    coords = np.stack(
        [40.7 + 0.01 * np.arange(n_pois), -74.0 - 0.008 * np.arange(n_pois)], axis=1
    )
    poi_cat = np.arange(n_pois) % 3
    vocab = Vocab(
        users={"u0": 0, "u1": 1},
        pois={f"p{i}": i for i in range(n_pois)},
        cats={f"c{i}": i for i in range(3)},
        poi_coords=coords,
        poi_category=poi_cat,
        cat_names=["c0", "c1", "c2"],
    )
    patterns = [[0, 1, 2, 3], [4, 5, 6, 7]]
    train, test = {}, {}
    tid, nck = 0, 0
    trajs = []
    for t in range(n_trajs):
        pat = patterns[t % 2]
        cks = [make_checkin(0, p, int(poi_cat[p]), t, 8 + i, coords) for i, p in enumerate(pat)]
        trajs.append(Trajectory(user=0, traj_id=tid, checkins=cks))
        tid += 1
        nck += len(pat)
    train[0], test[0] = trajs[:-1], trajs[-1:]
    other = []
    for t in range(5):
        cks = [
            make_checkin(1, (t + i) % n_pois, int(poi_cat[(t + i) % n_pois]), t, 9 + i, coords)
            for i in range(3)
        ]
        other.append(Trajectory(user=1, traj_id=tid, checkins=cks))
        tid += 1
        nck += 3
    train[1], test[1] = other[:-1], other[-1:]
    return CorpusSplit(
        train=train, test=test, vocab=vocab,
        stats=CorpusStats(2, n_pois, 3, nck, tid),
    )


def make_patterned_split(n_users=6, n_pois=12, trajs_per_user=8):
    """Learnable structure: each trajectory walks (start, start+1, ...) where
    the start POI depends on the user and session parity. A model that picks
    up either the sequential chain or the per-user habit generalizes to the
    held-out sessions."""
    coords = np.stack(
        [40.7 + 0.01 * np.arange(n_pois), -74.0 - 0.008 * np.arange(n_pois)], axis=1
    )
    poi_cat = np.arange(n_pois) % 4
    vocab = Vocab(
        users={f"u{i}": i for i in range(n_users)},
        pois={f"p{i}": i for i in range(n_pois)},
        cats={f"c{i}": i for i in range(4)},
        poi_coords=coords,
        poi_category=poi_cat,
        cat_names=[f"c{i}" for i in range(4)],
    )
    train, test = {}, {}
    tid = nck = 0
    for u in range(n_users):
        trajs = []
        for s in range(trajs_per_user):
            start = (2 * u + (s % 2)) % n_pois
            pois = [(start + i) % n_pois for i in range(4)]
            cks = [
                make_checkin(u, p, int(poi_cat[p]), u + 2 * s, 8 + i, coords)
                for i, p in enumerate(pois)
            ]
            trajs.append(Trajectory(user=u, traj_id=tid, checkins=cks))
            tid += 1
            nck += 4
        train[u], test[u] = trajs[:6], trajs[6:]
    return CorpusSplit(
        train=train, test=test, vocab=vocab,
        stats=CorpusStats(n_users, n_pois, 4, nck, tid),
    )


def micro_model_config(**overrides):
    base = dict(
        hidden=8, dim_poi=8, dim_cat=4, dim_user=4, dim_time=2, dim_week=2,
        kappa_max=3, lambda_aux=0.1,
    )
    base.update(overrides)
    return ModelConfig(**base)


def make_micro_model(split, stats, cfg=None, seed=7, dtype=torch.float64):
    cfg = cfg or micro_model_config()
    rng = np.random.default_rng(seed)
    poi = rng.normal(0, 0.3, size=(split.vocab.n_pois, cfg.dim_poi))
    cat = rng.normal(0, 0.3, size=(split.vocab.n_cats, cfg.dim_cat))
    return NextPoiNet(
        split.vocab.n_users, split.vocab.n_pois, split.vocab.n_cats,
        cfg, stats, poi, cat, seed=seed, dtype=dtype,
    )
