"""Check-in corpus preprocessing.

Parses raw check-in logs (Foursquare TSV layout), filters rare POIs and
inactive users, segments per-user records into 24-hour sessions, and builds
a chronological train/test split with dense index vocabularies.
"""

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import DataError
from .geo import max_pairwise_km

log = logging.getLogger(__name__)

UTC_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"

# Hour buckets: 0-23 weekday hours, 24-47 weekend hours.
N_TIME_SLOTS = 48
N_WEEKDAYS = 7


@dataclass(frozen=True)
class RawCheckin:
    """One well-formed row of the raw log, before any indexing."""

    user_id: str
    venue_id: str
    category_id: str
    category_name: str
    lat: float
    lon: float
    tz_offset_min: int
    utc_time: datetime


@dataclass(frozen=True)
class Checkin:
    """One visit after indexing: dense ids plus local-time derived fields."""

    user: int
    poi: int
    category: int
    time_slot: int
    weekday: int
    epoch_utc: float
    epoch_local: float
    lat: float
    lon: float


@dataclass
class Trajectory:
    user: int
    traj_id: int
    checkins: list  # list[Checkin], strictly time-ordered


@dataclass
class Session:
    """A segmented 24-hour group of raw check-ins for one user (pre-vocab)."""

    user_id: str
    checkins: list  # list[RawCheckin], time-ordered


@dataclass
class Vocab:
    """Dense index maps built over the full filtered corpus."""

    users: dict
    pois: dict
    cats: dict
    poi_coords: np.ndarray  # (|L|, 2) [lat, lon], first-seen coordinates
    poi_category: np.ndarray  # (|L|,) category index of each POI
    cat_names: list

    @property
    def n_users(self):
        return len(self.users)

    @property
    def n_pois(self):
        return len(self.pois)

    @property
    def n_cats(self):
        return len(self.cats)


@dataclass
class CorpusStats:
    users: int
    pois: int
    categories: int
    checkins: int
    trajectories: int


@dataclass
class CorpusSplit:
    train: dict  # user index -> ordered list[Trajectory]
    test: dict  # user index -> ordered list[Trajectory]
    vocab: Vocab
    stats: CorpusStats
    config: dict = field(default_factory=dict)

    def all_train_trajectories(self):
        for u in sorted(self.train):
            yield from self.train[u]

    def all_test_trajectories(self):
        for u in sorted(self.test):
            yield from self.test[u]


def parse_dataset(path, tz_mode="local"):
    """Read a Foursquare-layout TSV into RawCheckin rows.

    Columns: user, venue, category id, category name, lat, lon,
    tz offset minutes, UTC time string. Malformed rows are skipped and
    counted. Returns (rows, skipped_count). With tz_mode="utc" the row
    timezone offset is ignored (treated as 0).
    """
    if tz_mode not in ("local", "utc"):
        raise ValueError(f"tz_mode must be 'local' or 'utc', got {tz_mode!r}")
    rows = []
    skipped = 0
    try:
        handle = open(path, "r", encoding="latin-1", newline="")
    except OSError as e:
        raise DataError(f"cannot read check-in file {path}: {e}") from e
    with handle:
        reader = csv.reader(handle, delimiter="\t", quoting=csv.QUOTE_NONE)
        for fields in reader:
            if len(fields) != 8:
                skipped += 1
                continue
            try:
                lat = float(fields[4])
                lon = float(fields[5])
                tz = int(fields[6]) if tz_mode == "local" else 0
                when = datetime.strptime(fields[7].strip(), UTC_TIME_FORMAT)
            except (ValueError, OverflowError):
                skipped += 1
                continue
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                skipped += 1
                continue
            rows.append(
                RawCheckin(
                    user_id=fields[0],
                    venue_id=fields[1],
                    category_id=fields[2],
                    category_name=fields[3],
                    lat=lat,
                    lon=lon,
                    tz_offset_min=tz,
                    utc_time=when.astimezone(timezone.utc),
                )
            )
    if skipped:
        log.warning("parse_dataset: skipped %d malformed rows in %s", skipped, path)
    return rows, skipped


def filter_rare_pois(checkins, min_visits=10):
    """Drop every check-in at a POI visited fewer than min_visits times.

    Applied once over the given list; no fixpoint iteration.
    """
    if min_visits < 1:
        raise ValueError("min_visits must be >= 1")
    counts = {}
    for q in checkins:
        counts[q.venue_id] = counts.get(q.venue_id, 0) + 1
    return [q for q in checkins if counts[q.venue_id] >= min_visits]


def segment_trajectories(checkins, window_hours=24, min_len=3, window_mode="anchor"):
    """Group each user's time-ordered check-ins into window_hours sessions.

    window_mode="anchor" (default): a check-in joins the open session iff
    its gap from the session's FIRST check-in is under window_hours.
    window_mode="gap": the gap is measured from the PREVIOUS check-in
    instead (a rolling session window). Sessions shorter than min_len are
    dropped. Ties in timestamps keep stable input order.
    """
    if window_mode not in ("anchor", "gap"):
        raise ValueError(f"window_mode must be 'anchor' or 'gap', got {window_mode!r}")
    per_user = {}
    order = []
    for i, q in enumerate(checkins):
        if q.user_id not in per_user:
            per_user[q.user_id] = []
            order.append(q.user_id)
        per_user[q.user_id].append((q.utc_time.timestamp(), i, q))

    window_s = window_hours * 3600.0
    sessions = []
    for uid in order:
        entries = sorted(per_user[uid], key=lambda e: (e[0], e[1]))
        current = []
        anchor = None
        for ts, _, q in entries:
            if anchor is None or ts - anchor >= window_s:
                if len(current) >= min_len:
                    sessions.append(Session(uid, current))
                current = [q]
                anchor = ts
            else:
                current.append(q)
                if window_mode == "gap":
                    anchor = ts
        if len(current) >= min_len:
            sessions.append(Session(uid, current))
    return sessions


def filter_users(sessions, min_trajs=5):
    """Keep only sessions of users owning at least min_trajs sessions."""
    counts = {}
    for s in sessions:
        counts[s.user_id] = counts.get(s.user_id, 0) + 1
    return [s for s in sessions if counts[s.user_id] >= min_trajs]


def time_slot_of(local_time):
    """Map a local timestamp to its hour bucket: weekday h -> h, weekend h -> 24+h."""
    h = local_time.hour
    return h + 24 if local_time.weekday() >= 5 else h


def _to_checkin(q, vocab_users, vocab_pois, vocab_cats):
    local = q.utc_time + timedelta(minutes=q.tz_offset_min)
    return Checkin(
        user=vocab_users[q.user_id],
        poi=vocab_pois[q.venue_id],
        category=vocab_cats[q.category_id],
        time_slot=time_slot_of(local),
        weekday=local.weekday(),
        epoch_utc=q.utc_time.timestamp(),
        epoch_local=q.utc_time.timestamp() + 60.0 * q.tz_offset_min,
        lat=q.lat,
        lon=q.lon,
    )


def split_corpus(sessions, train_frac=0.8):
    """Build the chronological per-user train/test split and vocabularies.

    Per user the first ceil(train_frac * n) sessions are train, the rest
    test, always keeping at least one test session. The vocab covers the
    full filtered corpus so test-only POIs stay representable.
    """
    if not sessions:
        raise DataError("split_corpus: no sessions survive filtering")
    users, pois, cats = {}, {}, {}
    poi_coords, poi_cat, cat_names = [], [], []
    for s in sessions:
        if s.user_id not in users:
            users[s.user_id] = len(users)
        for q in s.checkins:
            if q.category_id not in cats:
                cats[q.category_id] = len(cats)
                cat_names.append(q.category_name)
            if q.venue_id not in pois:
                pois[q.venue_id] = len(pois)
                poi_coords.append((q.lat, q.lon))
                poi_cat.append(cats[q.category_id])

    vocab = Vocab(
        users=users,
        pois=pois,
        cats=cats,
        poi_coords=np.asarray(poi_coords, dtype=np.float64),
        poi_category=np.asarray(poi_cat, dtype=np.int64),
        cat_names=cat_names,
    )

    by_user = {}
    for s in sessions:
        by_user.setdefault(users[s.user_id], []).append(s)

    train, test = {}, {}
    traj_id = 0
    n_checkins = 0
    n_trajs = 0
    for u in sorted(by_user):
        user_sessions = by_user[u]
        n = len(user_sessions)
        n_train = min(math.ceil(train_frac * n), n - 1)
        train[u], test[u] = [], []
        for k, s in enumerate(user_sessions):
            traj = Trajectory(
                user=u,
                traj_id=traj_id,
                checkins=[_to_checkin(q, users, pois, cats) for q in s.checkins],
            )
            traj_id += 1
            n_trajs += 1
            n_checkins += len(traj.checkins)
            (train[u] if k < n_train else test[u]).append(traj)

    stats = CorpusStats(
        users=len(users),
        pois=len(pois),
        categories=len(cats),
        checkins=n_checkins,
        trajectories=n_trajs,
    )
    return CorpusSplit(train=train, test=test, vocab=vocab, stats=stats)


def preprocess(
    path,
    min_poi_visits=10,
    min_traj_len=3,
    min_user_trajs=5,
    window_hours=24,
    train_frac=0.8,
    tz_mode="local",
    window_mode="anchor",
    filter_order="pois_first",
):
    """Full pipeline: parse -> rare-POI filter -> segment -> user filter -> split.

    filter_order="pois_first" counts POI visits over all parsed rows (the
    default protocol). "users_first" instead counts them only over rows of
    users who survive the trajectory-count filter, then re-segments; every
    filter still runs exactly once, with no alternating fixpoint.
    """
    if filter_order not in ("pois_first", "users_first"):
        raise ValueError(f"unknown filter_order {filter_order!r}")
    rows, skipped = parse_dataset(path, tz_mode=tz_mode)

    def segment_and_filter(rs):
        sessions = segment_trajectories(
            rs, window_hours=window_hours, min_len=min_traj_len, window_mode=window_mode
        )
        return filter_users(sessions, min_trajs=min_user_trajs)

    if filter_order == "users_first":
        surviving = {s.user_id for s in segment_and_filter(rows)}
        rows = [r for r in rows if r.user_id in surviving]
    rows = filter_rare_pois(rows, min_visits=min_poi_visits)
    sessions = segment_and_filter(rows)
    split = split_corpus(sessions, train_frac=train_frac)
    split.config = {
        "min_poi_visits": min_poi_visits,
        "min_traj_len": min_traj_len,
        "min_user_trajs": min_user_trajs,
        "window_hours": window_hours,
        "train_frac": train_frac,
        "tz_mode": tz_mode,
        "window_mode": window_mode,
        "filter_order": filter_order,
        "skipped_rows": skipped,
    }
    return split


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def corpus_report(split, out_dir=None, radius_bucket_km=5.0):
    """Activity-radius and trajectory-start-hour distributions.

    Radius of a user = largest haversine distance between any two of their
    check-ins. Emits plot-ready CSVs when out_dir is given and returns the
    tabulated values.
    """
    radii = {}
    hour_counts = np.zeros(24, dtype=np.int64)
    for trajs in list(split.train.values()) + list(split.test.values()):
        for t in trajs:
            coords = [(q.lat, q.lon) for q in t.checkins]
            u = t.user
            radii.setdefault(u, []).extend(coords)
            first_local = datetime.fromtimestamp(t.checkins[0].epoch_local, tz=timezone.utc)
            hour_counts[first_local.hour] += 1

    user_radius = {u: max_pairwise_km(c) for u, c in radii.items()}
    max_r = max(user_radius.values()) if user_radius else 0.0
    n_buckets = max(1, int(math.floor(max_r / radius_bucket_km)) + 1)
    bucket_counts = np.zeros(n_buckets, dtype=np.int64)
    for r in user_radius.values():
        bucket_counts[min(int(r // radius_bucket_km), n_buckets - 1)] += 1

    n_users = max(1, len(user_radius))
    n_trajs = max(1, int(hour_counts.sum()))
    report = {
        "user_max_radius_km": user_radius,
        "radius_bucket_km": radius_bucket_km,
        "radius_hist": bucket_counts.tolist(),
        "radius_hist_prop": (bucket_counts / n_users).tolist(),
        "hour_counts": hour_counts.tolist(),
        "hour_prop": (hour_counts / n_trajs).tolist(),
    }

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "activity_radius.csv"), "w") as f:
            f.write("bucket_low_km,bucket_high_km,users,proportion\n")
            for i, c in enumerate(bucket_counts):
                f.write(
                    f"{i * radius_bucket_km},{(i + 1) * radius_bucket_km},{c},{c / n_users:.6f}\n"
                )
        with open(os.path.join(out_dir, "trajectories_per_hour.csv"), "w") as f:
            f.write("hour,trajectories,proportion\n")
            for h, c in enumerate(hour_counts):
                f.write(f"{h},{c},{c / n_trajs:.6f}\n")
    return report


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _traj_to_row(t):
    return {
        "user": t.user,
        "traj_id": t.traj_id,
        "checkins": [
            [q.poi, q.category, q.time_slot, q.weekday, q.epoch_utc, q.epoch_local, q.lat, q.lon]
            for q in t.checkins
        ],
    }


def _traj_from_row(row):
    return Trajectory(
        user=row["user"],
        traj_id=row["traj_id"],
        checkins=[
            Checkin(row["user"], int(c[0]), int(c[1]), int(c[2]), int(c[3]), c[4], c[5], c[6], c[7])
            for c in row["checkins"]
        ],
    )


def save_corpus(split, out_dir):
    """Write corpus.meta, vocab.json and train/test jsonl under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    from .config import config_hash

    meta = {
        "stats": vars(split.stats),
        "config": split.config,
        "config_hash": config_hash(split.config),
        "format_version": 1,
    }
    with open(os.path.join(out_dir, "corpus.meta"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    vocab = split.vocab
    with open(os.path.join(out_dir, "vocab.json"), "w") as f:
        json.dump(
            {
                "users": vocab.users,
                "pois": vocab.pois,
                "cats": vocab.cats,
                "poi_coords": vocab.poi_coords.tolist(),
                "poi_category": vocab.poi_category.tolist(),
                "cat_names": vocab.cat_names,
            },
            f,
        )
    for name, table in (("train", split.train), ("test", split.test)):
        with open(os.path.join(out_dir, f"{name}.jsonl"), "w") as f:
            for u in sorted(table):
                for t in table[u]:
                    f.write(json.dumps(_traj_to_row(t)) + "\n")


def load_corpus(corpus_dir):
    try:
        with open(os.path.join(corpus_dir, "corpus.meta")) as f:
            meta = json.load(f)
        with open(os.path.join(corpus_dir, "vocab.json")) as f:
            v = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot load corpus from {corpus_dir}: {e}") from e
    vocab = Vocab(
        users=v["users"],
        pois=v["pois"],
        cats=v["cats"],
        poi_coords=np.asarray(v["poi_coords"], dtype=np.float64),
        poi_category=np.asarray(v["poi_category"], dtype=np.int64),
        cat_names=v["cat_names"],
    )
    split = CorpusSplit(train={}, test={}, vocab=vocab, stats=CorpusStats(**meta["stats"]), config=meta["config"])
    for name, table in (("train", split.train), ("test", split.test)):
        with open(os.path.join(corpus_dir, f"{name}.jsonl")) as f:
            for line in f:
                t = _traj_from_row(json.loads(line))
                table.setdefault(t.user, []).append(t)
    # Users whose sessions all landed in train still need an (empty) test slot.
    for u in split.train:
        split.test.setdefault(u, [])
    return split
