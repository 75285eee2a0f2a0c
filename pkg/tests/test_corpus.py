"""Preprocessing pipeline: parsing, filtering, segmentation, splitting."""

import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from poinext.corpus import (
    RawCheckin,
    corpus_report,
    filter_rare_pois,
    filter_users,
    load_corpus,
    parse_dataset,
    preprocess,
    save_corpus,
    segment_trajectories,
    split_corpus,
    time_slot_of,
)
from poinext.errors import DataError

from conftest import BASE_DAY, UTC_FMT

def raw(user="u", poi="p", t_hours=0.0, cat="c", lat=40.7, lon=-74.0, tz=0):
    return RawCheckin(
        user_id=user, venue_id=poi, category_id=cat, category_name=cat,
        lat=lat, lon=lon, tz_offset_min=tz,
        utc_time=BASE_DAY + timedelta(hours=t_hours),
    )

# ---------------------------------------------------------------------------
# parse_dataset
# ---------------------------------------------------------------------------

def test_parse_empty_file(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    rows, skipped = parse_dataset(str(path))
    assert rows == [] and skipped == 0


def test_parse_skips_malformed_rows(tmp_path):
    good = "\t".join(
        ["u1", "v1", "c1", "Food", "40.7", "-74.0", "-240", "Tue Apr 03 18:00:09 +0000 2012"]
    )
    bad = "u2\tv2\tonly-four\tfields"
    path = tmp_path / "mixed.tsv"
    path.write_text(good + "\n" + bad + "\n")
    rows, skipped = parse_dataset(str(path))
    assert len(rows) == 1 and skipped == 1
    assert rows[0].user_id == "u1"
    assert rows[0].utc_time == datetime(2012, 4, 3, 18, 0, 9, tzinfo=timezone.utc)


def test_parse_rejects_bad_coordinates_and_times(tmp_path):
    lines = [
        "u\tv\tc\tn\t95.0\t-74.0\t0\tTue Apr 03 18:00:09 +0000 2012",  # lat out of range
        "u\tv\tc\tn\t40.0\t-74.0\t0\tnot a date",
        "u\tv\tc\tn\t40.0\t-74.0\t0\tTue Apr 03 18:00:09 +0000 2012",
    ]
    path = tmp_path / "bad.tsv"
    path.write_text("\n".join(lines) + "\n")
    rows, skipped = parse_dataset(str(path))
    assert len(rows) == 1 and skipped == 2


def test_parse_missing_file_is_fatal(tmp_path):
    with pytest.raises(DataError):
        parse_dataset(str(tmp_path / "nope.tsv"))


def test_parse_preserves_order(synth_tsv):
    rows, skipped = parse_dataset(synth_tsv)
    assert skipped == 0
    assert rows[0].user_id == "user0"
    times = [r.utc_time for r in rows if r.user_id == "user0"][:4]
    assert times == sorted(times)


def test_parse_tz_mode_utc_zeroes_offset(synth_tsv):
    rows, _ = parse_dataset(synth_tsv, tz_mode="utc")
    assert all(r.tz_offset_min == 0 for r in rows)


# ---------------------------------------------------------------------------
# filter_rare_pois
# ---------------------------------------------------------------------------

def test_filter_rare_pois_boundary():
    rows = [raw(poi="a", t_hours=i) for i in range(10)]
    assert filter_rare_pois(rows, min_visits=10) == rows


def test_filter_rare_pois_drops_below_threshold():
    rows = [raw(poi="a", t_hours=i) for i in range(9)] + [raw(poi="b", t_hours=i) for i in range(10)]
    kept = filter_rare_pois(rows, min_visits=10)
    assert {r.venue_id for r in kept} == {"b"}


# ---------------------------------------------------------------------------
# segment_trajectories
# ---------------------------------------------------------------------------

def test_segment_by_24h_window():
    rows = [raw(t_hours=h) for h in (0, 1, 2, 30, 31, 32)]
    sessions = segment_trajectories(rows)
    assert [len(s.checkins) for s in sessions] == [3, 3]


def test_segment_drops_short_sessions():
    rows = [raw(t_hours=h) for h in (0, 1)]
    assert segment_trajectories(rows) == []


def test_segment_window_anchored_at_first_checkin():
    # 0h, 23h, 23.5h are one session; 25h exceeds the anchor window even
    # though its gap from 23.5h is under 24h.
    rows = [raw(t_hours=h) for h in (0, 23, 23.5, 25, 26, 27)]
    sessions = segment_trajectories(rows)
    assert [len(s.checkins) for s in sessions] == [3, 3]


def test_segment_gap_mode_rolls_the_window():
    # Same rows as above: with a rolling gap every step is under 24h so the
    # whole sequence is one session.
    rows = [raw(t_hours=h) for h in (0, 23, 23.5, 25, 26, 27)]
    sessions = segment_trajectories(rows, window_mode="gap")
    assert [len(s.checkins) for s in sessions] == [6]


# ---------------------------------------------------------------------------
# filter_users
# ---------------------------------------------------------------------------

def test_filter_users_boundary():
    def sessions_for(user, n):
        rows = [raw(user=user, t_hours=48 * s + i) for s in range(n) for i in range(3)]
        return segment_trajectories(rows)

    four = sessions_for("a", 4)
    five = sessions_for("b", 5)
    kept = filter_users(four + five, min_trajs=5)
    assert {s.user_id for s in kept} == {"b"}
    assert len(kept) == 5


# ---------------------------------------------------------------------------
# split_corpus
# ---------------------------------------------------------------------------

def _sessions(n_trajs, user="u"):
    rows = [raw(user=user, poi=f"p{i}", t_hours=48 * s + i) for s in range(n_trajs) for i in range(3)]
    return segment_trajectories(rows)


def test_split_five_trajectories():
    split = split_corpus(_sessions(5))
    assert len(split.train[0]) == 4 and len(split.test[0]) == 1


def test_split_ten_trajectories():
    split = split_corpus(_sessions(10))
    assert len(split.train[0]) == 8 and len(split.test[0]) == 2


def test_split_keeps_at_least_one_test():
    split = split_corpus(_sessions(5), train_frac=1.0)
    assert len(split.train[0]) == 4 and len(split.test[0]) == 1


def test_split_vocab_covers_test_only_pois():
    sessions = _sessions(5)
    test_pois = {q.venue_id for q in sessions[-1].checkins}
    split = split_corpus(sessions)
    assert test_pois <= set(split.vocab.pois)


# ---------------------------------------------------------------------------
# time_slot_of
# ---------------------------------------------------------------------------

@pytest.mark.parametrize(
    "when,expected",
    [
        (datetime(2012, 4, 3, 14, 7), 14),  # Tuesday
        (datetime(2012, 4, 7, 14, 7), 38),  # Saturday
        (datetime(2012, 4, 2, 0, 0), 0),  # Monday midnight
        (datetime(2012, 4, 8, 23, 59), 47),  # Sunday last hour
    ],
)
def test_time_slot_of(when, expected):
    assert time_slot_of(when) == expected


# ---------------------------------------------------------------------------
# Full pipeline on the synthetic file
# ---------------------------------------------------------------------------

def test_pipeline_filter_order_users_first(tmp_path):
    # POI X collects 10 visits only when the soon-to-be-filtered user B's
    # rows still count: pois_first keeps X, users_first drops it (and with
    # it user A, whose sessions then fall under the length floor).
    def line(user, poi, day, hour):
        when = BASE_DAY + timedelta(days=day, hours=hour)
        return "\t".join([user, poi, "c0", "Cat", "40.7", "-74.0", "0", when.strftime(UTC_FMT)])

    lines = []
    for s in range(6):
        lines += [line("A", "F1", 2 * s, 8), line("A", "F2", 2 * s, 9), line("A", "X", 2 * s, 10)]
        lines += [line("C", "F1", 2 * s, 8), line("C", "F2", 2 * s, 9), line("C", "F1", 2 * s, 10)]
    for s in range(2):
        lines += [line("B", "X", 2 * s, 8), line("B", "X", 2 * s, 9), line("B", "F1", 2 * s, 10)]
    path = tmp_path / "order.tsv"
    path.write_text("\n".join(lines) + "\n")

    a = preprocess(str(path), min_poi_visits=10, filter_order="pois_first")
    assert a.stats.users == 2 and a.stats.pois == 3

    b = preprocess(str(path), min_poi_visits=10, filter_order="users_first")
    assert b.stats.users == 1 and b.stats.pois == 2


def test_pipeline_counts_on_synthetic(synth_tsv):
    split = preprocess(synth_tsv)
    assert split.stats.users == 6
    assert split.stats.pois == 10
    assert split.stats.categories == 4
    assert split.stats.checkins == 6 * 6 * 4
    assert split.stats.trajectories == 36
    for u in split.train:
        assert len(split.train[u]) == 5 and len(split.test[u]) == 1


def test_pipeline_trajectory_invariants(synth_tsv):
    split = preprocess(synth_tsv)
    total = 0
    for table in (split.train, split.test):
        for trajs in table.values():
            for t in trajs:
                total += 1
                times = [q.epoch_utc for q in t.checkins]
                assert len(times) >= 3
                assert times == sorted(times)
                assert max(times) - min(times) < 24 * 3600
                for q in t.checkins:
                    assert (q.time_slot >= 24) == (q.weekday >= 5)
    assert total == split.stats.trajectories


def test_pipeline_chronological_split_property():
    # Random synthetic corpora: every train trajectory precedes every test one.
    rng = np.random.default_rng(5)
    for trial in range(10):
        rows = []
        for u in range(3):
            n_sessions = int(rng.integers(5, 9))
            for s in range(n_sessions):
                start = float(rng.integers(0, 5)) + 48.0 * s
                for i in range(int(rng.integers(3, 6))):
                    rows.append(raw(user=f"u{u}", poi=f"p{int(rng.integers(0, 4))}", t_hours=start + i * 0.5))
        sessions = segment_trajectories(sorted(rows, key=lambda r: (r.user_id, r.utc_time)))
        sessions = filter_users(sessions)
        if not sessions:
            continue
        split = split_corpus(sessions)
        for u in split.train:
            last_train = max(q.epoch_utc for t in split.train[u] for q in t.checkins)
            first_test = min(q.epoch_utc for t in split.test[u] for q in t.checkins)
            assert last_train <= first_test
        per_user = sum(len(split.train[u]) + len(split.test[u]) for u in split.train)
        assert per_user == split.stats.trajectories


def test_pipeline_deterministic_reruns(synth_tsv, tmp_path):
    out1, out2 = tmp_path / "c1", tmp_path / "c2"
    save_corpus(preprocess(synth_tsv), str(out1))
    save_corpus(preprocess(synth_tsv), str(out2))
    for name in ("corpus.meta", "vocab.json", "train.jsonl", "test.jsonl"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_corpus_save_load_round_trip(synth_tsv, tmp_path):
    split = preprocess(synth_tsv)
    save_corpus(split, str(tmp_path / "corpus"))
    loaded = load_corpus(str(tmp_path / "corpus"))
    assert vars(loaded.stats) == vars(split.stats)
    assert loaded.vocab.pois == split.vocab.pois
    assert np.allclose(loaded.vocab.poi_coords, split.vocab.poi_coords)
    for u in split.train:
        got = [[(q.poi, q.time_slot, q.epoch_utc) for q in t.checkins] for t in loaded.train[u]]
        want = [[(q.poi, q.time_slot, q.epoch_utc) for q in t.checkins] for t in split.train[u]]
        assert got == want


# ---------------------------------------------------------------------------
# corpus_report
# ---------------------------------------------------------------------------

def _single_user_split(coords_list):
    rows = []
    for s in range(5):
        for i, (lat, lon) in enumerate(coords_list):
            rows.append(raw(user="u", poi=f"p{i}", t_hours=48 * s + i, lat=lat, lon=lon))
    return split_corpus(filter_users(segment_trajectories(rows)))


def test_report_zero_radius_bucket():
    split = _single_user_split([(40.7, -74.0)] * 3)
    rep = corpus_report(split)
    assert rep["user_max_radius_km"][0] == 0.0
    assert rep["radius_hist"][0] == 1


def test_report_radius_matches_independent_haversine():
    # Oracle: spherical law of cosines on a 1 km separation along a meridian.
    lat1, lon = 40.0, -74.0
    dlat = 1.0 / (6371.0 * math.pi / 180.0)  # degrees spanning 1 km
    lat2 = lat1 + dlat
    import math as m

    oracle = 6371.0 * m.acos(
        min(1.0, m.sin(m.radians(lat1)) * m.sin(m.radians(lat2))
            + m.cos(m.radians(lat1)) * m.cos(m.radians(lat2)) * m.cos(0.0))
    )
    assert abs(oracle - 1.0) < 1e-6  # the construction itself spans 1 km

    # acos is ill-conditioned near 1, so the cross-formula check gets 1e-6 km.
    split = _single_user_split([(lat1, lon), (lat2, lon), (lat1, lon)])
    rep = corpus_report(split)
    assert abs(rep["user_max_radius_km"][0] - oracle) < 1e-6


def test_report_writes_tabular_files(synth_tsv, tmp_path):
    split = preprocess(synth_tsv)
    rep = corpus_report(split, out_dir=str(tmp_path))
    radius_csv = (tmp_path / "activity_radius.csv").read_text().strip().splitlines()
    hours_csv = (tmp_path / "trajectories_per_hour.csv").read_text().strip().splitlines()
    assert radius_csv[0] == "bucket_low_km,bucket_high_km,users,proportion"
    assert len(hours_csv) == 25
    assert sum(rep["hour_counts"]) == split.stats.trajectories
