from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sector_congest.errors import DayNotPrepared
from sector_congest.messages import Qualifier
from sector_congest.occupancy import (
    CountStore, FlightOccupancy, SectorCountSeries, SectorInterval, bucketize_intervals, compute_uncertainty,
    correlate_flight, finalize_partial, flight_uncertainty, map_occupancy, merge_partials, occupancy_from_document,
    reduce_sector_counts,
)
from sector_congest.prep import document_from_messages
from sector_congest.synth import inject_anomalies

from conftest import DAY, arrival, at, clean_flight, departure, sectors, track


def doc_of(msgs, ref="F1"):
    return document_from_messages(ref, [m.with_seq(i) for i, m in enumerate(sorted(msgs, key=lambda m: m.msg_time))])


def ordered_doc(msgs, ref="F1"):
    """Document from messages kept in their emission order (seq = position)."""
    with_seq = [m.with_seq(i) for i, m in enumerate(msgs)]
    return document_from_messages(ref, sorted(with_seq, key=lambda m: m.order_key))


def test_correlate_worked_example():
    doc = doc_of(clean_flight(milestones=(("S1", 0), ("S2", 17)), arr_offset=40))
    assert correlate_flight(doc) == [
        SectorInterval("S1", at(12), at(12, 17)),
        SectorInterval("S2", at(12, 17), at(12, 40)),
    ]


def test_estimated_departure_only_is_excluded():
    msgs = [departure("F1", at(11), at(12), Qualifier.ESTIMATED), sectors("F1", at(11, 1), [("S1", 0)])]
    assert correlate_flight(doc_of(msgs)) == []


def test_departure_taken_from_arrival_message():
    msgs = [sectors("F1", at(12, 1), [("S1", 0), ("S2", 5)]), arrival("F1", at(12, 30), at(12, 30), dep_time=at(12))]
    assert correlate_flight(doc_of(msgs)) == [
        SectorInterval("S1", at(12), at(12, 5)), SectorInterval("S2", at(12, 5), at(12, 30)),
    ]


def test_arrival_before_departure_is_severe():
    msgs = [departure("F1", at(12), at(12)), sectors("F1", at(12, 1), [("S1", 0)]), arrival("F1", at(12, 2), at(11, 50))]
    doc = doc_of(msgs)
    assert correlate_flight(doc) == []
    assert flight_uncertainty(doc) == 3


def test_default_dwell_without_arrival():
    msgs = [departure("F1", at(12), at(12)), sectors("F1", at(12, 1), [("S1", 0), ("S2", 10)])]
    assert correlate_flight(doc_of(msgs), default_dwell_min=20)[-1] == SectorInterval("S2", at(12, 10), at(12, 30))
    assert correlate_flight(doc_of(msgs), default_dwell_min=7)[-1].exit == at(12, 17)


def test_no_sectors_no_intervals():
    assert correlate_flight(doc_of([departure("F1", at(12), at(12))])) == []


@pytest.mark.parametrize("entry, exit_, minutes", [
    (at(12), at(12, 3), [at(12), at(12, 1), at(12, 2)]),
    (at(12, 0, 30), at(12, 1, 10), [at(12), at(12, 1)]),
])
def test_bucket_boundaries(entry, exit_, minutes):
    assert [b.time for b in bucketize_intervals([SectorInterval("S1", entry, exit_)])] == minutes


def test_empty_intervals_no_buckets():
    assert bucketize_intervals([]) == []


def test_shared_minute_goes_to_later_sector():
    ivs = [SectorInterval("S1", at(12, 0, 30), at(12, 5, 30)), SectorInterval("S2", at(12, 5, 30), at(12, 8))]
    buckets = bucketize_intervals(ivs)
    assert [(b.time.minute, b.sector) for b in buckets] == [(m, "S1") for m in range(5)] + [(m, "S2") for m in (5, 6, 7)]


def test_track_attached_to_matching_minute():
    ivs = [SectorInterval("S1", at(12), at(12, 3))]
    t = track("F1", at(12, 1, 20)).payload
    buckets = bucketize_intervals(ivs, {at(12, 1): t})
    assert [b.has_track for b in buckets] == [False, True, False]
    assert buckets[1].track == t and buckets[0].track is None


def test_interval_requires_positive_length():
    with pytest.raises(ValueError):
        SectorInterval("S1", at(12), at(12))


def record(ref, sector, start, minutes, level=1):
    iv = SectorInterval(sector, start, start + timedelta(minutes=minutes))
    return FlightOccupancy(ref, [iv], bucketize_intervals([iv]), level)


def test_two_flights_same_minute():
    series = reduce_sector_counts([record("A", "S1", at(12, 5), 1), record("B", "S1", at(12, 5), 3)], DAY)
    assert series["S1"].counts[725] == 2
    assert series["S1"].flights[725] == ("A", "B")


def test_single_flight_ten_minutes():
    series = reduce_sector_counts([record("A", "S1", at(12), 10)], DAY)
    assert list(series) == ["S1"]
    assert series["S1"].counts.sum() == 10 and (series["S1"].counts[720:730] == 1).all()


def test_buckets_outside_day_ignored():
    series = reduce_sector_counts([record("A", "S1", at(23, 55), 10)], DAY)
    assert series["S1"].counts.sum() == 5


def test_series_level_is_max_of_contributors():
    series = reduce_sector_counts([record("A", "S1", at(12), 2, 1), record("B", "S1", at(12, 1), 2, 3)], DAY)
    assert list(series["S1"].uncertainty[720:723]) == [1, 3, 3]
    assert series["S1"].uncertainty[0] == 1


def test_series_codec_round_trip():
    series = reduce_sector_counts([record("A", "S1", at(12), 2), record("B", "S1", at(12, 1), 4, 2)], DAY)["S1"]
    assert SectorCountSeries.from_dict(series.to_dict()) == series


# -- properties ---------------------------------------------------------------

flight_records = st.lists(
    st.tuples(st.sampled_from(["S1", "S2", "S3"]), st.integers(0, 1500), st.integers(1, 90), st.integers(1, 3)),
    max_size=25,
).map(lambda rows: [record(f"F{i}", s, at(0) + timedelta(minutes=m - 30), n, lv) for i, (s, m, n, lv) in enumerate(rows)])


@given(flight_records)
def test_conservation(records):
    series = reduce_sector_counts(records, DAY)
    lo, hi = at(0), at(0) + timedelta(days=1)
    airborne = sum(1 for r in records for b in r.buckets if lo <= b.time < hi)
    assert sum(int(s.counts.sum()) for s in series.values()) == airborne
    for s in series.values():
        assert all(int(c) == len(f) for c, f in zip(s.counts, s.flights))


@given(flight_records, flight_records, flight_records)
def test_merge_is_associative_and_commutative(a, b, c):
    pa, pb, pc = (map_occupancy(x, DAY) for x in (a, b, c))
    left = merge_partials(merge_partials(pa, pb), pc)
    right = merge_partials(pa, merge_partials(pb, pc))
    assert left == right
    assert merge_partials(pa, pb) == merge_partials(pb, pa)


@settings(max_examples=30)
@given(flight_records, st.integers(1, 5))
def test_reduce_independent_of_worker_split(records, workers):
    whole = reduce_sector_counts(records, DAY)
    chunks = [records[i::workers] for i in range(workers)]
    partial = {}
    for chunk in reversed(chunks):
        partial = merge_partials(partial, map_occupancy(chunk, DAY))
    assert finalize_partial(partial, DAY) == whole


# -- uncertainty ----------------------------------------------------------------

def test_clean_flight_level_one():
    doc = ordered_doc(clean_flight())
    occupancy_from_document(doc)
    levels = compute_uncertainty(doc)
    assert levels and set(levels.values()) == {1}


@pytest.mark.parametrize("case, level", [(1, 2), (2, 3), (3, 2), (4, 2)])
def test_injected_case_levels(case, level):
    msgs = inject_anomalies(clean_flight(), case, np.random.default_rng(case))
    doc = ordered_doc(msgs)
    occ = occupancy_from_document(doc)
    assert occ.level == level
    if case != 2:
        assert set(compute_uncertainty(doc).values()) == {level}
        assert occ.intervals == correlate_flight(ordered_doc(clean_flight()))


@given(st.lists(st.sampled_from([1, 2, 3, 4]), min_size=1, max_size=4), st.integers(0, 1000))
def test_corruption_never_lowers_level(cases, seed):
    msgs = clean_flight()
    rng = np.random.default_rng(seed)
    prev = flight_uncertainty(ordered_doc(msgs))
    for case in cases:
        msgs = inject_anomalies(msgs, case, rng)
        level = flight_uncertainty(ordered_doc(msgs))
        assert level >= prev
        prev = level


def test_sectors_before_first_track_is_an_order_anomaly():
    dep, trk, sec, arr = clean_flight()
    assert flight_uncertainty(ordered_doc([dep, trk, sec, arr])) == 1
    late_track = track("F1", sec.msg_time + timedelta(seconds=5))
    doc = ordered_doc([dep, sec, late_track, arr])
    assert doc.order_anomaly is True
    assert flight_uncertainty(doc) == 2


# -- the PI read path -----------------------------------------------------------------

def test_query_count(tmp_path):
    store = CountStore(tmp_path)
    store.write_dms_b(DAY, reduce_sector_counts([record("A", "S1", at(12), 3, 2)], DAY))
    assert store.query_count("S1", at(12, 1)) == (1, 2)
    assert store.query_count("S1", at(12, 1, 45)) == (1, 2)
    assert store.query_count("S1", at(13)) == (0, 1)
    assert store.query_count("S9", at(12)) == (0, 1)
    with pytest.raises(DayNotPrepared):
        store.query_count("S1", at(12, day=DAY + timedelta(days=1)))


def test_sector_names_survive_file_encoding(tmp_path):
    store = CountStore(tmp_path)
    odd = "ZOB/48 high"
    store.write_dms_b(DAY, reduce_sector_counts([record("A", odd, at(12), 3)], DAY))
    assert store.sectors(DAY) == [odd]
    assert store.load_series(odd, DAY).counts.sum() == 3
