import json
from collections import Counter
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sector_congest.errors import InvalidSpec, UnknownCase
from sector_congest.messages import MsgType, Qualifier, parse_message
from sector_congest.occupancy import correlate_flight, flight_uncertainty
from sector_congest.prep import document_from_messages
from sector_congest.synth import (
    FlightTruth,
    GroundTruth,
    ScenarioSpec,
    clean_flight_messages,
    generate_scenario,
    generate_weather,
    inject_anomalies,
    lines_by_day,
    oracle_sector_counts,
    write_scenario,
)

DAY = date(2018, 3, 14)
T0 = datetime(2018, 3, 14, tzinfo=timezone.utc)


def one_clean_flight(seed=0):
    rng = np.random.default_rng(seed)
    return clean_flight_messages("F1", T0 + timedelta(hours=12), ("S1", "S2", "S3"), (10, 15, 20), rng)


def doc(msgs):
    with_seq = [m.with_seq(i) for i, m in enumerate(msgs)]
    return document_from_messages("F1", sorted(with_seq, key=lambda m: m.order_key))


def test_zero_flights_is_empty():
    lines, truth = generate_scenario(ScenarioSpec(flights_per_day=0, n_days=3))
    assert lines == []
    assert truth.flights == {} and truth.manifest == {}


def test_same_seed_same_bytes(tmp_path):
    spec = ScenarioSpec(flights_per_day=80, n_days=2, seed=5, anomaly_rates={1: .1, 2: .1, 3: .1, 4: .1},
                        weather_sectors=["ZSC01"])
    assert generate_scenario(spec)[0] == generate_scenario(spec)[0]
    write_scenario(spec, tmp_path / "a")
    write_scenario(spec, tmp_path / "b")
    for name in ("truth.json", "weather.jsonl", "spec.json", "messages/2018-03-05.msgs", "messages/2018-03-06.msgs"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    other = ScenarioSpec(**{**spec.__dict__, "seed": 6})
    assert generate_scenario(other)[0] != generate_scenario(spec)[0]


def test_clean_scenario_emits_the_desirable_order():
    lines, truth = generate_scenario(ScenarioSpec(flights_per_day=120, seed=3))
    per_flight = {}
    for line in lines:
        m = parse_message(line)
        per_flight.setdefault(m.flight_ref, []).append(m.msg_type)
    rank = {MsgType.DEPARTURE: 0, MsgType.TRACK: 1, MsgType.SECTORS: 2, MsgType.ARRIVAL: 3}
    for ref, types in per_flight.items():
        firsts = sorted(set(types), key=types.index)
        assert [rank[t] for t in firsts] == sorted(rank[t] for t in firsts)
        assert types[0] is MsgType.DEPARTURE and types[-1] is MsgType.ARRIVAL
        assert truth.flights[ref].level == 1


def test_stream_is_time_ordered_and_tallied():
    spec = ScenarioSpec(flights_per_day=150, n_days=2, seed=4, anomaly_rates={1: .2, 2: .2, 3: .2, 4: .2})
    lines, truth = generate_scenario(spec)
    msgs = [parse_message(line) for line in lines]
    assert [m.msg_time for m in msgs] == sorted(m.msg_time for m in msgs)
    tally = {}
    for m in msgs:
        tally.setdefault(m.msg_time.date(), Counter())[m.msg_type] += 1
    for day, counts in tally.items():
        assert {t: counts[t] for t in MsgType} == dict(truth.tally[day])
        assert {m.flight_ref for m in msgs if m.msg_time.date() == day} == truth.manifest[day]
    assert set(lines_by_day(lines)) == set(tally)


def test_truth_intervals_are_contiguous():
    _, truth = generate_scenario(ScenarioSpec(flights_per_day=200, seed=8))
    for ft in truth.flights.values():
        assert ft.intervals[0][1] == ft.departure
        assert ft.intervals[-1][2] == ft.arrival
        for (_, _, exit_), (_, entry, _) in zip(ft.intervals, ft.intervals[1:]):
            assert exit_ == entry
        assert 1 <= len(ft.intervals) <= 6
        assert all(timedelta(minutes=3) <= b - a <= timedelta(minutes=45) for _, a, b in ft.intervals)


def test_case_one_adds_exactly_one_estimated_departure():
    clean = one_clean_flight()
    out = inject_anomalies(clean, 1, seed=0)
    assert len(out) == len(clean) + 1
    est = [m for m in out if m.msg_type is MsgType.DEPARTURE and m.payload.qualifier is Qualifier.ESTIMATED]
    assert len(est) == 1
    assert est[0].payload.departure_time != clean[0].payload.departure_time


def test_case_two_puts_arrival_before_departure_and_empties_intervals():
    clean = one_clean_flight()
    out = inject_anomalies(clean, 2, seed=0)
    arr = [m for m in out if m.msg_type is MsgType.ARRIVAL][0]
    assert arr.payload.arrival_time < clean[0].payload.departure_time
    assert correlate_flight(doc(clean)) != []
    assert correlate_flight(doc(out)) == []


def test_case_three_emits_departure_after_arrival():
    out = inject_anomalies(one_clean_flight(), 3, seed=0)
    dep = [m for m in out if m.msg_type is MsgType.DEPARTURE][0]
    arr = [m for m in out if m.msg_type is MsgType.ARRIVAL][0]
    assert dep.msg_time > arr.msg_time
    assert out[-1] is dep


def test_case_four_duplicates_with_a_conflicting_time():
    clean = one_clean_flight()
    out = inject_anomalies(clean, 4, seed=0)
    deps = [m for m in out if m.msg_type is MsgType.DEPARTURE]
    assert len(deps) == 2
    assert deps[0].payload.departure_time != deps[1].payload.departure_time
    assert deps[1].payload == clean[0].payload  # the genuine report is emitted last


def test_injection_is_seeded_and_rejects_unknown_cases():
    clean = one_clean_flight()
    for case in (1, 2, 3, 4):
        assert inject_anomalies(clean, case, 7) == inject_anomalies(clean, case, 7)
    with pytest.raises(UnknownCase):
        inject_anomalies(clean, 5, 0)
    with pytest.raises(UnknownCase):
        inject_anomalies(clean, 0, 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([1, 2, 3, 4]), min_size=1, max_size=4), st.integers(0, 10_000))
def test_composed_cases_give_the_expected_level(cases, seed):
    rng = np.random.default_rng(seed)
    msgs = one_clean_flight(seed)
    for case in cases:
        msgs = inject_anomalies(msgs, case, rng)
    level = flight_uncertainty(doc(msgs))
    assert level == (3 if 2 in cases else 2)
    assert (correlate_flight(doc(msgs)) == []) == (2 in cases)


def test_invalid_specs():
    for bad in (
        {"flights_per_day": -1},
        {"sectors": []},
        {"sectors": ["A", "A"]},
        {"anomaly_rates": {1: 1.5}},
        {"anomaly_rates": {5: 0.1}},
        {"daily_profile": [1] * 23},
        {"daily_profile": [0] * 24},
        {"template_fraction": 2.0},
        {"weather_sectors": ["nope"]},
    ):
        with pytest.raises(InvalidSpec):
            ScenarioSpec(**bad)
    with pytest.raises(InvalidSpec):
        ScenarioSpec.from_dict({"flightsPerDay": 10, "colour": "red"})
    with pytest.raises(InvalidSpec):
        ScenarioSpec.from_dict({"startDay": "not a date"})


def test_spec_round_trips_through_its_text_form(tmp_path):
    spec = ScenarioSpec(sectors=["A", "B"], flights_per_day=12, n_days=4, seed=9,
                        anomaly_rates={1: 0.1, 2: 0.0, 3: 0.25, 4: 0.0}, template_fraction=0.5,
                        jitter_minutes=2, weather_sectors=["B"])
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert ScenarioSpec.load(path) == spec
    assert ScenarioSpec.from_dict({"sectors": 3}).sectors == ["ZSC01", "ZSC02", "ZSC03"]


def test_truth_round_trips():
    _, truth = generate_scenario(ScenarioSpec(flights_per_day=30, n_days=2, anomaly_rates={2: 0.3}))
    again = GroundTruth.from_dict(json.loads(json.dumps(truth.to_dict())))
    assert again.to_dict() == truth.to_dict()


def test_weather_only_for_weather_sectors():
    spec = ScenarioSpec(n_days=2, weather_sectors=["ZSC03"])
    obs = generate_weather(spec)
    assert len(obs) == 48
    assert {o["sector"] for o in obs} == {"ZSC03"}
    assert all(0 <= o["windDirection"] < 360 for o in obs)
    assert generate_weather(ScenarioSpec()) == []


def _truth_of(*flights):
    truth = GroundTruth()
    for ft in flights:
        truth.flights[ft.flight_ref] = ft
    return truth


def _flight(ref, start_min, end_min, sector="S1", cases=()):
    a, b = T0 + timedelta(minutes=start_min), T0 + timedelta(minutes=end_min)
    return FlightTruth(ref, a, b, [(sector, a, b)], cases)


def test_oracle_single_flight():
    counts = oracle_sector_counts(_truth_of(_flight("A", 600, 610)), DAY)
    s = counts["S1"].counts
    assert s[600:610].tolist() == [1] * 10
    assert s.sum() == 10


def test_oracle_overlapping_flights():
    counts = oracle_sector_counts(_truth_of(_flight("A", 600, 610), _flight("B", 605, 620)), DAY)
    s = counts["S1"]
    assert s.counts[605:610].tolist() == [2] * 5
    assert s.counts.sum() == 10 + 15
    assert s.flights[607] == ("A", "B")


def test_oracle_skips_uncountable_and_reports_levels():
    truth = _truth_of(_flight("A", 600, 610, cases=(3,)), _flight("B", 600, 610, cases=(2,)))
    counts = oracle_sector_counts(truth, DAY)
    assert counts["S1"].counts[600] == 1
    assert counts["S1"].uncertainty[600] == 2
    assert oracle_sector_counts(truth, DAY, countable_only=False)["S1"].counts[600] == 2


def test_oracle_later_interval_holds_a_shared_minute():
    a = T0 + timedelta(minutes=600, seconds=30)
    mid = T0 + timedelta(minutes=605, seconds=30)
    b = T0 + timedelta(minutes=612)
    ft = FlightTruth("A", a, b, [("S1", a, mid), ("S2", mid, b)])
    counts = oracle_sector_counts(_truth_of(ft), DAY)
    assert counts["S1"].counts[600:605].tolist() == [1] * 5
    assert counts["S1"].counts[605] == 0
    assert counts["S2"].counts[605:612].tolist() == [1] * 7


def test_oracle_clips_to_the_day():
    counts = oracle_sector_counts(_truth_of(_flight("A", 1430, 1450)), DAY)
    assert counts["S1"].counts[1430:].tolist() == [1] * 10
    nxt = oracle_sector_counts(_truth_of(_flight("A", 1430, 1450)), DAY + timedelta(days=1))
    assert nxt["S1"].counts[:10].tolist() == [1] * 10
