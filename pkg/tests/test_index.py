import numpy as np
import pytest

from oracles import oracle_search
from scenariokit.index import (
    MetadataRecord,
    ScenarioIndex,
    SchemaConflictError,
    build_index,
    evaluate_query,
    extract_odd_records,
    latency_probe,
    metadata_from_tags,
)
from scenariokit.query import And, Atom, Or, QueryError, parse_query
from scenariokit.tagging import EventKind, EventTag


def rec_md(rid, t0, t1, fname, value):
    return MetadataRecord(recording_id=rid, t_start=t0, t_end=t1, field=fname, value=value)


def as_tuples(segments):
    return [(s.recording_id, s.t_start, s.t_end, frozenset(s.matched_fields)) for s in segments]


def records_as_tuples(records):
    return [(r.recording_id, r.t_start, r.t_end, r.field, r.value) for r in records]


class TestLowering:
    def test_turn_tag_lowering(self):
        tag = EventTag(
            recording_id="r",
            actor_id="ego",
            kind=EventKind.TURN_LEFT,
            t_start=10.0,
            t_end=18.0,
            attributes={"mean_speed": 7.5, "net_heading_change": 1.57, "min_turn_radius": 9.0, "ego": 1},
        )
        records = metadata_from_tags([tag])
        by_field = {r.field: r.value for r in records}
        assert by_field["event"] == "turn"
        assert by_field["turn"] == "left"
        assert by_field["speed"] == 7.5
        assert by_field["ego_vehicle_event"] == "turn"
        assert all(r.t_start == 10.0 and r.t_end == 18.0 for r in records)

    def test_intersection_tag_lowers_for_ego_only(self):
        mk = lambda ego: EventTag(
            recording_id="r",
            actor_id="x",
            kind=EventKind.INTERSECTION_PRESENCE,
            t_start=0.0,
            t_end=5.0,
            attributes={"arity": 3, "junction_id": "j", "ego": ego},
        )
        assert metadata_from_tags([mk(0)]) == []
        records = metadata_from_tags([mk(1)])
        assert len(records) == 1
        assert records[0].field == "ODD.intersection" and records[0].value == "3-way"


class TestBuildAndQuery:
    def test_single_lane_change(self, tmp_path):
        tag = EventTag(
            recording_id="r1",
            actor_id="a",
            kind=EventKind.LANE_CHANGE_LEFT,
            t_start=4.0,
            t_end=7.0,
            attributes={"mean_speed": 12.0},
        )
        build_index([tag], [], str(tmp_path))
        index = ScenarioIndex.open(str(tmp_path))
        segments = evaluate_query(index, parse_query("event=lane_change"))
        assert as_tuples(segments) == [("r1", 4.0, 7.0, frozenset({"event"}))]

    def test_interval_intersection(self, tmp_path):
        records = [
            rec_md("r1", 9.0, 20.0, "ODD.intersection", "3-way"),
            rec_md("r1", 10.0, 18.0, "turn", "left"),
        ]
        index = ScenarioIndex.from_records(records)
        segments = evaluate_query(index, parse_query("ODD.intersection=3-way & turn=left"))
        assert as_tuples(segments) == [
            ("r1", 10.0, 18.0, frozenset({"ODD.intersection", "turn"}))
        ]

    def test_empty_index(self, tmp_path):
        build_index([], [], str(tmp_path))
        index = ScenarioIndex.open(str(tmp_path))
        assert evaluate_query(index, parse_query("event=turn")) == []

    def test_schema_conflict(self):
        records = [
            rec_md("r1", 0.0, 1.0, "speed", "fast"),
            rec_md("r1", 2.0, 3.0, "speed", 30.0),
        ]
        with pytest.raises(SchemaConflictError, match="speed"):
            ScenarioIndex.from_records(records)

    def test_unknown_field_error(self):
        index = ScenarioIndex.from_records([rec_md("r1", 0.0, 1.0, "event", "turn")])
        with pytest.raises(QueryError, match="unknown field"):
            evaluate_query(index, Atom("nonexistent", "=", "x"))

    def test_known_field_absent_from_index_matches_nothing(self):
        index = ScenarioIndex.from_records([rec_md("r1", 0.0, 1.0, "event", "turn")])
        assert evaluate_query(index, parse_query("turn=left")) == []

    def test_disk_round_trip_identical_results(self, tmp_path):
        rng = np.random.default_rng(0)
        records = _random_records(rng, 500)
        index = ScenarioIndex.from_records(records)
        index.save(str(tmp_path))
        reopened = ScenarioIndex.open(str(tmp_path))
        for text in ["event=turn", "speed>20", "event=turn & speed>10", "turn=left||right"]:
            ast = parse_query(text)
            assert as_tuples(evaluate_query(index, ast)) == as_tuples(evaluate_query(reopened, ast))

    def test_numeric_ops(self):
        records = [rec_md("r1", float(i), float(i) + 0.5, "speed", float(i)) for i in range(10)]
        index = ScenarioIndex.from_records(records)

        def starts(text):
            return [s.t_start for s in evaluate_query(index, parse_query(text), overlap_slack=0.2)]

        assert starts("speed>7") == [8.0, 9.0]
        assert starts("speed>=7") == [7.0, 8.0, 9.0]
        assert starts("speed<2") == [0.0, 1.0]
        assert starts("speed<=2") == [0.0, 1.0, 2.0]
        assert starts("speed=5") == [5.0]


def _random_records(rng: np.random.Generator, n: int) -> list[MetadataRecord]:
    fields = [
        ("event", ["turn", "lane_change", "stop"]),
        ("turn", ["left", "right"]),
        ("ODD.roadway_type", ["freeway", "local"]),
        ("speed", None),
        ("gap", None),
    ]
    records = []
    n_recs = max(1, n // 50)
    for _ in range(n):
        fname, pool = fields[rng.integers(0, len(fields))]
        t0 = float(np.round(rng.uniform(0, 120), 3))
        length = float(np.round(rng.uniform(0.5, 15), 3))
        value = (
            float(np.round(rng.uniform(0, 40), 3))
            if pool is None
            else pool[rng.integers(0, len(pool))]
        )
        records.append(rec_md(f"r{rng.integers(0, n_recs):03d}", t0, t0 + length, fname, value))
    return records


def _random_query(rng: np.random.Generator):
    from test_query import random_ast

    return random_ast(rng)


class TestOracleEquivalence:
    def test_randomized_equivalence(self):
        rng = np.random.default_rng(123)
        for trial in range(30):
            records = _random_records(rng, int(rng.integers(20, 400)))
            index = ScenarioIndex.from_records(records)
            raw = records_as_tuples(records)
            for _ in range(10):
                ast = _random_query(rng)
                got = as_tuples(evaluate_query(index, ast, overlap_slack=2.0))
                want = oracle_search(raw, ast, slack=2.0)
                assert got == want, f"trial {trial}: {ast}"

    def test_algebra_idempotence(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            records = _random_records(rng, 200)
            index = ScenarioIndex.from_records(records)
            a = Atom("event", "=", "turn")
            ev = lambda ast: as_tuples(evaluate_query(index, ast))
            base = ev(a)
            assert ev(Or((a, a))) == base
            assert ev(And((a, a))) == base

    def test_and_segments_inside_padded_operand(self):
        slack = 2.0
        rng = np.random.default_rng(99)
        for _ in range(30):
            records = _random_records(rng, 300)
            index = ScenarioIndex.from_records(records)
            a = Atom("event", "=", "turn")
            b = Atom("speed", ">", 10.0)
            a_segments = evaluate_query(index, a, slack)
            combined = evaluate_query(index, And((a, b)), slack)
            for seg in combined:
                assert any(
                    sa.recording_id == seg.recording_id
                    and sa.t_start - slack <= seg.t_start
                    and seg.t_end <= sa.t_end + slack
                    for sa in a_segments
                ), seg


class TestLatencyProbe:
    def test_monotone_positive(self):
        samples = latency_probe([1000, 5000], ["event=lane_change", "speed>20"], repeats=2)
        assert len(samples) == 2
        assert all(latency > 0 for _, latency in samples)

    def test_empty_queries_rejected(self):
        with pytest.raises(ValueError, match="no queries"):
            latency_probe([100], [])


class TestOddExtraction:
    def test_fixture_roadway_and_signals(self):
        from scenariokit.synthetic import make_fixture_corpus

        corpus = make_fixture_corpus()
        by_id = {r.recording_id: r for r in corpus.recordings}
        records = extract_odd_records(by_id["rec07_stop_red"], corpus.map_model)
        fields = {(r.field, r.value) for r in records}
        assert ("ODD.signage", "stop") in fields
        assert ("ODD.traffic_signal", "red") in fields
        assert ("ODD.roadway_type", "local") in fields
        red = [r for r in records if r.field == "ODD.traffic_signal"]
        assert len(red) == 1
        assert red[0].t_start == pytest.approx(7.68, abs=0.3)

        records8 = extract_odd_records(by_id["rec08_green_pass"], corpus.map_model)
        signals8 = {r.value for r in records8 if r.field == "ODD.traffic_signal"}
        assert signals8 == {"green"}

    def test_merge_fixture_roadway_types(self):
        from scenariokit.synthetic import make_fixture_corpus

        corpus = make_fixture_corpus()
        by_id = {r.recording_id: r for r in corpus.recordings}
        records = extract_odd_records(by_id["rec05_merge_fast"], corpus.map_model)
        values = [(r.value, r.t_start, r.t_end) for r in records if r.field == "ODD.roadway_type"]
        assert [v for v, _, _ in values] == ["freeway_ramp", "freeway"]
