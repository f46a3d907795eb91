"""Library-level pipeline checks over the hand-labelled fixture corpus."""

import numpy as np
import pytest

from scenariokit.index import ScenarioIndex, evaluate_query, extract_odd_records, metadata_from_tags
from scenariokit.query import parse_query
from scenariokit.synthetic import TABLE_QUERIES, make_fixture_corpus
from scenariokit.tagging import EventKind, EventTag, evaluate_tagger, tag_recording, temporal_iou


@pytest.fixture(scope="module")
def corpus():
    return make_fixture_corpus()


@pytest.fixture(scope="module")
def tagged(corpus):
    tags, odd = [], []
    for rec in corpus.recordings:
        tags.extend(tag_recording(rec, corpus.map_model))
        odd.extend(extract_odd_records(rec, corpus.map_model))
    return tags, odd


@pytest.fixture(scope="module")
def index(tagged):
    tags, odd = tagged
    return ScenarioIndex.from_records(metadata_from_tags(tags) + odd)


def test_detectors_match_hand_labels(corpus, tagged):
    tags, _ = tagged
    truth = [
        EventTag(recording_id=rid, actor_id=actor, kind=EventKind(kind), t_start=t0, t_end=t1)
        for rid, actor, kind, t0, t1 in corpus.tag_truth
    ]
    kinds = {t.kind for t in truth}
    predicted = [t for t in tags if t.kind in kinds]
    report = evaluate_tagger(predicted, truth, iou_min=0.5)
    for kind, metrics in report.per_kind.items():
        assert metrics.recall == 1.0, (kind, metrics)
        assert metrics.precision == 1.0, (kind, metrics)


def test_query_battery_precision_recall_one(corpus, index):
    for query in TABLE_QUERIES:
        ast = parse_query(query)
        segments = evaluate_query(index, ast)
        expected = corpus.query_truth[query]
        matched_truth = set()
        for seg in segments:
            hit = None
            for i, (rid, t0, t1) in enumerate(expected):
                if i in matched_truth or rid != seg.recording_id:
                    continue
                if temporal_iou((seg.t_start, seg.t_end), (t0, t1)) >= 0.5:
                    hit = i
                    break
            assert hit is not None, f"{query}: unexpected segment {seg}"
            matched_truth.add(hit)
        assert len(matched_truth) == len(expected), (
            f"{query}: found {len(matched_truth)} of {len(expected)} expected segments: {segments}"
        )


def test_no_cross_contamination(tagged):
    tags, _ = tagged
    by_rec_kind = {}
    for t in tags:
        by_rec_kind.setdefault(t.recording_id, set()).add(t.kind)
    assert EventKind.MERGE not in by_rec_kind.get("rec03_lane_change", set())
    assert EventKind.TURN_LEFT not in by_rec_kind.get("rec03_lane_change", set())
    assert EventKind.CUT_IN not in by_rec_kind.get("rec04_other_lane_change", set())
    assert EventKind.CUT_IN in by_rec_kind.get("rec09_cut_in", set())
    assert EventKind.STOP in by_rec_kind.get("rec07_stop_red", set())
    assert EventKind.RAPID_DECEL not in by_rec_kind.get("rec07_stop_red", set())


def test_three_phase_probes_recorded(corpus):
    assert corpus.three_phase_recording_id == "rec10_three_phase"
    assert len(corpus.three_phase_probes) == 3
