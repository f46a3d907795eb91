import math

import numpy as np
import pytest

from scenariokit.mapmodel import Junction, Lane, MapModel, Road, RoadwayType
from scenariokit.recording import Recording, normalize_angle
from scenariokit.synthetic import TrackBuilder, recording_from_tracks
from scenariokit.tagging import (
    EventKind,
    EventTag,
    detect_cut_in_out,
    detect_intersection_presence,
    detect_lane_changes,
    detect_merge,
    detect_rapid_decel,
    detect_stops,
    detect_turns,
    evaluate_tagger,
    tag_recording,
)


def ego_builder(**kw):
    kw.setdefault("ego", True)
    return TrackBuilder("ego", **kw)


def boulevard_map(n_lanes=3):
    lanes = [Lane(-(i + 1), 3.5) for i in range(n_lanes)]
    return MapModel(roads=[Road("blvd", [(-100.0, 0.0), (1000.0, 0.0)], lanes, RoadwayType.ARTERIAL)])


class TestTurns:
    def test_quarter_circle(self):
        b = ego_builder(x=0, y=0, heading=0.0)
        b.straight(duration=3.0, speed=5.0)
        _, v = b.arc(math.pi / 2, 10.0, 5.0)
        b.straight(duration=3.0, speed=v)
        rec = recording_from_tracks("r", [b])
        tags = detect_turns(rec, "ego")
        assert len(tags) == 1
        tag = tags[0]
        assert tag.kind == EventKind.TURN_LEFT
        assert tag.attributes["net_heading_change"] == pytest.approx(math.pi / 2, rel=0.05)
        assert tag.attributes["mean_speed"] == pytest.approx(5.0, rel=0.05)
        assert tag.attributes["min_turn_radius"] == pytest.approx(10.0, rel=0.05)

    def test_straight_track_no_tags(self):
        b = ego_builder().straight(duration=20.0, speed=10.0)
        rec = recording_from_tracks("r", [b])
        assert detect_turns(rec, "ego") == []

    def test_s_curve_two_tags(self):
        b = ego_builder(heading=0.0)
        b.straight(duration=3.0, speed=6.0)
        b.arc(math.pi / 2, 12.0, 6.0)
        b.straight(duration=2.0, speed=6.0)
        b.arc(-math.pi / 2, 12.0, 6.0)
        b.straight(duration=3.0, speed=6.0)
        rec = recording_from_tracks("r", [b])
        tags = detect_turns(rec, "ego")
        assert [t.kind for t in tags] == [EventKind.TURN_LEFT, EventKind.TURN_RIGHT]
        assert tags[0].t_end <= tags[1].t_start

    def test_slow_drift_below_window_not_a_turn(self):
        # 60 degrees over 60 s never accrues 45 degrees inside 12 s.
        b = ego_builder()
        b.arc(math.radians(60), 573.0, 10.0)  # yaw rate ~1 deg/s
        rec = recording_from_tracks("r", [b])
        assert detect_turns(rec, "ego") == []

    def test_no_overlapping_same_kind(self):
        rng = np.random.default_rng(2)
        for trial in range(5):
            b = ego_builder(heading=float(rng.uniform(-3, 3)))
            for _ in range(6):
                if rng.random() < 0.5:
                    b.straight(duration=float(rng.uniform(1, 3)), speed=8.0)
                else:
                    b.arc(float(rng.uniform(-2, 2)), float(rng.uniform(8, 20)), 8.0)
            rec = recording_from_tracks("r", [b])
            tags = detect_turns(rec, "ego")
            for kind in (EventKind.TURN_LEFT, EventKind.TURN_RIGHT):
                same = sorted([t for t in tags if t.kind == kind], key=lambda t: t.t_start)
                for a, bb in zip(same, same[1:]):
                    assert a.t_end <= bb.t_start


def reverse_recording(rec: Recording) -> Recording:
    """Time-reverse a recording: frame order flips, headings rotate by pi."""
    n = rec.n_frames
    t_end = rec.times[-1]
    new_times = (t_end - rec.times)[::-1].copy()
    frame_sizes = np.diff(rec.offsets)[::-1]
    new_offsets = np.concatenate([[0], np.cumsum(frame_sizes)])
    order = []
    for i in range(n - 1, -1, -1):
        order.extend(range(int(rec.offsets[i]), int(rec.offsets[i + 1])))
    order = np.asarray(order)
    cols = rec.cols[order].copy()
    cols[:, 2] = normalize_angle(cols[:, 2] + math.pi)
    ego_rows = []
    row = 0
    for i in range(n - 1, -1, -1):
        ego_rows.append(row + int(rec.ego_row[i] - rec.offsets[i]))
        row += int(rec.offsets[i + 1] - rec.offsets[i])
    return Recording(
        recording_id=rec.recording_id + "_rev",
        times=new_times,
        offsets=new_offsets,
        id_idx=rec.id_idx[order].copy(),
        class_idx=rec.class_idx[order].copy(),
        cols=cols,
        ego_row=np.asarray(ego_rows, dtype=np.int64),
        id_pool=list(rec.id_pool),
        source_meta=dict(rec.source_meta),
    )


class TestTurnSymmetries:
    def make_turn_recording(self):
        b = ego_builder(heading=0.3)
        b.straight(duration=3.0, speed=5.0)
        b.arc(math.pi / 2, 10.0, 5.0)
        b.straight(duration=3.0, speed=5.0)
        return recording_from_tracks("r", [b])

    def test_time_reversal_swaps_direction(self):
        rec = self.make_turn_recording()
        fwd = detect_turns(rec, "ego")
        rev = detect_turns(reverse_recording(rec), "ego")
        assert [t.kind for t in fwd] == [EventKind.TURN_LEFT]
        assert [t.kind for t in rev] == [EventKind.TURN_RIGHT]
        t_end = rec.times[-1]
        assert rev[0].t_start == pytest.approx(t_end - fwd[0].t_end, abs=1e-6)
        assert rev[0].t_end == pytest.approx(t_end - fwd[0].t_start, abs=1e-6)

    def test_rigid_motion_invariance(self):
        rec = self.make_turn_recording()
        base = detect_turns(rec, "ego")
        theta = 1.234
        c, s = math.cos(theta), math.sin(theta)
        cols = rec.cols.copy()
        x, y = cols[:, 0].copy(), cols[:, 1].copy()
        cols[:, 0] = c * x - s * y + 50.0
        cols[:, 1] = s * x + c * y - 20.0
        cols[:, 2] = normalize_angle(cols[:, 2] + theta)
        moved = Recording(
            recording_id="r2",
            times=rec.times.copy(),
            offsets=rec.offsets.copy(),
            id_idx=rec.id_idx.copy(),
            class_idx=rec.class_idx.copy(),
            cols=cols,
            ego_row=rec.ego_row.copy(),
            id_pool=list(rec.id_pool),
        )
        out = detect_turns(moved, "ego")
        assert len(out) == len(base)
        for a, b in zip(base, out):
            assert a.kind == b.kind
            assert abs(a.t_start - b.t_start) < 1e-6
            assert abs(a.t_end - b.t_end) < 1e-6


class TestLaneChanges:
    def test_single_lane_change(self):
        m = boulevard_map(2)
        b = ego_builder(x=0.0, y=-1.75, heading=0.0)
        b.straight(duration=5.0, speed=10.0).lateral_shift(-3.5, 3.0, 10.0).straight(duration=5.0, speed=10.0)
        rec = recording_from_tracks("r", [b])
        tags = detect_lane_changes(rec, m, "ego")
        assert len(tags) == 1
        assert tags[0].kind == EventKind.LANE_CHANGE_RIGHT
        assert tags[0].t_start == pytest.approx(5.0, abs=0.5)
        assert tags[0].t_end == pytest.approx(8.0, abs=0.5)

    def test_in_lane_oscillation_no_tag(self):
        m = boulevard_map(2)
        b = ego_builder(x=0.0, y=-1.75, heading=0.0)
        b.straight(duration=2.0, speed=10.0)
        b.lateral_shift(1.0, 2.0, 10.0).lateral_shift(-1.0, 2.0, 10.0)
        b.straight(duration=2.0, speed=10.0)
        rec = recording_from_tracks("r", [b])
        assert detect_lane_changes(rec, m, "ego") == []

    def test_suppressed_inside_junction(self):
        lanes = [Lane(-1, 3.5), Lane(-2, 3.5)]
        m = MapModel(
            roads=[
                Road("blvd", [(-100.0, 0.0), (1000.0, 0.0)], lanes, RoadwayType.ARTERIAL),
                Road("cross", [(50.0, 10.0), (50.0, 200.0)], lanes, RoadwayType.LOCAL),
            ],
            junctions=[Junction("j", (50.0, -3.0), 15.0, 3, ("blvd", "cross"))],
        )
        b = ego_builder(x=30.0, y=-1.75, heading=0.0)
        b.straight(duration=1.0, speed=10.0).lateral_shift(-3.5, 1.5, 10.0).straight(duration=3.0, speed=10.0)
        rec = recording_from_tracks("r", [b])
        # The transition happens ~x in [40, 55], inside the junction radius.
        assert detect_lane_changes(rec, m, "ego") == []

    def test_double_change_merges(self):
        m = boulevard_map(3)
        b = ego_builder(x=0.0, y=-1.75, heading=0.0)
        b.straight(duration=3.0, speed=13.0).lateral_shift(-7.0, 2.0, 13.0).straight(duration=3.0, speed=13.0)
        rec = recording_from_tracks("r", [b])
        tags = detect_lane_changes(rec, m, "ego")
        assert len(tags) == 1
        assert tags[0].kind == EventKind.LANE_CHANGE_RIGHT
        assert tags[0].attributes["from_lane"] == -1
        assert tags[0].attributes["to_lane"] == -3


class TestCutInOut:
    def two_lane(self):
        return boulevard_map(2)

    def test_cut_in_ahead(self):
        m = self.two_lane()
        ego = ego_builder(x=0.0, y=-5.25, heading=0.0)
        ego.straight(duration=10.0, speed=12.0)
        other = TrackBuilder("car_1", x=20.0, y=-1.75, heading=0.0)
        other.straight(duration=3.0, speed=12.0).lateral_shift(-3.5, 2.0, 12.0).straight(duration=5.0, speed=12.0)
        rec = recording_from_tracks("r", [ego, other])
        tags = detect_cut_in_out(rec, m)
        assert [t.kind for t in tags] == [EventKind.CUT_IN]
        assert tags[0].actor_id == "car_1"
        assert 0 < tags[0].attributes["gap_m"] < 50

    def test_cut_out_ahead(self):
        m = self.two_lane()
        ego = ego_builder(x=0.0, y=-1.75, heading=0.0)
        ego.straight(duration=10.0, speed=12.0)
        lead = TrackBuilder("car_1", x=30.0, y=-1.75, heading=0.0)
        lead.straight(duration=3.0, speed=12.0).lateral_shift(-3.5, 2.0, 12.0).straight(duration=5.0, speed=12.0)
        rec = recording_from_tracks("r", [ego, lead])
        tags = detect_cut_in_out(rec, m)
        assert [t.kind for t in tags] == [EventKind.CUT_OUT]

    def test_gap_threshold(self):
        m = MapModel(roads=[Road("blvd", [(-100.0, 0.0), (4000.0, 0.0)], [Lane(-1, 3.5), Lane(-2, 3.5)], RoadwayType.ARTERIAL)])
        ego = ego_builder(x=0.0, y=-5.25, heading=0.0)
        ego.straight(duration=10.0, speed=12.0)
        far = TrackBuilder("car_1", x=200.0, y=-1.75, heading=0.0)
        far.straight(duration=3.0, speed=12.0).lateral_shift(-3.5, 2.0, 12.0).straight(duration=5.0, speed=12.0)
        rec = recording_from_tracks("r", [ego, far])
        assert detect_cut_in_out(rec, m) == []

    def test_ego_lane_change_not_a_cut_event(self):
        m = boulevard_map(3)
        ego = ego_builder(x=0.0, y=-1.75, heading=0.0)
        ego.straight(duration=3.0, speed=12.0).lateral_shift(-7.0, 1.5, 12.0).straight(duration=4.0, speed=12.0)
        bystander = TrackBuilder("car_1", x=30.0, y=-8.75, heading=0.0)
        bystander.straight(duration=8.5, speed=12.0)
        rec = recording_from_tracks("r", [ego, bystander])
        assert detect_cut_in_out(rec, m) == []


class TestRapidDecel:
    def test_hard_brake(self):
        b = ego_builder()
        b.straight(duration=2.0, speed=20.0).speed_ramp(20.0, 0.0, 4.0).hold(2.0)
        rec = recording_from_tracks("r", [b])
        tags = detect_rapid_decel(rec, "ego")
        assert len(tags) == 1
        assert tags[0].attributes["min_accel"] == pytest.approx(-5.0, rel=0.1)

    def test_gentle_stop_no_tag(self):
        b = ego_builder()
        b.straight(duration=2.0, speed=5.0).speed_ramp(5.0, 0.0, 5.0).hold(2.0)
        rec = recording_from_tracks("r", [b])
        assert detect_rapid_decel(rec, "ego") == []

    def test_single_frame_spike_filtered(self):
        b = ego_builder()
        b.straight(duration=4.0, speed=20.0)
        rec = recording_from_tracks("r", [b])
        rec.cols[20, 3] = 1.0  # one corrupted speed sample
        assert detect_rapid_decel(rec, "ego") == []


class TestMergeStopIntersection:
    def merge_map(self):
        return MapModel(
            roads=[
                Road("fwy", [(-400.0, 0.0), (400.0, 0.0)], [Lane(-1, 3.5), Lane(-2, 3.5)], RoadwayType.FREEWAY),
                Road("ramp", [(-260.0, -20.0), (-60.0, -3.5)], [Lane(-1, 3.5)], RoadwayType.FREEWAY_RAMP),
            ]
        )

    def test_ramp_merge(self):
        m = self.merge_map()
        d = np.array([200.0, 16.5])
        length = float(np.hypot(*d))
        heading = math.atan2(d[1], d[0])
        nx, ny = d[1] / length, -d[0] / length  # right normal
        b = ego_builder(x=-260.0 + 1.75 * nx, y=-20.0 + 1.75 * ny, heading=heading)
        b.straight(duration=8.0, speed=25.0)
        b.face(0.0)
        b.straight(duration=5.0, speed=25.0)
        rec = recording_from_tracks("r", [b])
        tags = detect_merge(rec, m, "ego")
        assert len(tags) == 1
        assert tags[0].attributes["mean_speed"] == pytest.approx(25.0, rel=0.05)

    def test_plain_lane_change_not_merge(self):
        m = boulevard_map(2)
        b = ego_builder(x=0.0, y=-1.75, heading=0.0)
        b.straight(duration=3.0, speed=20.0).lateral_shift(-3.5, 2.0, 20.0).straight(duration=3.0, speed=20.0)
        rec = recording_from_tracks("r", [b])
        assert detect_merge(rec, m, "ego") == []

    def test_slow_merge_still_tagged(self):
        m = self.merge_map()
        d = np.array([200.0, 16.5])
        length = float(np.hypot(*d))
        heading = math.atan2(d[1], d[0])
        nx, ny = d[1] / length, -d[0] / length
        b = ego_builder(x=-260.0 + 1.75 * nx, y=-20.0 + 1.75 * ny, heading=heading)
        b.straight(duration=20.0, speed=10.0)
        b.face(0.0)
        b.straight(duration=5.0, speed=10.0)
        rec = recording_from_tracks("r", [b])
        tags = detect_merge(rec, m, "ego")
        assert len(tags) == 1
        assert tags[0].attributes["mean_speed"] == pytest.approx(10.0, rel=0.05)

    def junction_map(self):
        lanes = [Lane(-1, 3.5), Lane(1, 3.5)]
        return MapModel(
            roads=[
                Road("ew", [(-200.0, 0.0), (200.0, 0.0)], lanes, RoadwayType.ARTERIAL),
                Road("n", [(0.0, 10.0), (0.0, 200.0)], lanes, RoadwayType.LOCAL),
            ],
            junctions=[Junction("j1", (0.0, 0.0), 12.0, 3, ("ew", "n"))],
        )

    def test_crossing_junction(self):
        m = self.junction_map()
        b = ego_builder(x=-100.0, y=-1.75, heading=0.0)
        b.straight(duration=20.0, speed=10.0)
        rec = recording_from_tracks("r", [b])
        tags = detect_intersection_presence(rec, m, "ego")
        assert len(tags) == 1
        assert tags[0].attributes["junction_id"] == "j1"
        assert tags[0].attributes["arity"] == 3
        # Buffer is radius + 10 = 22 m around x=0, entered at x=-22.
        assert tags[0].t_start == pytest.approx((100 - 22) / 10, abs=0.2)
        assert tags[0].t_end == pytest.approx((100 + 22) / 10, abs=0.2)

    def test_far_from_junction(self):
        m = self.junction_map()
        b = ego_builder(x=-100.0, y=100.0, heading=0.0)
        b.straight(duration=10.0, speed=10.0)
        rec = recording_from_tracks("r", [b])
        assert detect_intersection_presence(rec, m, "ego") == []

    def test_stop_and_go_merges_single_tag(self):
        m = self.junction_map()
        b = ego_builder(x=-30.0, y=-1.75, heading=0.0)
        b.straight(duration=1.5, speed=8.0).hold(0.8).straight(duration=1.5, speed=8.0).hold(0.8)
        b.straight(duration=3.0, speed=8.0)
        rec = recording_from_tracks("r", [b])
        tags = detect_intersection_presence(rec, m, "ego")
        assert len(tags) == 1

    def test_stop_detector(self):
        b = ego_builder()
        b.straight(duration=2.0, speed=5.0).speed_ramp(5.0, 0.0, 2.0).hold(3.0).speed_ramp(0.0, 5.0, 2.0)
        rec = recording_from_tracks("r", [b])
        tags = detect_stops(rec, "ego")
        assert len(tags) == 1
        assert tags[0].t_start == pytest.approx(4.0, abs=0.3)
        assert tags[0].t_end == pytest.approx(7.0, abs=0.3)


class TestTagRecording:
    def test_straight_track_empty(self):
        b = ego_builder().straight(duration=10.0, speed=10.0)
        rec = recording_from_tracks("r", [b])
        assert tag_recording(rec, boulevard_map()) == []

    def test_turn_plus_lane_change(self):
        m = boulevard_map(2)
        b = ego_builder(x=0.0, y=-1.75, heading=0.0)
        b.straight(duration=3.0, speed=10.0).lateral_shift(-3.5, 3.0, 10.0).straight(duration=10.0, speed=10.0)
        b.arc(math.pi / 2, 10.0, 10.0)
        rec = recording_from_tracks("r", [b])
        tags = tag_recording(rec, m)
        kinds = sorted(t.kind.value for t in tags)
        assert kinds == ["lane_change_right", "turn_left"]

    def test_deterministic(self):
        m = boulevard_map(2)
        b = ego_builder(x=0.0, y=-1.75, heading=0.0)
        b.straight(duration=3.0, speed=10.0).lateral_shift(-3.5, 3.0, 10.0).straight(duration=3.0, speed=10.0)
        rec = recording_from_tracks("r", [b])
        assert tag_recording(rec, m) == tag_recording(rec, m)


def mk_tag(kind, t0, t1, rid="r", actor="ego"):
    return EventTag(recording_id=rid, actor_id=actor, kind=kind, t_start=t0, t_end=t1)


class TestEvaluateTagger:
    def test_identity_all_ones(self):
        tags = [
            mk_tag(EventKind.TURN_LEFT, 0.0, 2.0),
            mk_tag(EventKind.LANE_CHANGE_LEFT, 4.0, 6.0),
            mk_tag(EventKind.CUT_IN, 8.0, 9.0),
        ]
        report = evaluate_tagger(tags, tags)
        for metrics in report.per_kind.values():
            assert metrics.precision == 1.0 and metrics.recall == 1.0 and metrics.f1 == 1.0

    def test_three_of_five_turns(self):
        truth = [mk_tag(EventKind.TURN_LEFT, 10.0 * i, 10.0 * i + 3.0) for i in range(5)]
        predicted = truth[:3]
        report = evaluate_tagger(predicted, truth)
        m = report.per_kind[EventKind.TURN_LEFT]
        assert m.precision == 1.0
        assert m.recall == pytest.approx(0.6)

    def test_spurious_prediction(self):
        truth = [mk_tag(EventKind.TURN_LEFT, 10.0 * i, 10.0 * i + 3.0) for i in range(5)]
        predicted = truth + [mk_tag(EventKind.TURN_LEFT, 90.0, 93.0)]
        report = evaluate_tagger(predicted, truth)
        m = report.per_kind[EventKind.TURN_LEFT]
        assert m.precision == pytest.approx(5 / 6)
        assert m.recall == 1.0

    def test_iou_threshold_respected(self):
        truth = [mk_tag(EventKind.TURN_LEFT, 0.0, 10.0)]
        nearly = [mk_tag(EventKind.TURN_LEFT, 8.0, 18.0)]  # IoU = 2/18
        report = evaluate_tagger(nearly, truth, iou_min=0.5)
        m = report.per_kind[EventKind.TURN_LEFT]
        assert m.tp == 0 and m.fp == 1 and m.fn == 1
