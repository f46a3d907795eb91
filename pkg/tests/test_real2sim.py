import math
import os

import numpy as np
import pytest

from scenariokit.index import ScenarioSegment
from scenariokit.real2sim import (
    RelativeDistanceCondition,
    SimulationTimeCondition,
    add_relative_distance_trigger,
    build_scenario,
    replay_frames,
    replay_scenario,
    substitute_parameters,
)
from scenariokit.synthetic import TrackBuilder, make_random_recording, recording_from_tracks
from scenariokit.xosc import (
    UnsupportedElementError,
    read_openscenario,
    validate_openscenario,
    write_openscenario,
)


def segment(rec, t0, t1):
    return ScenarioSegment(recording_id=rec.recording_id, t_start=t0, t_end=t1, matched_fields=())


def simple_recording():
    ego = TrackBuilder("ego", x=0.0, y=0.0, heading=0.0, ego=True)
    ego.straight(duration=8.0, speed=10.0)
    other = TrackBuilder("car-1", x=30.0, y=3.5, heading=0.0)
    other.straight(duration=8.0, speed=8.0)
    return recording_from_tracks("r", [ego, other])


def replay_error(rec, doc, t0, t1):
    """Max and RMS position error between replay and the recorded frames,
    measured inside each entity's trajectory window (outside it the twin
    holds a pose by design, which is not resampling error)."""
    result = replay_scenario(doc)
    windows = {}
    for event, entity in doc.iter_events():
        windows[entity] = (
            event.trigger.at,
            event.trigger.at + event.action.duration,
        )
    errs = []
    for actor_id in rec.actor_ids():
        track = rec.track(actor_id)
        name = "Ego" if track.is_ego else actor_id.replace("-", "_")
        if name not in result.states:
            continue
        w0, w1 = windows[name]
        mask = (track.times >= t0 + w0 - 1e-9) & (track.times <= t0 + w1 + 1e-9)
        times = track.times[mask] - t0
        arr = result.states[name]
        rx = np.interp(times, result.times, arr[:, 0])
        ry = np.interp(times, result.times, arr[:, 1])
        errs.extend(np.hypot(rx - track.x[mask], ry - track.y[mask]).tolist())
    errs = np.asarray(errs)
    return float(np.sqrt(np.mean(errs**2))), float(np.max(errs))


class TestBuildScenario:
    def test_structure(self):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 1.0, 6.0))
        assert [e.name for e in doc.entities] == ["Ego", "car_1"]
        assert len(list(doc.iter_groups())) == 2
        for event, _ in doc.iter_events():
            assert event.action.times[1] - event.action.times[0] == pytest.approx(0.1)

    def test_vertex_count_five_seconds(self):
        ego = TrackBuilder("ego", ego=True).straight(duration=10.0, speed=5.0)
        rec = recording_from_tracks("r", [ego])
        doc = build_scenario(rec, segment(rec, 2.0, 7.0))
        (event, _), = list(doc.iter_events())
        assert len(event.action.times) == 51

    def test_empty_segment_rejected(self):
        rec = simple_recording()
        with pytest.raises(ValueError, match="empty segment"):
            build_scenario(rec, segment(rec, 3.0, 3.0))

    def test_short_actor_dropped_with_warning(self):
        ego = TrackBuilder("ego", ego=True).straight(duration=10.0, speed=5.0)
        blip = TrackBuilder("blip", x=5.0, y=5.0)
        blip.straight(duration=0.1, speed=1.0)  # two samples at 0.0/0.1
        rec = recording_from_tracks("r", [ego, blip])
        with pytest.warns(UserWarning, match="blip"):
            doc = build_scenario(rec, segment(rec, 0.05, 8.0))
        assert [e.name for e in doc.entities] == ["Ego"]

    def test_replay_round_trip_simple(self):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 0.5, 7.5))
        rms, peak = replay_error(rec, doc, 0.5, 7.5)
        assert rms <= 0.1
        assert peak <= 0.5

    def test_replay_round_trip_randomized(self):
        for i in range(8):
            rec = make_random_recording(f"rand{i}", seed=100 + i)
            t0 = rec.t_start + 0.25
            t1 = rec.t_end - 0.25
            doc = build_scenario(rec, segment(rec, t0, t1))
            rms, peak = replay_error(rec, doc, t0, t1)
            assert rms <= 0.1, f"seed {i}: rms {rms}"
            assert peak <= 0.5, f"seed {i}: peak {peak}"


class TestReplay:
    def test_linear_trajectory_sampled_on_line(self):
        ego = TrackBuilder("ego", ego=True).straight(duration=5.0, speed=10.0)
        rec = recording_from_tracks("r", [ego])
        doc = build_scenario(rec, segment(rec, 0.0, 5.0))
        result = replay_scenario(doc)
        xs = result.states["Ego"][:, 0]
        assert np.allclose(xs, 10.0 * result.times, atol=1e-6)
        assert np.allclose(result.states["Ego"][:, 1], 0.0, atol=1e-9)

    def test_simulation_time_trigger_holds_pose(self):
        ego = TrackBuilder("ego", ego=True).straight(duration=5.0, speed=10.0)
        rec = recording_from_tracks("r", [ego])
        doc = build_scenario(rec, segment(rec, 0.0, 5.0))
        (event, _), = list(doc.iter_events())
        from dataclasses import replace

        doc.stories = (replace(
            doc.stories[0],
            acts=(replace(
                doc.stories[0].acts[0],
                groups=(replace(
                    doc.stories[0].acts[0].groups[0],
                    maneuvers=(replace(
                        doc.stories[0].acts[0].groups[0].maneuvers[0],
                        events=(replace(event, trigger=SimulationTimeCondition(at=2.0)),),
                    ),),
                ),),
            ),),
        ),)
        result = replay_scenario(doc, t_end=7.0)
        ego_x = result.states["Ego"][:, 0]
        before = result.times < 2.0 - 1e-9
        assert np.allclose(ego_x[before], 0.0)
        k = int(np.searchsorted(result.times, 2.0))
        assert ego_x[k] == pytest.approx(0.0, abs=1e-9)  # trajectory starts at its first vertex
        assert ego_x[-1] > 0

    def test_relative_distance_trigger_crossing_time(self):
        # Ego closes on a parked vehicle at 5 m/s from 100 m away; the
        # held maneuver starts once the gap drops below 20 m, i.e. just
        # after t = 80/5 = 16 s.
        ego = TrackBuilder("ego", x=0.0, y=0.0, heading=0.0, ego=True)
        ego.straight(duration=18.0, speed=5.0)
        other = TrackBuilder("car_1", x=100.0, y=0.0, heading=0.0)
        other.hold(2.0).straight(duration=16.0, speed=3.0)
        rec = recording_from_tracks("r", [ego, other])
        doc = build_scenario(rec, segment(rec, 0.0, 18.0))
        doc = add_relative_distance_trigger(doc, "car_1", 20.0, "<", "ev_car_1")
        result = replay_scenario(doc, t_end=18.0)
        fire = result.fire_times["ev_car_1"]
        crossing = (100.0 - 20.0) / 5.0
        assert fire is not None
        assert fire == pytest.approx(crossing, abs=0.1 + 1e-9)

    def test_trigger_monotonicity(self):
        ego = TrackBuilder("ego", x=0.0, y=0.0, heading=0.0, ego=True)
        ego.straight(duration=18.0, speed=5.0)
        other = TrackBuilder("car_1", x=100.0, y=0.0, heading=0.0)
        other.hold(18.0)
        rec = recording_from_tracks("r", [ego, other])
        base = build_scenario(rec, segment(rec, 0.0, 18.0))
        fires = []
        for threshold in (40.0, 30.0, 20.0, 10.0):
            doc = add_relative_distance_trigger(base, "car_1", threshold, "<", "ev_car_1")
            result = replay_scenario(doc, t_end=18.0)
            fire = result.fire_times["ev_car_1"]
            fires.append(math.inf if fire is None else fire)
        assert fires[0] != math.inf
        assert all(a <= b for a, b in zip(fires, fires[1:]))

    def test_deterministic(self):
        rec = make_random_recording("d", seed=5)
        doc = build_scenario(rec, segment(rec, rec.t_start, rec.t_end))
        r1 = replay_scenario(doc)
        r2 = replay_scenario(doc)
        for name in r1.states:
            assert np.array_equal(r1.states[name], r2.states[name])

    def test_replay_frames_have_ego(self):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 0.0, 5.0))
        frames = replay_frames(replay_scenario(doc))
        assert all(sum(a.is_ego for a in f.actors) == 1 for f in frames)


class TestTriggerApi:
    def test_zero_distance_rejected(self):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 0.0, 5.0))
        with pytest.raises(ValueError, match="threshold"):
            add_relative_distance_trigger(doc, "car_1", 0.0, "<", "ev_car_1")

    def test_unknown_entity_and_event(self):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 0.0, 5.0))
        with pytest.raises(ValueError, match="unknown entity"):
            add_relative_distance_trigger(doc, "ghost", 10.0, "<", "ev_car_1")
        with pytest.raises(ValueError, match="unknown event"):
            add_relative_distance_trigger(doc, "car_1", 10.0, "<", "ev_ghost")

    def test_trigger_replaced(self):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 0.0, 5.0))
        doc2 = add_relative_distance_trigger(doc, "car_1", 25.0, "<", "ev_car_1")
        triggers = {e.name: e.trigger for e, _ in doc2.iter_events()}
        assert isinstance(triggers["ev_car_1"], RelativeDistanceCondition)
        assert isinstance(triggers["ev_Ego"], SimulationTimeCondition)
        # Original untouched.
        assert isinstance(dict((e.name, e.trigger) for e, _ in doc.iter_events())["ev_car_1"], SimulationTimeCondition)


class TestXoscRoundTrip:
    def test_minimal_structure(self, tmp_path):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 0.0, 5.0))
        path = os.path.join(tmp_path, "s.xosc")
        write_openscenario(doc, path)
        text = open(path).read()
        for tag in ("Storyboard", "Story", "Act", "ManeuverGroup", "FollowTrajectoryAction", "Polyline"):
            assert f"<{tag}" in text

    def test_round_trip_equality(self, tmp_path):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 0.5, 6.5))
        doc = add_relative_distance_trigger(doc, "car_1", 15.0, "<", "ev_car_1")
        path = os.path.join(tmp_path, "s.xosc")
        write_openscenario(doc, path)
        assert read_openscenario(path) == doc

    def test_round_trip_randomized(self, tmp_path):
        for i in range(6):
            rec = make_random_recording(f"x{i}", seed=200 + i, n_actors=int(2 + i % 3))
            doc = build_scenario(rec, segment(rec, rec.t_start + 0.2, rec.t_end - 0.2))
            path = os.path.join(tmp_path, f"s{i}.xosc")
            write_openscenario(doc, path)
            assert read_openscenario(path) == doc

    def test_structural_validation_passes(self, tmp_path):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 0.0, 5.0))
        path = os.path.join(tmp_path, "s.xosc")
        write_openscenario(doc, path)
        assert validate_openscenario(path) == []

    def test_unknown_action_rejected(self, tmp_path):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 0.0, 5.0))
        path = os.path.join(tmp_path, "s.xosc")
        write_openscenario(doc, path)
        text = open(path).read().replace("RoutingAction", "ActivateControllerAction")
        bad = os.path.join(tmp_path, "bad.xosc")
        open(bad, "w").write(text)
        with pytest.raises(UnsupportedElementError, match="ActivateControllerAction"):
            read_openscenario(bad)
        assert any("ActivateControllerAction" in v for v in validate_openscenario(bad))

    def test_byte_identical_given_same_input(self, tmp_path):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 0.0, 5.0))
        p1 = os.path.join(tmp_path, "a.xosc")
        p2 = os.path.join(tmp_path, "b.xosc")
        write_openscenario(doc, p1)
        write_openscenario(doc, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()


class TestParameterSubstitution:
    def test_substitute_speed_and_threshold(self):
        rec = simple_recording()
        doc = build_scenario(rec, segment(rec, 0.0, 5.0))
        doc = add_relative_distance_trigger(doc, "car_1", "$gap", "<", "ev_car_1")
        from dataclasses import replace
        from scenariokit.real2sim import ParameterDecl

        doc.init["Ego"] = replace(doc.init["Ego"], speed="$v0")
        doc.parameters = (
            ParameterDecl("v0", "double", "10.0"),
            ParameterDecl("gap", "double", "20.0"),
        )
        assert doc.parameter_names() == {"v0", "gap"}
        concrete = substitute_parameters(doc, {"v0": 12.5, "gap": 18.0})
        assert concrete.init["Ego"].speed == 12.5
        trig = dict((e.name, e.trigger) for e, _ in concrete.iter_events())["ev_car_1"]
        assert trig.threshold == 18.0
        with pytest.raises(ValueError, match="unresolved"):
            replay_scenario(doc)
