"""Synthetic recordings, corpora and fixtures.

Everything here is deterministic given a seed. The fixture corpus built by
make_fixture_corpus carries its own hand-derived ground truth (tag windows,
query answers, safety phase labels), which the test suites treat as the
independent reference.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .mapmodel import (
    Junction,
    Lane,
    MapModel,
    Road,
    RoadwayType,
    SignFeature,
    SignalFeature,
    SignalState,
)
from .recording import ActorClass, DEFAULT_DIMENSIONS, Recording, normalize_angle


class TrackBuilder:
    """Piecewise-analytic vehicle track sampled on a fixed time grid.

    Primitives append samples at multiples of dt; positions come from exact
    kinematic integration, so generated tracks double as oracles.
    """

    def __init__(
        self,
        actor_id: str,
        x: float = 0.0,
        y: float = 0.0,
        heading: float = 0.0,
        t0: float = 0.0,
        dt: float = 0.1,
        actor_class: ActorClass = ActorClass.CAR,
        length: float | None = None,
        width: float | None = None,
        ego: bool = False,
    ):
        self.actor_id = actor_id
        self.dt = dt
        self.actor_class = actor_class
        default_l, default_w = DEFAULT_DIMENSIONS[actor_class]
        self.length = length if length is not None else default_l
        self.width = width if width is not None else default_w
        self.ego = ego
        self._x = x
        self._y = y
        self._h = heading
        self._t = t0
        self.times = [t0]
        self.xs = [x]
        self.ys = [y]
        self.headings = [heading]
        self.speeds = [0.0]

    def _push(self, x: float, y: float, h: float, v: float) -> None:
        self._t += self.dt
        self._x, self._y, self._h = x, y, h
        self.times.append(self._t)
        self.xs.append(x)
        self.ys.append(y)
        self.headings.append(h)
        self.speeds.append(v)

    def _steps(self, duration: float) -> int:
        n = max(1, round(duration / self.dt))
        return n

    def _entry_speed(self, v: float) -> None:
        # The initial sample defaults to standstill; a moving first segment
        # owns it.
        if len(self.times) == 1 and self.speeds[0] == 0.0:
            self.speeds[0] = v

    def face(self, heading: float) -> "TrackBuilder":
        """Snap the current heading without moving (small corrections)."""
        self._h = heading
        self.headings[-1] = heading
        return self

    def straight(self, duration: float | None = None, speed: float = 10.0, distance: float | None = None) -> "TrackBuilder":
        if duration is None:
            duration = distance / speed
        self._entry_speed(speed)
        n = self._steps(duration)
        cx, cy = math.cos(self._h), math.sin(self._h)
        for _ in range(n):
            self._push(self._x + speed * self.dt * cx, self._y + speed * self.dt * cy, self._h, speed)
        return self

    def hold(self, duration: float) -> "TrackBuilder":
        for _ in range(self._steps(duration)):
            self._push(self._x, self._y, self._h, 0.0)
        return self

    def arc(self, angle: float, radius: float, speed: float) -> tuple["TrackBuilder", float]:
        """Constant-radius turn; positive angle = left.

        The duration snaps to the tick grid, so the realized speed is
        radius * |angle| / (n * dt); it is returned for use as ground truth.
        """
        duration = radius * abs(angle) / speed
        n = self._steps(duration)
        omega = angle / (n * self.dt)
        v = radius * abs(omega)
        self._entry_speed(v)
        r_s = radius if angle > 0 else -radius
        # Center sits at p + r_s * (-sin h, cos h).
        cx = self._x - r_s * math.sin(self._h)
        cy = self._y + r_s * math.cos(self._h)
        h0 = self._h
        for i in range(1, n + 1):
            h = h0 + omega * i * self.dt
            x = cx + r_s * math.sin(h)
            y = cy - r_s * math.cos(h)
            self._push(x, y, h, v)
        return self, v

    def speed_ramp(self, v0: float, v1: float, duration: float) -> "TrackBuilder":
        """Linear speed change along the current heading (exact trapezoid)."""
        self._entry_speed(v0)
        n = self._steps(duration)
        cx, cy = math.cos(self._h), math.sin(self._h)
        for i in range(1, n + 1):
            va = v0 + (v1 - v0) * (i - 1) / n
            vb = v0 + (v1 - v0) * i / n
            step = (va + vb) / 2 * self.dt
            self._push(self._x + step * cx, self._y + step * cy, self._h, vb)
        return self

    def lateral_shift(self, offset: float, duration: float, speed: float) -> "TrackBuilder":
        """Smoothstep lateral displacement (positive = left) while keeping
        longitudinal speed; the usual lane-change shape."""
        self._entry_speed(speed)
        n = self._steps(duration)
        h0 = self._h
        cx, cy = math.cos(h0), math.sin(h0)
        nx, ny = -math.sin(h0), math.cos(h0)
        x0, y0 = self._x, self._y
        total = n * self.dt
        for i in range(1, n + 1):
            tau = i / n
            s = 3 * tau**2 - 2 * tau**3
            ds = (6 * tau - 6 * tau**2) / total  # d s / d t
            along = speed * i * self.dt
            lat = offset * s
            lat_v = offset * ds
            x = x0 + along * cx + lat * nx
            y = y0 + along * cy + lat * ny
            h = h0 + math.atan2(lat_v, speed)
            v = math.hypot(speed, lat_v)
            self._push(x, y, h, v)
        return self


def recording_from_tracks(
    recording_id: str,
    tracks: list[TrackBuilder],
    meta: dict | None = None,
) -> Recording:
    """Assemble builder tracks into a Recording. Exactly one track must be
    the ego and it must span the full time range."""
    egos = [t for t in tracks if t.ego]
    if len(egos) != 1:
        raise ValueError("exactly one ego track required")
    grid: dict[float, list[tuple]] = {}
    dt = tracks[0].dt
    for tr in tracks:
        if abs(tr.dt - dt) > 1e-12:
            raise ValueError("all tracks must share dt")
        for i, t in enumerate(tr.times):
            key = round(t / dt)
            grid.setdefault(key, []).append(
                (
                    tr.actor_id,
                    tr.actor_class,
                    tr.xs[i],
                    tr.ys[i],
                    tr.headings[i],
                    tr.speeds[i],
                    tr.length,
                    tr.width,
                    tr.ego,
                )
            )
    keys = sorted(grid)
    ego_keys = {round(t / dt) for t in egos[0].times}
    if not set(keys) <= ego_keys:
        raise ValueError("ego track must span every frame")

    times = []
    offsets = [0]
    id_pool: list[str] = []
    pool_idx: dict[str, int] = {}
    id_rows: list[int] = []
    class_rows: list[int] = []
    col_rows: list[tuple] = []
    ego_row = []
    class_order = {c: i for i, c in enumerate(ActorClass)}
    row = 0
    for key in keys:
        times.append(key * dt)
        for entry in grid[key]:
            aid, cls, x, y, h, v, length, width, is_ego = entry
            if aid not in pool_idx:
                pool_idx[aid] = len(id_pool)
                id_pool.append(aid)
            if is_ego:
                ego_row.append(row)
            id_rows.append(pool_idx[aid])
            class_rows.append(class_order[cls])
            col_rows.append((x, y, normalize_angle(h), v, length, width))
            row += 1
        offsets.append(row)
    rec = Recording(
        recording_id=recording_id,
        times=np.asarray(times),
        offsets=np.asarray(offsets, dtype=np.int64),
        id_idx=np.asarray(id_rows, dtype=np.int32),
        class_idx=np.asarray(class_rows, dtype=np.int8),
        cols=np.asarray(col_rows, dtype=np.float64),
        ego_row=np.asarray(ego_row, dtype=np.int64),
        id_pool=id_pool,
        source_meta=meta or {},
    )
    rec.validate()
    return rec


def recording_to_jsonl(rec: Recording) -> str:
    """Serialize a Recording back to the JSON-Lines interchange format."""
    lines = [json.dumps({"recording_id": rec.recording_id, "meta": rec.source_meta})]
    for i in range(rec.n_frames):
        frame = rec.frame(i)
        actors = [
            {
                "id": a.actor_id,
                "class": a.actor_class.value,
                "x": round(a.x, 6),
                "y": round(a.y, 6),
                "heading": round(a.heading, 9),
                "speed": round(a.speed, 6),
                "length": a.length,
                "width": a.width,
                "ego": a.is_ego,
            }
            for a in frame.actors
        ]
        lines.append(json.dumps({"t": round(frame.t, 6), "actors": actors}))
    return "\n".join(lines) + "\n"


# -- bulk corpus for throughput benchmarks ------------------------------------


def generate_recording_lines(recording_id: str, n_frames: int, n_actors: int, seed: int, dt: float = 0.04):
    """Yield JSONL lines of a plausible multi-actor drive (vectorized)."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-100, 100, n_actors)
    y = rng.uniform(-10, 10, n_actors)
    h = rng.uniform(-math.pi, math.pi, n_actors)
    v = rng.uniform(3, 30, n_actors)
    yaw = rng.uniform(-0.1, 0.1, n_actors)
    yield json.dumps({"recording_id": recording_id, "meta": {"dataset": "synthetic"}})
    ids = [f"a{k}" for k in range(n_actors)]
    for i in range(n_frames):
        t = round(i * dt, 4)
        h = h + yaw * dt
        x = x + v * dt * np.cos(h)
        y = y + v * dt * np.sin(h)
        actors = []
        for k in range(n_actors):
            actors.append(
                {
                    "id": ids[k],
                    "class": "car",
                    "x": round(float(x[k]), 3),
                    "y": round(float(y[k]), 3),
                    "heading": round(float(normalize_angle(h[k])), 4),
                    "speed": round(float(v[k]), 3),
                    "ego": k == 0,
                }
            )
        yield json.dumps({"t": t, "actors": actors})


def generate_jsonl_corpus(
    directory: str, total_bytes: int, n_files: int = 8, seed: int = 0, n_actors: int = 8
) -> list[str]:
    """Write ~total_bytes of synthetic recordings split over n_files."""
    os.makedirs(directory, exist_ok=True)
    per_file = max(1, total_bytes // n_files)
    paths = []
    for fi in range(n_files):
        path = os.path.join(directory, f"synthetic_{fi:03d}.jsonl")
        written = 0
        with open(path, "w", encoding="utf-8") as fh:
            gen = generate_recording_lines(f"synthetic_{fi:03d}", n_frames=1_000_000, n_actors=n_actors, seed=seed * 1000 + fi)
            for line in gen:
                fh.write(line + "\n")
                written += len(line) + 1
                if written >= per_file:
                    break
        paths.append(path)
    return paths


# -- turn corpus ---------------------------------------------------------------


@dataclass(frozen=True)
class TurnTruth:
    recording_id: str
    actor_id: str
    t_start: float
    t_end: float
    speed: float
    angle: float  # signed, left positive
    radius: float


def make_turn_corpus(n: int = 100, seed: int = 0, dt: float = 0.1):
    """Ego-only recordings each containing exactly one turn with known
    parameters. Returns (recordings, truths)."""
    rng = np.random.default_rng(seed)
    recordings: list[Recording] = []
    truths: list[TurnTruth] = []
    lead = 4.0
    for i in range(n):
        while True:
            radius = float(rng.uniform(6, 20))
            angle = float(rng.uniform(math.radians(60), math.radians(130)))
            duration = float(rng.uniform(2.0, 6.0))
            speed = radius * angle / duration
            if 3.0 <= speed <= 12.0:
                break
        if rng.random() < 0.5:
            angle = -angle
        heading0 = float(rng.uniform(-math.pi, math.pi))
        builder = TrackBuilder(
            "ego",
            x=float(rng.uniform(-50, 50)),
            y=float(rng.uniform(-50, 50)),
            heading=heading0,
            dt=dt,
            ego=True,
        )
        builder.straight(duration=lead, speed=speed)
        _, v_actual = builder.arc(angle, radius, speed)
        n_ticks = max(1, round(radius * abs(angle) / speed / dt))
        builder.straight(duration=lead, speed=v_actual)
        rec = recording_from_tracks(f"turn_{i:03d}", [builder])
        recordings.append(rec)
        truths.append(
            TurnTruth(
                recording_id=rec.recording_id,
                actor_id="ego",
                t_start=lead,
                t_end=lead + n_ticks * dt,
                speed=v_actual,
                angle=angle,
                radius=radius,
            )
        )
    return recordings, truths


# -- randomized smooth drives (digital-twin round trips) -----------------------


def make_random_recording(recording_id: str, seed: int, n_actors: int = 3, dt: float = 0.1) -> Recording:
    """Multi-actor drive made of random straight/arc/speed segments; smooth
    enough that 10 Hz resampling stays well under the round-trip bounds."""
    rng = np.random.default_rng(seed)
    duration = float(rng.uniform(8, 15))
    tracks = []
    for k in range(n_actors):
        builder = TrackBuilder(
            f"a{k}" if k else "ego",
            x=float(rng.uniform(-40, 40)),
            y=float(rng.uniform(-40, 40)),
            heading=float(rng.uniform(-math.pi, math.pi)),
            dt=dt,
            ego=k == 0,
        )
        remaining = duration if k == 0 else float(rng.uniform(4, duration))
        speed = float(rng.uniform(4, 18))
        while remaining > 0.05:
            kind = rng.integers(0, 3)
            if kind == 0:
                seg = min(remaining, float(rng.uniform(1, 4)))
                builder.straight(duration=seg, speed=speed)
            elif kind == 1:
                radius = float(rng.uniform(8, 40))
                angle = float(rng.uniform(-1.2, 1.2))
                seg_len = radius * abs(angle)
                seg = seg_len / speed
                if seg > remaining or abs(angle) < 0.05:
                    seg = min(remaining, 1.0)
                    builder.straight(duration=seg, speed=speed)
                else:
                    builder.arc(angle, radius, speed)
                    seg = max(0.1, round(radius * abs(angle) / speed / dt) * dt)
            else:
                new_speed = float(rng.uniform(4, 18))
                seg = min(remaining, float(rng.uniform(1, 3)))
                builder.speed_ramp(speed, new_speed, seg)
                speed = new_speed
            remaining -= seg
        # Pad the ego exactly to the full duration.
        if k == 0 and builder.times[-1] < duration - 1e-9:
            builder.straight(duration=duration - builder.times[-1], speed=speed)
        tracks.append(builder)
    # Trim non-ego tracks that overshoot the ego span.
    ego_end = tracks[0].times[-1]
    for tr in tracks[1:]:
        while tr.times and tr.times[-1] > ego_end + 1e-9:
            tr.times.pop(), tr.xs.pop(), tr.ys.pop(), tr.headings.pop(), tr.speeds.pop()
    return recording_from_tracks(recording_id, tracks)


# -- synthetic metadata records (index latency benchmarks) ---------------------


def generate_metadata_records(n: int, seed: int = 0):
    """Metadata records with values from small pools so query cost tracks
    match counts (what makes latency scale with index size)."""
    from .index import MetadataRecord

    rng = np.random.default_rng(seed)
    events = ["turn", "lane_change", "cut_in", "cut_out", "merge", "stop", "rapid_decel"]
    strings = {
        "event": events,
        "turn": ["left", "right"],
        "ODD.intersection": ["3-way", "4-way"],
        "ODD.roadway_type": [t.value for t in RoadwayType],
        "ODD.signage": ["stop", "yield", "speed_limit"],
        "ODD.traffic_signal": ["red", "amber", "green"],
        "ego_vehicle_event": events,
    }
    fields = list(strings) + ["speed"]
    records = []
    n_recordings = max(1, n // 1000)
    field_pick = rng.integers(0, len(fields), n)
    rec_pick = rng.integers(0, n_recordings, n)
    t0s = rng.uniform(0, 590, n)
    lens = rng.uniform(1, 10, n)
    value_u = rng.random(n)
    for i in range(n):
        fname = fields[field_pick[i]]
        if fname == "speed":
            value: str | float = float(value_u[i] * 40.0)
        else:
            pool = strings[fname]
            value = pool[int(value_u[i] * len(pool)) % len(pool)]
        records.append(
            MetadataRecord(
                recording_id=f"r{rec_pick[i]:05d}",
                t_start=float(t0s[i]),
                t_end=float(t0s[i] + lens[i]),
                field=fname,
                value=value,
            )
        )
    return records


# -- hand-labelled fixture corpus ----------------------------------------------

TABLE_QUERIES = [
    "event=lane_change",
    "ODD.signage=stop & ODD.traffic_signal=red",
    "ODD.intersection=3-way & turn=left||right",
    "ego_vehicle_event=merge & speed>50mph & ODD.roadway_type=freeway",
]


@dataclass
class FixtureCorpus:
    recordings: list[Recording]
    map_model: MapModel
    # query text -> expected [(recording_id, t_start, t_end)]
    query_truth: dict[str, list[tuple[str, float, float]]]
    # hand labels for detector evaluation: (recording_id, actor_id, kind value, t0, t1)
    tag_truth: list[tuple[str, str, str, float, float]] = field(default_factory=list)
    # safety probes on the three-phase recording: (t, {other_actor: "safe"/"unsafe"})
    three_phase_recording_id: str = ""
    three_phase_probes: list[tuple[float, dict[str, str]]] = field(default_factory=list)


def fixture_map() -> MapModel:
    lanes2 = [Lane(-1, 3.5), Lane(1, 3.5)]
    model = MapModel(
        roads=[
            Road("main_ew", [(-200.0, 0.0), (200.0, 0.0)], lanes2, RoadwayType.ARTERIAL),
            Road("stub_n", [(0.0, 12.0), (0.0, 200.0)], lanes2, RoadwayType.LOCAL),
            Road("fwy", [(-400.0, 1000.0), (400.0, 1000.0)], [Lane(-1, 3.5), Lane(-2, 3.5)], RoadwayType.FREEWAY),
            Road("ramp", [(-260.0, 980.0), (-60.0, 996.5)], [Lane(-1, 3.5)], RoadwayType.FREEWAY_RAMP),
            Road("approach", [(-420.0, 2000.0), (100.0, 2000.0)], lanes2, RoadwayType.LOCAL),
            Road(
                "boulevard",
                [(-100.0, 3000.0), (400.0, 3000.0)],
                [Lane(-1, 3.5), Lane(-2, 3.5), Lane(-3, 3.5)],
                RoadwayType.ARTERIAL,
            ),
        ],
        junctions=[Junction("j1", (0.0, 0.0), 12.0, 3, ("main_ew", "stub_n"))],
        signage=[SignFeature("sign_stop", "stop", (0.0, 1998.0), "approach")],
        signals=[
            SignalFeature(
                "tl1",
                "traffic_light",
                (0.0, 1998.0),
                "approach",
                (SignalState("red", 0.0, 30.0), SignalState("green", 30.0, 900.0)),
            )
        ],
    )
    model.validate()
    return model


def _ramp_lane_start_heading():
    d = np.array([200.0, 16.5])
    length = float(np.hypot(*d))
    direction = d / length
    heading = math.atan2(direction[1], direction[0])
    # Lane -1 center: 1.75 m right of the reference line.
    normal_right = np.array([direction[1], -direction[0]])
    start = np.array([-260.0, 980.0]) + 1.75 * normal_right
    return start, heading, length


def _turn_fixture(recording_id: str, left: bool):
    dt = 0.1
    speed = 7.0
    radius = 8.0
    if left:
        start = (-79.75, -1.75)
        heading = 0.0
        angle = math.pi / 2
    else:
        start = (83.25, 1.75)
        heading = math.pi
        angle = -math.pi / 2
    b = TrackBuilder("ego", x=start[0], y=start[1], heading=heading, dt=dt, ego=True)
    b.straight(duration=10.5, speed=speed)
    _, v_actual = b.arc(angle, radius, speed)
    n_ticks = max(1, round(radius * abs(angle) / speed / dt))
    b.straight(duration=5.0, speed=v_actual)
    rec = recording_from_tracks(recording_id, [b])
    turn_window = (10.5, 10.5 + n_ticks * dt)
    return rec, turn_window


def make_fixture_corpus() -> FixtureCorpus:
    """Ten synthetic recordings over fixture_map with hand-derived labels
    for the query battery, detector checks and the three-phase safety
    narrative."""
    dt = 0.1
    recs: list[Recording] = []
    tag_truth: list[tuple[str, str, str, float, float]] = []
    query_truth: dict[str, list[tuple[str, float, float]]] = {q: [] for q in TABLE_QUERIES}

    # 1 & 2: turns through the 3-way junction.
    rec1, w1 = _turn_fixture("rec01_turn_left", left=True)
    recs.append(rec1)
    tag_truth.append(("rec01_turn_left", "ego", "turn_left", w1[0], w1[1]))
    query_truth["ODD.intersection=3-way & turn=left||right"].append(("rec01_turn_left", w1[0], w1[1]))
    rec2, w2 = _turn_fixture("rec02_turn_right", left=False)
    recs.append(rec2)
    tag_truth.append(("rec02_turn_right", "ego", "turn_right", w2[0], w2[1]))
    query_truth["ODD.intersection=3-way & turn=left||right"].append(("rec02_turn_right", w2[0], w2[1]))

    # 3: ego lane change on the boulevard (lane -2 -> -1, leftward).
    b = TrackBuilder("ego", x=0.0, y=3000.0 - 5.25, heading=0.0, dt=dt, ego=True)
    b.straight(duration=6.0, speed=13.0).lateral_shift(3.5, 3.0, 13.0).straight(duration=6.0, speed=13.0)
    recs.append(recording_from_tracks("rec03_lane_change", [b]))
    tag_truth.append(("rec03_lane_change", "ego", "lane_change_left", 6.0, 9.0))
    query_truth["event=lane_change"].append(("rec03_lane_change", 6.0, 9.0))

    # 4: a non-ego lane change far ahead of the ego.
    ego = TrackBuilder("ego", x=0.0, y=3000.0 - 1.75, heading=0.0, dt=dt, ego=True)
    ego.straight(duration=15.0, speed=13.0)
    other = TrackBuilder("car_1", x=80.0, y=3000.0 - 5.25, heading=0.0, dt=dt)
    other.straight(duration=5.0, speed=13.0).lateral_shift(-3.5, 3.0, 13.0).straight(duration=7.0, speed=13.0)
    recs.append(recording_from_tracks("rec04_other_lane_change", [ego, other]))
    tag_truth.append(("rec04_other_lane_change", "car_1", "lane_change_right", 5.0, 8.0))
    query_truth["event=lane_change"].append(("rec04_other_lane_change", 5.0, 8.0))

    # 5 & 6: ramp-to-freeway merges, fast and slow.
    for rid, speed in (("rec05_merge_fast", 25.0), ("rec06_merge_slow", 10.0)):
        start, heading, length = _ramp_lane_start_heading()
        b = TrackBuilder("ego", x=float(start[0]), y=float(start[1]), heading=heading, dt=dt, ego=True)
        ramp_time = round(length / speed / dt) * dt
        b.straight(duration=ramp_time, speed=speed)
        b.face(0.0)
        b.straight(duration=6.0, speed=speed)
        recs.append(recording_from_tracks(rid, [b]))
        tag_truth.append((rid, "ego", "merge", ramp_time - 1.0, ramp_time + 1.0))
        if speed > 22.352:
            query_truth["ego_vehicle_event=merge & speed>50mph & ODD.roadway_type=freeway"].append(
                (rid, ramp_time, ramp_time + 1.0)
            )

    # 7: stop at the stop sign under a red signal.
    b = TrackBuilder("ego", x=-100.0, y=1998.25, heading=0.0, dt=dt, ego=True)
    b.straight(duration=6.0, speed=8.0).speed_ramp(8.0, 0.0, 8.0).hold(4.0).speed_ramp(0.0, 8.0, 4.0).straight(
        duration=4.0, speed=8.0
    )
    recs.append(recording_from_tracks("rec07_stop_red", [b]))
    tag_truth.append(("rec07_stop_red", "ego", "stop", 14.0, 18.0))
    # Sign proximity (30 m) begins at x=-30 during the decel ramp; red holds
    # throughout the 26 s recording.
    query_truth["ODD.signage=stop & ODD.traffic_signal=red"].append(("rec07_stop_red", 9.41, 26.0))

    # 8: drive-through on green (starts far back so the transit lands after
    # the signal flips at t=30).
    b = TrackBuilder("ego", x=-380.0, y=1998.25, heading=0.0, dt=dt, ego=True)
    b.straight(duration=55.0, speed=8.0)
    recs.append(recording_from_tracks("rec08_green_pass", [b]))

    # 9: cut-in 18 m ahead of the ego.
    ego = TrackBuilder("ego", x=0.0, y=3000.0 - 5.25, heading=0.0, dt=dt, ego=True)
    ego.straight(duration=12.0, speed=12.0)
    cutter = TrackBuilder("car_1", x=18.0, y=3000.0 - 1.75, heading=0.0, dt=dt)
    cutter.straight(duration=4.0, speed=12.0).lateral_shift(-3.5, 2.0, 12.0).straight(duration=6.0, speed=12.0)
    recs.append(recording_from_tracks("rec09_cut_in", [ego, cutter]))
    tag_truth.append(("rec09_cut_in", "car_1", "cut_in", 4.5, 5.5))
    tag_truth.append(("rec09_cut_in", "car_1", "lane_change_right", 4.0, 6.0))
    query_truth["event=lane_change"].append(("rec09_cut_in", 4.0, 6.0))

    # 10: three-phase safety narrative; also an ego double lane change.
    rec10, probes = make_three_phase_recording()
    recs.append(rec10)
    tag_truth.append((rec10.recording_id, "ego", "lane_change_right", 2.45, 3.85))
    query_truth["event=lane_change"].append((rec10.recording_id, 2.45, 3.85))

    return FixtureCorpus(
        recordings=recs,
        map_model=fixture_map(),
        query_truth=query_truth,
        tag_truth=tag_truth,
        three_phase_recording_id=rec10.recording_id,
        three_phase_probes=probes,
    )


def make_three_phase_recording(dt: float = 0.1):
    """Ego escapes two slow leads by a double lane change and runs up on a
    third vehicle: unsafe/unsafe -> all safe -> unsafe vs the new lead."""
    y1 = 3000.0 - 1.75  # lane -1
    y3 = 3000.0 - 8.75  # lane -3
    ego = TrackBuilder("ego", x=0.0, y=y1, heading=0.0, dt=dt, ego=True)
    ego.straight(duration=2.4, speed=13.0)
    ego.lateral_shift(-7.0, 1.5, 13.0)  # -1 -> -3 in one maneuver
    ego.straight(duration=3.3, speed=13.0)

    id8 = TrackBuilder("ID_8", x=22.0, y=y1, heading=0.0, dt=dt)
    id8.straight(duration=7.2, speed=8.0)
    id9 = TrackBuilder("ID_9", x=27.0, y=y1, heading=0.0, dt=dt)
    id9.straight(duration=7.2, speed=7.0)
    id12 = TrackBuilder("ID_12", x=42.0, y=y3, heading=0.0, dt=dt)
    id12.straight(duration=7.2, speed=8.0)

    rec = recording_from_tracks("rec10_three_phase", [ego, id8, id9, id12])
    probes = [
        (2.3, {"ID_8": "unsafe", "ID_9": "unsafe", "ID_12": "safe"}),
        (4.4, {"ID_8": "safe", "ID_9": "safe", "ID_12": "safe"}),
        (6.2, {"ID_8": "safe", "ID_9": "safe", "ID_12": "unsafe"}),
    ]
    return rec, probes


def write_fixture_corpus(directory: str) -> tuple[list[str], str]:
    """Materialize the fixture corpus as JSONL files + a map JSON file.

    Returns (recording paths, map path); used by the CLI end-to-end tests.
    """
    from .mapmodel import save_map_json

    corpus = make_fixture_corpus()
    os.makedirs(directory, exist_ok=True)
    paths = []
    for rec in corpus.recordings:
        path = os.path.join(directory, f"{rec.recording_id}.jsonl")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(recording_to_jsonl(rec))
        paths.append(path)
    map_path = os.path.join(directory, "fixture_map.json")
    save_map_json(corpus.map_model, map_path)
    return paths, map_path
