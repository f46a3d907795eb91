"""Traffic-event detection over recordings (turns, lane changes, cut-in/out,
rapid deceleration, merges, junction presence, stops) and tagger evaluation
against ground truth.

All detectors are pure functions of immutable inputs; thresholds live in
TaggerConfig and are deliberately ordinary defaults, exposed rather than
baked in.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from enum import Enum

import numpy as np

from .mapmodel import MapModel, assign_lane, junction_distance
from .recording import ActorTrack, Recording


class EventKind(Enum):
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    LANE_CHANGE_LEFT = "lane_change_left"
    LANE_CHANGE_RIGHT = "lane_change_right"
    CUT_IN = "cut_in"
    CUT_OUT = "cut_out"
    RAPID_DECEL = "rapid_decel"
    MERGE = "merge"
    STOP = "stop"
    INTERSECTION_PRESENCE = "intersection_presence"


@dataclass(frozen=True)
class EventTag:
    recording_id: str
    actor_id: str
    kind: EventKind
    t_start: float
    t_end: float
    attributes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"tag interval empty: [{self.t_start}, {self.t_end}]")

    def to_dict(self) -> dict:
        return {
            "recording_id": self.recording_id,
            "actor_id": self.actor_id,
            "kind": self.kind.value,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "attributes": self.attributes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EventTag":
        return cls(
            recording_id=d["recording_id"],
            actor_id=d["actor_id"],
            kind=EventKind(d["kind"]),
            t_start=float(d["t_start"]),
            t_end=float(d["t_end"]),
            attributes=d.get("attributes", {}),
        )


@dataclass
class TaggerConfig:
    turn_angle_rad: float = math.radians(45.0)
    turn_window_s: float = 12.0
    yaw_rate_deadband: float = 0.02  # rad/s, below this counts as straight
    smooth_window_s: float = 0.5
    lane_change_heading_cap_rad: float = math.radians(30.0)
    lateral_speed_min: float = 0.2  # m/s, bounds the lane-change window
    cut_gap_max_m: float = 50.0
    decel_threshold: float = -3.5  # m/s^2
    decel_sustain_s: float = 0.5
    stop_speed_max: float = 0.3
    stop_sustain_s: float = 1.0
    junction_buffer_m: float = 10.0
    interval_merge_s: float = 1.0
    min_lane_coverage: float = 0.8
    iou_min: float = 0.5


def _smooth(values: np.ndarray, times: np.ndarray, window_s: float) -> np.ndarray:
    """Centered moving average over roughly window_s (uniform-dt data)."""
    n = len(values)
    if n < 3:
        return values.copy()
    dt = float(np.median(np.diff(times)))
    k = max(0, int(round(window_s / dt / 2)))
    if k == 0:
        return values.copy()
    c = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(n)
    lo = np.maximum(idx - k, 0)
    hi = np.minimum(idx + k, n - 1)
    return (c[hi + 1] - c[lo]) / (hi + 1 - lo)


def _runs_true(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [i, j] index runs (inclusive) where mask holds."""
    if not np.any(mask):
        return []
    m = mask.astype(np.int8)
    d = np.diff(np.concatenate([[0], m, [0]]))
    starts = np.nonzero(d == 1)[0]
    ends = np.nonzero(d == -1)[0] - 1
    return list(zip(starts.tolist(), ends.tolist()))


def _merge_close(intervals: list[tuple[float, float]], gap: float) -> list[tuple[float, float]]:
    if not intervals:
        return []
    out = [list(intervals[0])]
    for s, e in intervals[1:]:
        if s - out[-1][1] <= gap:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


def _smoothed_heading(track: ActorTrack, config: TaggerConfig) -> np.ndarray:
    return _smooth(np.unwrap(track.heading), track.times, config.smooth_window_s)


# -- detectors ---------------------------------------------------------------


def detect_turns(rec: Recording, actor_id: str, config: TaggerConfig | None = None) -> list[EventTag]:
    """Maximal windows whose cumulative heading change exceeds the turn
    threshold within the configured span; left = positive heading change."""
    config = config or TaggerConfig()
    track = rec.track(actor_id)
    if len(track.times) < 3:
        return []
    t = track.times
    h = _smoothed_heading(track, config)
    w = np.gradient(h, t)
    sign = np.zeros(len(w), dtype=np.int8)
    sign[w > config.yaw_rate_deadband] = 1
    sign[w < -config.yaw_rate_deadband] = -1

    # Blocks of consistent yaw direction; same-direction blocks separated by
    # a short straight stretch merge into one maneuver.
    blocks: list[tuple[int, int, int]] = []
    for i0, i1 in _runs_true(sign != 0):
        # Split the run where the sign flips.
        j = i0
        while j <= i1:
            s = sign[j]
            k = j
            while k + 1 <= i1 and sign[k + 1] == s:
                k += 1
            blocks.append((j, k, int(s)))
            j = k + 1
    merged: list[list[int]] = []
    for b0, b1, s in blocks:
        if merged and merged[-1][2] == s and t[b0] - t[merged[-1][1]] <= config.interval_merge_s:
            merged[-1][1] = b1
        else:
            merged.append([b0, b1, s])

    tags: list[EventTag] = []
    for b0, b1, s in merged:
        net = h[b1] - h[b0]
        if abs(net) < config.turn_angle_rad:
            continue
        # The threshold must accrue within the configured time span.
        ok = False
        a = b0
        for b in range(b0, b1 + 1):
            while t[b] - t[a] > config.turn_window_s:
                a += 1
            if abs(h[b] - h[a]) >= config.turn_angle_rad:
                ok = True
                break
        if not ok:
            continue
        in_block = slice(b0, b1 + 1)
        wb = w[in_block]
        vb = track.speed[in_block]
        active = np.abs(wb) > config.yaw_rate_deadband
        radius = float(np.min(vb[active] / np.abs(wb[active]))) if np.any(active) else math.inf
        kind = EventKind.TURN_LEFT if net > 0 else EventKind.TURN_RIGHT
        tags.append(
            EventTag(
                recording_id=rec.recording_id,
                actor_id=actor_id,
                kind=kind,
                t_start=float(t[b0]),
                t_end=float(t[b1]),
                attributes={
                    "net_heading_change": float(net),
                    "mean_speed": float(np.mean(vb)),
                    "min_turn_radius": radius,
                    "ego": 1 if track.is_ego else 0,
                },
            )
        )
    return tags


def _lane_sequence(track: ActorTrack, map_model: MapModel):
    return [assign_lane(map_model, float(x), float(y)) for x, y in zip(track.x, track.y)]


def _inside_junction(map_model: MapModel, x: float, y: float, extra: float = 0.0) -> bool:
    jd = junction_distance(map_model, x, y)
    if jd is None:
        return False
    jid, dist = jd
    j = next(j for j in map_model.junctions if j.junction_id == jid)
    return dist <= j.radius + extra


def detect_lane_changes(
    rec: Recording, map_model: MapModel, actor_id: str, config: TaggerConfig | None = None
) -> list[EventTag]:
    """Same-road lane transitions that are not turns; suppressed inside
    junction radii where lane assignment resets."""
    config = config or TaggerConfig()
    track = rec.track(actor_id)
    if len(track.times) < 3:
        return []
    lanes = _lane_sequence(track, map_model)
    coverage = sum(1 for l in lanes if l is not None) / len(lanes)
    if coverage < config.min_lane_coverage:
        return []
    t = track.times
    h = _smoothed_heading(track, config)

    lat_v_cache: dict[str, np.ndarray] = {}

    def lateral_speed(road_id: str) -> np.ndarray:
        if road_id not in lat_v_cache:
            road = map_model.road(road_id)
            off = np.array([road.project(float(x), float(y))[1] for x, y in zip(track.x, track.y)])
            lat_v_cache[road_id] = np.gradient(_smooth(off, t, config.smooth_window_s), t)
        return lat_v_cache[road_id]

    raw: list[tuple[float, float, int, dict]] = []  # (t_a, t_b, direction, attrs)
    prev_idx = None
    for k, cur in enumerate(lanes):
        if cur is None:
            continue
        if prev_idx is not None:
            prev = lanes[prev_idx]
            if (
                prev[0] == cur[0]
                and prev[1] != cur[1]
                and t[k] - t[prev_idx] <= 3 * config.interval_merge_s
                and not _inside_junction(map_model, float(track.x[k]), float(track.y[k]))
            ):
                lat_v = lateral_speed(cur[0])
                a = prev_idx
                while a > 0 and abs(lat_v[a - 1]) > config.lateral_speed_min:
                    a -= 1
                b = k
                while b < len(t) - 1 and abs(lat_v[b + 1]) > config.lateral_speed_min:
                    b += 1
                if abs(h[b] - h[a]) < config.lane_change_heading_cap_rad:
                    direction = 1 if cur[1] > prev[1] else -1
                    raw.append(
                        (
                            float(t[a]),
                            float(t[b]),
                            direction,
                            {
                                "road_id": cur[0],
                                "from_lane": prev[1],
                                "to_lane": cur[1],
                                "mean_speed": float(np.mean(track.speed[a : b + 1])),
                            },
                        )
                    )
        prev_idx = k

    tags: list[EventTag] = []
    for direction in (1, -1):
        same = [(a, b, attrs) for a, b, d, attrs in raw if d == direction]
        same.sort(key=lambda e: (e[0], e[1]))
        merged: list[list] = []
        for a, b, attrs in same:
            if merged and a - merged[-1][1] <= config.interval_merge_s:
                merged[-1][1] = max(merged[-1][1], b)
                merged[-1][2]["to_lane"] = attrs["to_lane"]
            else:
                merged.append([a, b, dict(attrs)])
        kind = EventKind.LANE_CHANGE_LEFT if direction > 0 else EventKind.LANE_CHANGE_RIGHT
        for a, b, attrs in merged:
            attrs["ego"] = 1 if track.is_ego else 0
            tags.append(
                EventTag(
                    recording_id=rec.recording_id,
                    actor_id=actor_id,
                    kind=kind,
                    t_start=a,
                    t_end=b,
                    attributes=attrs,
                )
            )
    tags.sort(key=lambda tg: tg.t_start)
    return tags


def detect_cut_in_out(rec: Recording, map_model: MapModel, config: TaggerConfig | None = None) -> list[EventTag]:
    """Non-ego actors entering/leaving the ego lane within the near-range
    longitudinal gap ahead of the ego. The ego's own lane must be stable
    across the transition so ego lane changes don't read as cut events."""
    config = config or TaggerConfig()
    ego = rec.ego_track()
    ego_lanes = _lane_sequence(ego, map_model)
    half = config.interval_merge_s / 2

    raw: list[tuple[str, EventKind, float, float, float]] = []
    for actor_id in rec.actor_ids():
        track = rec.track(actor_id)
        if track.is_ego or len(track.times) < 2:
            continue
        lanes = _lane_sequence(track, map_model)
        for i in range(1, len(track.times)):
            fi_prev = int(track.frame_idx[i - 1])
            fi_cur = int(track.frame_idx[i])
            a_prev, a_cur = lanes[i - 1], lanes[i]
            e_prev, e_cur = ego_lanes[fi_prev], ego_lanes[fi_cur]
            if None in (a_prev, a_cur, e_prev, e_cur) or e_prev != e_cur or a_prev == a_cur:
                continue
            # Longitudinal gap ahead of the ego along its heading.
            gx = float(track.x[i] - ego.x[fi_cur])
            gy = float(track.y[i] - ego.y[fi_cur])
            hx, hy = math.cos(ego.heading[fi_cur]), math.sin(ego.heading[fi_cur])
            gap = gx * hx + gy * hy
            if not (0.0 < gap < config.cut_gap_max_m):
                continue
            t_prev, t_cur = float(track.times[i - 1]), float(track.times[i])
            if a_cur == e_cur:
                raw.append((actor_id, EventKind.CUT_IN, t_prev, t_cur, gap))
            elif a_prev == e_prev:
                raw.append((actor_id, EventKind.CUT_OUT, t_prev, t_cur, gap))

    tags: list[EventTag] = []
    by_key: dict[tuple[str, EventKind], list[tuple[float, float, float]]] = {}
    for actor_id, kind, t0, t1, gap in raw:
        by_key.setdefault((actor_id, kind), []).append((t0, t1, gap))
    for (actor_id, kind), entries in sorted(by_key.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        entries.sort()
        merged: list[list] = []
        for t0, t1, gap in entries:
            a = max(rec.t_start, t0 - half)
            b = min(rec.t_end, t1 + half)
            if merged and a - merged[-1][1] <= config.interval_merge_s:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b, gap])
        for a, b, gap in merged:
            tags.append(
                EventTag(
                    recording_id=rec.recording_id,
                    actor_id=actor_id,
                    kind=kind,
                    t_start=a,
                    t_end=b,
                    attributes={"gap_m": float(gap), "ego": 0},
                )
            )
    tags.sort(key=lambda tg: (tg.t_start, tg.actor_id))
    return tags


def detect_rapid_decel(rec: Recording, actor_id: str, config: TaggerConfig | None = None) -> list[EventTag]:
    config = config or TaggerConfig()
    track = rec.track(actor_id)
    if len(track.times) < 3:
        return []
    t = track.times
    accel = _smooth(np.gradient(track.speed, t), t, config.smooth_window_s)
    intervals = []
    extremes = []
    for i0, i1 in _runs_true(accel <= config.decel_threshold):
        if t[i1] - t[i0] >= config.decel_sustain_s:
            intervals.append((float(t[i0]), float(t[i1])))
            extremes.append(float(np.min(accel[i0 : i1 + 1])))
    tags = []
    for (a, b), m in zip(intervals, extremes):
        tags.append(
            EventTag(
                recording_id=rec.recording_id,
                actor_id=actor_id,
                kind=EventKind.RAPID_DECEL,
                t_start=a,
                t_end=b,
                attributes={"min_accel": m, "mean_speed": float(np.mean(track.speed)), "ego": 1 if track.is_ego else 0},
            )
        )
    return tags


def detect_merge(
    rec: Recording, map_model: MapModel, actor_id: str, config: TaggerConfig | None = None
) -> list[EventTag]:
    """Ramp-to-freeway road transitions re-labelled as merges.

    Lanes are constant-width along a road here, so the lane-termination
    variant of a merge cannot occur; road-type transitions carry it.
    """
    config = config or TaggerConfig()
    track = rec.track(actor_id)
    if len(track.times) < 2:
        return []
    from .mapmodel import RoadwayType

    lanes = _lane_sequence(track, map_model)
    t = track.times
    raw: list[tuple[float, float, dict]] = []
    prev_idx = None
    for k, cur in enumerate(lanes):
        if cur is None:
            continue
        if prev_idx is not None:
            prev = lanes[prev_idx]
            if prev[0] != cur[0] and t[k] - t[prev_idx] <= 3 * config.interval_merge_s:
                from_type = map_model.road(prev[0]).roadway_type
                to_type = map_model.road(cur[0]).roadway_type
                if from_type == RoadwayType.FREEWAY_RAMP and to_type == RoadwayType.FREEWAY:
                    a = max(rec.t_start, float(t[prev_idx]) - config.interval_merge_s)
                    b = min(rec.t_end, float(t[k]) + config.interval_merge_s)
                    i0 = int(np.searchsorted(t, a))
                    i1 = int(np.searchsorted(t, b, side="right"))
                    raw.append(
                        (
                            a,
                            b,
                            {
                                "from_road": prev[0],
                                "to_road": cur[0],
                                "mean_speed": float(np.mean(track.speed[i0:i1])),
                                "ego": 1 if track.is_ego else 0,
                            },
                        )
                    )
        prev_idx = k
    merged: list[list] = []
    for a, b, attrs in sorted(raw, key=lambda e: (e[0], e[1])):
        if merged and a - merged[-1][1] <= config.interval_merge_s:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b, attrs])
    return [
        EventTag(
            recording_id=rec.recording_id,
            actor_id=actor_id,
            kind=EventKind.MERGE,
            t_start=a,
            t_end=b,
            attributes=attrs,
        )
        for a, b, attrs in merged
    ]


def detect_intersection_presence(
    rec: Recording, map_model: MapModel, actor_id: str, config: TaggerConfig | None = None
) -> list[EventTag]:
    config = config or TaggerConfig()
    if not map_model.junctions:
        return []
    track = rec.track(actor_id)
    if len(track.times) == 0:
        return []
    t = track.times
    inside = np.zeros(len(t), dtype=bool)
    nearest: list[str | None] = [None] * len(t)
    for i, (x, y) in enumerate(zip(track.x, track.y)):
        jd = junction_distance(map_model, float(x), float(y))
        jid, dist = jd
        j = next(jj for jj in map_model.junctions if jj.junction_id == jid)
        if dist <= j.radius + config.junction_buffer_m:
            inside[i] = True
            nearest[i] = jid
    runs = _runs_true(inside)
    intervals = _merge_close([(float(t[i0]), float(t[i1])) for i0, i1 in runs], config.interval_merge_s)
    tags = []
    by_id = {j.junction_id: j for j in map_model.junctions}
    for a, b in intervals:
        if b <= a:
            # Single-frame presence: widen to the neighboring sample gap.
            continue
        i0 = int(np.searchsorted(t, a))
        jid = nearest[i0] or next(x for x in nearest if x)
        tags.append(
            EventTag(
                recording_id=rec.recording_id,
                actor_id=actor_id,
                kind=EventKind.INTERSECTION_PRESENCE,
                t_start=a,
                t_end=b,
                attributes={
                    "junction_id": jid,
                    "arity": by_id[jid].arity,
                    "ego": 1 if track.is_ego else 0,
                },
            )
        )
    return tags


def detect_stops(rec: Recording, actor_id: str, config: TaggerConfig | None = None) -> list[EventTag]:
    """Sustained standstill (the kind enum includes stop; the dwell rule
    mirrors the other sustain-style detectors)."""
    config = config or TaggerConfig()
    track = rec.track(actor_id)
    if len(track.times) < 3:
        return []
    t = track.times
    intervals = []
    for i0, i1 in _runs_true(track.speed <= config.stop_speed_max):
        if t[i1] - t[i0] >= config.stop_sustain_s:
            intervals.append((float(t[i0]), float(t[i1])))
    return [
        EventTag(
            recording_id=rec.recording_id,
            actor_id=actor_id,
            kind=EventKind.STOP,
            t_start=a,
            t_end=b,
            attributes={"ego": 1 if track.is_ego else 0},
        )
        for a, b in _merge_close(intervals, config.interval_merge_s)
    ]


def tag_recording(rec: Recording, map_model: MapModel | None = None, config: TaggerConfig | None = None) -> list[EventTag]:
    """Run every detector over every actor; deterministic order."""
    config = config or TaggerConfig()
    tags: list[EventTag] = []
    for actor_id in rec.actor_ids():
        tags.extend(detect_turns(rec, actor_id, config))
        tags.extend(detect_rapid_decel(rec, actor_id, config))
        tags.extend(detect_stops(rec, actor_id, config))
        if map_model is not None:
            tags.extend(detect_lane_changes(rec, map_model, actor_id, config))
            tags.extend(detect_merge(rec, map_model, actor_id, config))
            tags.extend(detect_intersection_presence(rec, map_model, actor_id, config))
    if map_model is not None:
        tags.extend(detect_cut_in_out(rec, map_model, config))
    tags.sort(key=lambda tg: (tg.t_start, tg.actor_id, tg.kind.value))
    return tags


# -- evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


@dataclass
class TagEvalReport:
    per_kind: dict[EventKind, ClassMetrics]
    iou_min: float

    def to_dict(self) -> dict:
        return {
            "iou_min": self.iou_min,
            "per_kind": {k.value: asdict(v) for k, v in self.per_kind.items()},
        }


def temporal_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def evaluate_tagger(
    predicted: list[EventTag], truth: list[EventTag], iou_min: float = 0.5
) -> TagEvalReport:
    """Greedy temporal-IoU matching within (recording, actor, kind) groups,
    reported per kind."""
    kinds = sorted({t.kind for t in predicted} | {t.kind for t in truth}, key=lambda k: k.value)
    per_kind: dict[EventKind, ClassMetrics] = {}
    for kind in kinds:
        preds = [t for t in predicted if t.kind == kind]
        truths = [t for t in truth if t.kind == kind]
        candidates = []
        for pi, p in enumerate(preds):
            for ti, tr in enumerate(truths):
                if p.recording_id != tr.recording_id or p.actor_id != tr.actor_id:
                    continue
                iou = temporal_iou((p.t_start, p.t_end), (tr.t_start, tr.t_end))
                if iou >= iou_min:
                    candidates.append((-iou, p.t_start, pi, ti))
        candidates.sort()
        used_p: set[int] = set()
        used_t: set[int] = set()
        tp = 0
        for _, _, pi, ti in candidates:
            if pi in used_p or ti in used_t:
                continue
            used_p.add(pi)
            used_t.add(ti)
            tp += 1
        fp = len(preds) - tp
        fn = len(truths) - tp
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 1.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_kind[kind] = ClassMetrics(precision, recall, f1, tp, fp, fn)
    return TagEvalReport(per_kind=per_kind, iou_min=iou_min)


# -- serialization ------------------------------------------------------------


def write_tags_jsonl(tags: list[EventTag], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tag in tags:
            fh.write(json.dumps(tag.to_dict()) + "\n")


def read_tags_jsonl(path: str) -> list[EventTag]:
    tags = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                tags.append(EventTag.from_dict(json.loads(line)))
    return tags
