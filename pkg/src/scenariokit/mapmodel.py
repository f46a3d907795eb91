"""Static road structure: roads/lanes/junctions/signs/signals, geometric
queries for tagging, and a simplified OpenDRIVE 1.7 reader/writer.

Two on-disk formats are supported: a native JSON schema (easy to hand-write
for fixtures, documented in docs/formats.md) and an OpenDRIVE subset
(straight-line and arc geometries, constant-width lanes, junctions, signs,
signals). The writer emits line geometries only; junction center/radius/
arity and signal timelines ride in <userData> since OpenDRIVE has no
first-class encoding for them.
"""

from __future__ import annotations

import json
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# Lane assignment gives up beyond this distance from every centerline.
OFFROAD_DISTANCE_M = 10.0


class MapError(ValueError):
    """Map file or model violates the documented schema."""


class RoadwayType(Enum):
    FREEWAY = "freeway"
    FREEWAY_RAMP = "freeway_ramp"
    ARTERIAL = "arterial"
    LOCAL = "local"
    PARKING = "parking"


# Bijective mapping onto legal OpenDRIVE road type strings so the subset
# round-trips exactly.
_ROADWAY_TO_XODR = {
    RoadwayType.FREEWAY: "motorway",
    RoadwayType.FREEWAY_RAMP: "townExpressway",
    RoadwayType.ARTERIAL: "townArterial",
    RoadwayType.LOCAL: "townLocal",
    RoadwayType.PARKING: "townPrivate",
}
_XODR_TO_ROADWAY = {v: k for k, v in _ROADWAY_TO_XODR.items()}
# Loose fallbacks for foreign files.
_XODR_TO_ROADWAY.update(
    {
        "rural": RoadwayType.LOCAL,
        "town": RoadwayType.ARTERIAL,
        "lowSpeed": RoadwayType.LOCAL,
        "unknown": RoadwayType.LOCAL,
    }
)


@dataclass(frozen=True)
class Lane:
    """Signed OpenDRIVE lane: negative right of the reference line,
    positive left; 0 is reserved for the reference line itself."""

    lane_id: int
    width: float

    def __post_init__(self):
        if self.lane_id == 0:
            raise MapError("lane_id 0 is reserved for the reference line")
        if not self.width > 0:
            raise MapError(f"lane {self.lane_id}: width must be > 0")


class Road:
    """A road with a polyline reference line and constant-width lanes."""

    def __init__(
        self,
        road_id: str,
        centerline,
        lanes: list[Lane],
        roadway_type: RoadwayType = RoadwayType.LOCAL,
    ):
        self.road_id = road_id
        self.centerline = np.asarray(centerline, dtype=float).reshape(-1, 2)
        if len(self.centerline) < 2:
            raise MapError(f"road {road_id}: centerline needs >= 2 points")
        self.lanes = sorted(lanes, key=lambda l: l.lane_id)
        self.roadway_type = roadway_type
        d = np.diff(self.centerline, axis=0)
        self._seg_len = np.hypot(d[:, 0], d[:, 1])
        if np.any(self._seg_len <= 0):
            raise MapError(f"road {road_id}: repeated centerline point")
        self._seg_dir = d / self._seg_len[:, None]
        self._cum_s = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    @property
    def length(self) -> float:
        return float(self._cum_s[-1])

    def lanes_on_side(self, left: bool) -> list[Lane]:
        """Lanes on one side ordered inner to outer."""
        picked = [l for l in self.lanes if (l.lane_id > 0) == left]
        return sorted(picked, key=lambda l: abs(l.lane_id))

    def project(self, x: float, y: float) -> tuple[float, float, float]:
        """Project a point onto the reference line.

        Returns (s, t, dist): arc length along the line, signed lateral
        offset (positive to the left of the direction of travel), and the
        true distance to the closest point. dist > |t| means the projection
        clamped to a road end, i.e. the point lies beyond the road.
        """
        p = np.array([x, y])
        a = self.centerline[:-1]
        rel = p - a
        u = np.einsum("ij,ij->i", rel, self._seg_dir) / self._seg_len
        u = np.clip(u, 0.0, 1.0)
        closest = a + u[:, None] * self._seg_dir * self._seg_len[:, None]
        dist2 = np.sum((p - closest) ** 2, axis=1)
        i = int(np.argmin(dist2))
        dx, dy = self._seg_dir[i]
        cx, cy = closest[i]
        t = dx * (y - cy) - dy * (x - cx)
        s = float(self._cum_s[i] + u[i] * self._seg_len[i])
        return s, float(t), float(math.sqrt(dist2[i]))

    def point_at(self, s: float, t: float = 0.0) -> tuple[float, float]:
        """Inverse of project: world point at arc length s, offset t."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum_s, s, side="right")) - 1
        i = min(i, len(self._seg_len) - 1)
        dx, dy = self._seg_dir[i]
        ax, ay = self.centerline[i]
        ds = s - self._cum_s[i]
        # Left normal is (-dy, dx).
        return float(ax + ds * dx - t * dy), float(ay + ds * dy + t * dx)

    def __eq__(self, other):
        return (
            isinstance(other, Road)
            and self.road_id == other.road_id
            and self.roadway_type == other.roadway_type
            and self.lanes == other.lanes
            and self.centerline.shape == other.centerline.shape
            and bool(np.allclose(self.centerline, other.centerline, atol=1e-6))
        )

    def __repr__(self):
        return f"Road({self.road_id!r}, {len(self.centerline)} pts, {len(self.lanes)} lanes, {self.roadway_type.value})"


@dataclass(frozen=True)
class Junction:
    junction_id: str
    center: tuple[float, float]
    radius: float
    arity: int
    incident_roads: tuple[str, ...]

    def __post_init__(self):
        if not self.radius > 0:
            raise MapError(f"junction {self.junction_id}: radius must be > 0")
        if self.arity < 3:
            raise MapError(f"junction {self.junction_id}: arity must be >= 3")


@dataclass(frozen=True)
class SignFeature:
    sign_id: str
    kind: str  # "stop", "yield", "speed_limit", ...
    position: tuple[float, float]
    applies_to: str  # road_id


@dataclass(frozen=True)
class SignalState:
    state: str  # "red", "amber", "green"
    t_start: float
    t_end: float


@dataclass(frozen=True)
class SignalFeature:
    signal_id: str
    kind: str
    position: tuple[float, float]
    applies_to: str
    states: tuple[SignalState, ...] = ()


@dataclass
class MapModel:
    roads: list[Road] = field(default_factory=list)
    junctions: list[Junction] = field(default_factory=list)
    signage: list[SignFeature] = field(default_factory=list)
    signals: list[SignalFeature] = field(default_factory=list)

    def __post_init__(self):
        self._roads_by_id = {r.road_id: r for r in self.roads}

    def road(self, road_id: str) -> Road:
        return self._roads_by_id[road_id]

    def validate(self) -> None:
        ids = [r.road_id for r in self.roads]
        if len(set(ids)) != len(ids):
            raise MapError("duplicate road id")
        for j in self.junctions:
            if len(j.incident_roads) < 2:
                raise MapError(f"junction {j.junction_id}: needs >= 2 incident roads")
            for rid in j.incident_roads:
                if rid not in self._roads_by_id:
                    raise MapError(f"junction {j.junction_id}: unknown road {rid!r}")
        for s in self.signage:
            if s.applies_to not in self._roads_by_id:
                raise MapError(f"sign {s.sign_id}: unknown road {s.applies_to!r}")
        for s in self.signals:
            if s.applies_to not in self._roads_by_id:
                raise MapError(f"signal {s.signal_id}: unknown road {s.applies_to!r}")
            prev_end = -math.inf
            for st in s.states:
                if st.t_end <= st.t_start:
                    raise MapError(f"signal {s.signal_id}: empty state interval")
                if st.t_start < prev_end:
                    raise MapError(f"signal {s.signal_id}: overlapping state intervals")
                prev_end = st.t_end

    def signal_state_at(self, signal: SignalFeature, t: float) -> str | None:
        for st in signal.states:
            if st.t_start <= t < st.t_end:
                return st.state
        return None


# -- geometric queries -------------------------------------------------------


def assign_lane(map_model: MapModel, x: float, y: float) -> tuple[str, int] | None:
    """Nearest lane whose lateral corridor contains the point.

    Lane corridors are half-open [inner, outer) in |offset| per side, so a
    point exactly on a lane boundary belongs to the outer lane. Points on
    the reference line prefer the right side when both sides have lanes.
    Returns None when no corridor contains the point or every road is
    farther than OFFROAD_DISTANCE_M.
    """
    best: tuple[float, str, int] | None = None
    for road in map_model.roads:
        s, t, dist = road.project(x, y)
        if dist > OFFROAD_DISTANCE_M:
            continue
        if dist > abs(t) + 1e-9:
            # Projection clamped to a road end: the point is past the road,
            # not beside it.
            continue
        lane_id = None
        # Side by the sign of t; points exactly on the reference line try
        # the right side first.
        for left in ([t > 0] if t != 0 else (False, True)):
            offset = abs(t)
            inner = 0.0
            for lane in road.lanes_on_side(left):
                if inner <= offset < inner + lane.width:
                    lane_id = lane.lane_id
                    break
                inner += lane.width
            if lane_id is not None:
                break
        if lane_id is None:
            continue
        if best is None or abs(t) < best[0]:
            best = (abs(t), road.road_id, lane_id)
    if best is None:
        return None
    return best[1], best[2]


def junction_distance(map_model: MapModel, x: float, y: float) -> tuple[str, float] | None:
    """Nearest junction id and Euclidean distance to its center."""
    if not map_model.junctions:
        return None
    best = min(
        map_model.junctions,
        key=lambda j: math.hypot(x - j.center[0], y - j.center[1]),
    )
    return best.junction_id, math.hypot(x - best.center[0], y - best.center[1])


# -- native JSON format ------------------------------------------------------


def map_to_dict(map_model: MapModel) -> dict:
    return {
        "format": "scenariokit-map",
        "version": 1,
        "roads": [
            {
                "id": r.road_id,
                "roadway_type": r.roadway_type.value,
                "centerline": [[float(x), float(y)] for x, y in r.centerline],
                "lanes": [{"id": l.lane_id, "width": l.width} for l in r.lanes],
            }
            for r in map_model.roads
        ],
        "junctions": [
            {
                "id": j.junction_id,
                "center": [j.center[0], j.center[1]],
                "radius": j.radius,
                "arity": j.arity,
                "incident_roads": list(j.incident_roads),
            }
            for j in map_model.junctions
        ],
        "signs": [
            {
                "id": s.sign_id,
                "kind": s.kind,
                "position": [s.position[0], s.position[1]],
                "applies_to": s.applies_to,
            }
            for s in map_model.signage
        ],
        "signals": [
            {
                "id": s.signal_id,
                "kind": s.kind,
                "position": [s.position[0], s.position[1]],
                "applies_to": s.applies_to,
                "states": [
                    {"state": st.state, "t_start": st.t_start, "t_end": st.t_end}
                    for st in s.states
                ],
            }
            for s in map_model.signals
        ],
    }


def map_from_dict(data: dict) -> MapModel:
    try:
        roads = [
            Road(
                road_id=str(r["id"]),
                centerline=r["centerline"],
                lanes=[Lane(int(l["id"]), float(l["width"])) for l in r["lanes"]],
                roadway_type=RoadwayType(r.get("roadway_type", "local")),
            )
            for r in data.get("roads", [])
        ]
        junctions = [
            Junction(
                junction_id=str(j["id"]),
                center=(float(j["center"][0]), float(j["center"][1])),
                radius=float(j["radius"]),
                arity=int(j["arity"]),
                incident_roads=tuple(str(r) for r in j["incident_roads"]),
            )
            for j in data.get("junctions", [])
        ]
        signs = [
            SignFeature(
                sign_id=str(s["id"]),
                kind=str(s["kind"]),
                position=(float(s["position"][0]), float(s["position"][1])),
                applies_to=str(s["applies_to"]),
            )
            for s in data.get("signs", [])
        ]
        signals = [
            SignalFeature(
                signal_id=str(s["id"]),
                kind=str(s.get("kind", "traffic_light")),
                position=(float(s["position"][0]), float(s["position"][1])),
                applies_to=str(s["applies_to"]),
                states=tuple(
                    SignalState(str(st["state"]), float(st["t_start"]), float(st["t_end"]))
                    for st in s.get("states", [])
                ),
            )
            for s in data.get("signals", [])
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise MapError(f"map schema violation: {e}") from None
    model = MapModel(roads=roads, junctions=junctions, signage=signs, signals=signals)
    model.validate()
    return model


def save_map_json(map_model: MapModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(map_to_dict(map_model), fh, indent=2)


# -- OpenDRIVE subset --------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_opendrive(map_model: MapModel, path: str) -> None:
    """Serialize to the documented OpenDRIVE 1.7 subset.

    Every centerline segment becomes one <geometry><line/> record. Raises
    MapError for an empty map.
    """
    if not map_model.roads:
        raise MapError("map has no roads")
    map_model.validate()

    root = ET.Element("OpenDRIVE")
    ET.SubElement(
        root,
        "header",
        revMajor="1",
        revMinor="7",
        name="scenariokit",
        version="1.00",
        date="2024-01-01T00:00:00",
    )
    for road in map_model.roads:
        road_el = ET.SubElement(
            root,
            "road",
            name=road.road_id,
            length=_fmt(road.length),
            id=road.road_id,
            junction="-1",
        )
        ET.SubElement(road_el, "type", s="0.0", type=_ROADWAY_TO_XODR[road.roadway_type])
        plan = ET.SubElement(road_el, "planView")
        pts = road.centerline
        s = 0.0
        for i in range(len(pts) - 1):
            dx = pts[i + 1, 0] - pts[i, 0]
            dy = pts[i + 1, 1] - pts[i, 1]
            seg_len = math.hypot(dx, dy)
            geo = ET.SubElement(
                plan,
                "geometry",
                s=_fmt(s),
                x=_fmt(pts[i, 0]),
                y=_fmt(pts[i, 1]),
                hdg=_fmt(math.atan2(dy, dx)),
                length=_fmt(seg_len),
            )
            ET.SubElement(geo, "line")
            s += seg_len
        lanes_el = ET.SubElement(road_el, "lanes")
        section = ET.SubElement(lanes_el, "laneSection", s="0.0")
        left = [l for l in road.lanes if l.lane_id > 0]
        right = [l for l in road.lanes if l.lane_id < 0]
        if left:
            left_el = ET.SubElement(section, "left")
            for lane in sorted(left, key=lambda l: -l.lane_id):
                _write_lane(left_el, lane)
        center = ET.SubElement(section, "center")
        ET.SubElement(center, "lane", id="0", type="none", level="false")
        if right:
            right_el = ET.SubElement(section, "right")
            for lane in sorted(right, key=lambda l: -l.lane_id):
                _write_lane(right_el, lane)

        road_signs = [sg for sg in map_model.signage if sg.applies_to == road.road_id]
        if road_signs:
            objects = ET.SubElement(road_el, "objects")
            for sg in road_signs:
                s_pos, t_pos, _ = road.project(*sg.position)
                obj = ET.SubElement(
                    objects,
                    "object",
                    id=sg.sign_id,
                    name=sg.kind,
                    type=sg.kind,
                    s=_fmt(s_pos),
                    t=_fmt(t_pos),
                )
                ud = ET.SubElement(obj, "userData", code="scenariokit")
                ud.text = json.dumps({"xy": [sg.position[0], sg.position[1]]})
        road_signals = [sg for sg in map_model.signals if sg.applies_to == road.road_id]
        if road_signals:
            signals_el = ET.SubElement(road_el, "signals")
            for sg in road_signals:
                s_pos, t_pos, _ = road.project(*sg.position)
                sig_el = ET.SubElement(
                    signals_el,
                    "signal",
                    id=sg.signal_id,
                    name=sg.signal_id,
                    type=sg.kind,
                    s=_fmt(s_pos),
                    t=_fmt(t_pos),
                    dynamic="yes",
                )
                ud = ET.SubElement(sig_el, "userData", code="scenariokit")
                ud.text = json.dumps(
                    {
                        "xy": [sg.position[0], sg.position[1]],
                        "states": [[st.state, st.t_start, st.t_end] for st in sg.states],
                    }
                )
    for j in map_model.junctions:
        j_el = ET.SubElement(root, "junction", id=j.junction_id, name=j.junction_id)
        for i in range(len(j.incident_roads) - 1):
            ET.SubElement(
                j_el,
                "connection",
                id=str(i),
                incomingRoad=j.incident_roads[i],
                connectingRoad=j.incident_roads[i + 1],
                contactPoint="start",
            )
        ud = ET.SubElement(j_el, "userData", code="scenariokit")
        ud.text = json.dumps(
            {
                "center": [j.center[0], j.center[1]],
                "radius": j.radius,
                "arity": j.arity,
                "incident_roads": list(j.incident_roads),
            }
        )
    tree = ET.ElementTree(root)
    ET.indent(tree)
    tree.write(path, encoding="unicode", xml_declaration=True)


def _write_lane(parent: ET.Element, lane: Lane) -> None:
    lane_el = ET.SubElement(parent, "lane", id=str(lane.lane_id), type="driving", level="false")
    ET.SubElement(lane_el, "width", sOffset="0.0", a=_fmt(lane.width), b="0.0", c="0.0", d="0.0")


def _read_geometry(geo: ET.Element) -> np.ndarray:
    x0 = float(geo.get("x"))
    y0 = float(geo.get("y"))
    hdg = float(geo.get("hdg"))
    length = float(geo.get("length"))
    line = geo.find("line")
    arc = geo.find("arc")
    if line is not None:
        return np.array([[x0, y0], [x0 + length * math.cos(hdg), y0 + length * math.sin(hdg)]])
    if arc is not None:
        k = float(arc.get("curvature"))
        if k == 0:
            return np.array([[x0, y0], [x0 + length * math.cos(hdg), y0 + length * math.sin(hdg)]])
        # Sample roughly every 2 degrees of turned angle.
        n = max(2, int(math.ceil(abs(k) * length / 0.035)) + 1)
        s = np.linspace(0.0, length, n)
        h = hdg + k * s
        xs = x0 + (np.sin(h) - math.sin(hdg)) / k
        ys = y0 - (np.cos(h) - math.cos(hdg)) / k
        return np.column_stack([xs, ys])
    raise MapError(f"unsupported geometry in road (only line/arc)")


def _read_opendrive(path: str) -> MapModel:
    tree = ET.parse(path)
    root = tree.getroot()
    if root.tag != "OpenDRIVE":
        raise MapError(f"{path}: not an OpenDRIVE file")
    roads: list[Road] = []
    signs: list[SignFeature] = []
    signals: list[SignalFeature] = []
    deferred_features: list[tuple] = []
    for road_el in root.findall("road"):
        rid = road_el.get("id")
        type_el = road_el.find("type")
        rtype = _XODR_TO_ROADWAY.get(
            type_el.get("type") if type_el is not None else "unknown", RoadwayType.LOCAL
        )
        pieces = []
        plan = road_el.find("planView")
        if plan is None:
            raise MapError(f"road {rid}: missing planView")
        for geo in plan.findall("geometry"):
            pts = _read_geometry(geo)
            if pieces:
                pieces.append(pts[1:])
            else:
                pieces.append(pts)
        centerline = np.vstack(pieces)
        lanes = []
        for lane_el in road_el.iter("lane"):
            lane_id = int(lane_el.get("id"))
            if lane_id == 0:
                continue
            width_el = lane_el.find("width")
            if width_el is None:
                raise MapError(f"road {rid}: lane {lane_id} missing width")
            lanes.append(Lane(lane_id, float(width_el.get("a"))))
        road = Road(str(rid), centerline, lanes, rtype)
        roads.append(road)
        for obj in road_el.iter("object"):
            s = float(obj.get("s", 0.0))
            t = float(obj.get("t", 0.0))
            xy = None
            ud = obj.find("userData")
            if ud is not None and ud.text:
                xy = json.loads(ud.text).get("xy")
            deferred_features.append(
                ("sign", obj.get("id"), obj.get("type", obj.get("name", "sign")), road, s, t, None, xy)
            )
        for sig in road_el.iter("signal"):
            s = float(sig.get("s", 0.0))
            t = float(sig.get("t", 0.0))
            states: tuple[SignalState, ...] = ()
            xy = None
            ud = sig.find("userData")
            if ud is not None and ud.text:
                payload = json.loads(ud.text)
                states = tuple(SignalState(st[0], float(st[1]), float(st[2])) for st in payload.get("states", []))
                xy = payload.get("xy")
            deferred_features.append(
                ("signal", sig.get("id"), sig.get("type", "traffic_light"), road, s, t, states, xy)
            )
    for kind, fid, ftype, road, s, t, states, xy in deferred_features:
        pos = (float(xy[0]), float(xy[1])) if xy is not None else road.point_at(s, t)
        if kind == "sign":
            signs.append(SignFeature(str(fid), str(ftype), pos, road.road_id))
        else:
            signals.append(SignalFeature(str(fid), str(ftype), pos, road.road_id, states))
    junctions: list[Junction] = []
    for j_el in root.findall("junction"):
        jid = str(j_el.get("id"))
        ud = j_el.find("userData")
        if ud is not None and ud.text:
            payload = json.loads(ud.text)
            junctions.append(
                Junction(
                    junction_id=jid,
                    center=(float(payload["center"][0]), float(payload["center"][1])),
                    radius=float(payload["radius"]),
                    arity=int(payload["arity"]),
                    incident_roads=tuple(payload["incident_roads"]),
                )
            )
            continue
        # Foreign file: reconstruct a coarse junction from connectivity.
        incident: list[str] = []
        for conn in j_el.findall("connection"):
            for rid in (conn.get("incomingRoad"), conn.get("connectingRoad")):
                if rid and rid not in incident:
                    incident.append(rid)
        by_id = {r.road_id: r for r in roads}
        endpoints = []
        for rid in incident:
            if rid not in by_id:
                raise MapError(f"junction {jid}: unknown road {rid!r}")
            endpoints.extend([by_id[rid].centerline[0], by_id[rid].centerline[-1]])
        if not endpoints:
            raise MapError(f"junction {jid}: no incident roads")
        center = np.mean(np.asarray(endpoints), axis=0)
        spread = max(
            float(np.max(np.hypot(*(np.asarray(endpoints) - center).T))) if endpoints else 10.0,
            5.0,
        )
        junctions.append(
            Junction(
                junction_id=jid,
                center=(float(center[0]), float(center[1])),
                radius=spread,
                arity=max(3, len(incident)),
                incident_roads=tuple(incident),
            )
        )
    model = MapModel(roads=roads, junctions=junctions, signage=signs, signals=signals)
    model.validate()
    return model


def load_map(path: str) -> MapModel:
    """Load a map from the native JSON schema or the OpenDRIVE subset,
    dispatching on content."""
    if not os.path.exists(path):
        raise MapError(f"map file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        head = fh.read(512)
    if "<OpenDRIVE" in head:
        return _read_opendrive(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise MapError(f"{path}: neither OpenDRIVE nor valid JSON ({e.msg})") from None
    return map_from_dict(data)
