"""Digital-twin scenario documents: storyboard structure, construction from
recording segments, parameter substitution, and kinematic replay with
trigger semantics.

Trajectories use position-time following (vertices at 10 Hz), which
reproduces recorded motion exactly up to resampling error; behavior-level
maneuvers are out of scope.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .recording import ActorClass, ActorState, Frame, Recording, normalize_angle

REPLAY_DT = 0.1


@dataclass(frozen=True)
class ParameterDecl:
    name: str
    ptype: str  # "double" | "string"
    default: str


@dataclass(frozen=True)
class EntityDef:
    name: str
    actor_class: ActorClass
    length: float
    width: float


@dataclass(frozen=True)
class InitState:
    x: float
    y: float
    heading: float
    speed: float | str  # "$param" references allowed


@dataclass(frozen=True)
class SimulationTimeCondition:
    at: float


@dataclass(frozen=True)
class RelativeDistanceCondition:
    entity_a: str
    entity_b: str
    threshold: float | str
    rule: str  # "<" or ">"

    def __post_init__(self):
        if self.rule not in ("<", ">"):
            raise ValueError(f"rule must be '<' or '>', got {self.rule!r}")
        if isinstance(self.threshold, (int, float)) and not self.threshold > 0:
            raise ValueError("threshold must be > 0")


TriggerCondition = SimulationTimeCondition | RelativeDistanceCondition


@dataclass(frozen=True)
class TrajectoryAction:
    """Position-time polyline, times local to the owning event's start."""

    entity: str
    times: tuple[float, ...]
    x: tuple[float, ...]
    y: tuple[float, ...]
    heading: tuple[float, ...]

    def __post_init__(self):
        if len(self.times) < 2:
            raise ValueError("trajectory needs >= 2 vertices")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("vertex times must be strictly increasing")

    @property
    def duration(self) -> float:
        return self.times[-1] - self.times[0]


@dataclass(frozen=True)
class ScenarioEvent:
    name: str
    trigger: TriggerCondition
    action: TrajectoryAction


@dataclass(frozen=True)
class Maneuver:
    name: str
    events: tuple[ScenarioEvent, ...]


@dataclass(frozen=True)
class ManeuverGroup:
    name: str
    entity: str
    maneuvers: tuple[Maneuver, ...]


@dataclass(frozen=True)
class Act:
    name: str
    groups: tuple[ManeuverGroup, ...]


@dataclass(frozen=True)
class Story:
    name: str
    acts: tuple[Act, ...]


@dataclass
class ScenarioDocument:
    description: str
    map_ref: str
    entities: tuple[EntityDef, ...]
    init: dict[str, InitState]
    stories: tuple[Story, ...]
    parameters: tuple[ParameterDecl, ...] = ()

    def validate(self) -> None:
        names = [e.name for e in self.entities]
        if len(set(names)) != len(names):
            raise ValueError("duplicate entity name")
        declared = set(names)
        for entity in self.init:
            if entity not in declared:
                raise ValueError(f"init references unknown entity {entity!r}")
        for group in self.iter_groups():
            if group.entity not in declared:
                raise ValueError(f"maneuver group {group.name!r} references unknown entity {group.entity!r}")
        seen_events = set()
        for event, _ in self.iter_events():
            if event.name in seen_events:
                raise ValueError(f"duplicate event name {event.name!r}")
            seen_events.add(event.name)

    def iter_groups(self):
        for story in self.stories:
            for act in story.acts:
                yield from act.groups

    def iter_events(self):
        """(event, owning entity) pairs in storyboard order."""
        for group in self.iter_groups():
            for maneuver in group.maneuvers:
                for event in maneuver.events:
                    yield event, group.entity

    def entity(self, name: str) -> EntityDef:
        for e in self.entities:
            if e.name == name:
                return e
        raise KeyError(name)

    def parameter_names(self) -> set[str]:
        """Parameters referenced anywhere ("$name") plus declared ones."""
        names = {p.name for p in self.parameters}
        for st in self.init.values():
            if isinstance(st.speed, str):
                names.add(st.speed.lstrip("$"))
        for event, _ in self.iter_events():
            trig = event.trigger
            if isinstance(trig, RelativeDistanceCondition) and isinstance(trig.threshold, str):
                names.add(trig.threshold.lstrip("$"))
        return names


def _entity_name(actor_id: str, is_ego: bool, used: set[str]) -> str:
    if is_ego:
        return "Ego"
    name = re.sub(r"[^A-Za-z0-9_]", "_", actor_id) or "actor"
    base = name
    k = 1
    while name in used or name == "Ego":
        name = f"{base}_{k}"
        k += 1
    return name


def build_scenario(rec: Recording, segment, map_ref: str = "map.xodr") -> ScenarioDocument:
    """Digital twin of a recording segment.

    One entity per actor active in the segment (>= 2 resampled vertices;
    the ego is mandatory and named "Ego"), motion encoded as 10 Hz
    position-time trajectories, times rebased to segment start.
    """
    t0 = float(segment.t_start)
    t1 = float(segment.t_end)
    if t1 <= t0:
        raise ValueError("empty segment")
    i0, i1 = rec.frame_range(t0 - 1e-9, t1 + 1e-9)
    if i1 - i0 == 0:
        raise ValueError("empty segment: no frames in range")
    duration = t1 - t0
    n_vertices = int(math.floor(duration / REPLAY_DT + 1e-9)) + 1

    entities: list[EntityDef] = []
    init: dict[str, InitState] = {}
    groups: list[ManeuverGroup] = []
    used_names: set[str] = set()

    for actor_id in rec.actor_ids():
        track = rec.track(actor_id)
        mask = (track.times >= t0 - 1e-9) & (track.times <= t1 + 1e-9)
        if int(mask.sum()) < 2:
            if track.is_ego:
                raise ValueError("ego has fewer than 2 frames in segment")
            if mask.any():
                warnings.warn(f"dropping actor {actor_id!r}: fewer than 2 frames in segment")
            continue
        obs_t = track.times[mask]
        k_lo = int(math.ceil((float(obs_t[0]) - t0) / REPLAY_DT - 1e-9))
        k_hi = int(math.floor((float(obs_t[-1]) - t0) / REPLAY_DT + 1e-9))
        k_hi = min(k_hi, n_vertices - 1)
        k_lo = max(k_lo, 0)
        if k_hi - k_lo < 1:
            if track.is_ego:
                raise ValueError("ego has fewer than 2 resampled vertices in segment")
            warnings.warn(f"dropping actor {actor_id!r}: fewer than 2 resampled vertices")
            continue
        grid = t0 + np.arange(k_lo, k_hi + 1) * REPLAY_DT
        xs = np.interp(grid, obs_t, track.x[mask])
        ys = np.interp(grid, obs_t, track.y[mask])
        hs = normalize_angle(np.interp(grid, obs_t, np.unwrap(track.heading[mask])))
        speed0 = float(np.interp(grid[0], obs_t, track.speed[mask]))

        name = _entity_name(actor_id, track.is_ego, used_names)
        used_names.add(name)
        entities.append(EntityDef(name, track.actor_class, track.length, track.width))
        init[name] = InitState(float(xs[0]), float(ys[0]), float(hs[0]), speed0)
        action = TrajectoryAction(
            entity=name,
            times=tuple(np.round(np.arange(k_hi - k_lo + 1) * REPLAY_DT, 9)),
            x=tuple(float(v) for v in xs),
            y=tuple(float(v) for v in ys),
            heading=tuple(float(v) for v in hs),
        )
        event = ScenarioEvent(
            name=f"ev_{name}",
            trigger=SimulationTimeCondition(at=round(k_lo * REPLAY_DT, 9)),
            action=action,
        )
        groups.append(
            ManeuverGroup(
                name=f"mg_{name}",
                entity=name,
                maneuvers=(Maneuver(name=f"man_{name}", events=(event,)),),
            )
        )

    # Ego first, deterministic order after.
    order = sorted(range(len(entities)), key=lambda i: (entities[i].name != "Ego", entities[i].name))
    entities = [entities[i] for i in order]
    groups = [groups[i] for i in order]

    doc = ScenarioDocument(
        description=f"{rec.recording_id} [{t0:.3f}, {t1:.3f}]",
        map_ref=map_ref,
        entities=tuple(entities),
        init=init,
        stories=(Story(name="story", acts=(Act(name="act", groups=tuple(groups)),)),),
    )
    doc.validate()
    return doc


def add_relative_distance_trigger(
    doc: ScenarioDocument,
    entity: str,
    distance_m: float,
    rule: str,
    triggered_event: str,
) -> ScenarioDocument:
    """Replace the named event's start trigger with a RelativeDistance
    condition between Ego and `entity`; returns a new document."""
    if not isinstance(distance_m, str) and not distance_m > 0:
        raise ValueError("threshold must be > 0")
    if entity not in {e.name for e in doc.entities}:
        raise ValueError(f"unknown entity {entity!r}")
    found = False

    def rewrite_event(event: ScenarioEvent) -> ScenarioEvent:
        nonlocal found
        if event.name != triggered_event:
            return event
        found = True
        return replace(
            event,
            trigger=RelativeDistanceCondition("Ego", entity, distance_m, rule),
        )

    stories = tuple(
        replace(
            story,
            acts=tuple(
                replace(
                    act,
                    groups=tuple(
                        replace(
                            group,
                            maneuvers=tuple(
                                replace(m, events=tuple(rewrite_event(e) for e in m.events))
                                for m in group.maneuvers
                            ),
                        )
                        for group in act.groups
                    ),
                )
                for act in story.acts
            ),
        )
        for story in doc.stories
    )
    if not found:
        raise ValueError(f"unknown event {triggered_event!r}")
    out = replace(doc, stories=stories)
    out.validate()
    return out


def substitute_parameters(doc: ScenarioDocument, assignment: dict[str, float | str]) -> ScenarioDocument:
    """Resolve "$name" references in init speeds and trigger thresholds."""

    def resolve(value):
        if isinstance(value, str) and value.startswith("$"):
            name = value[1:]
            if name not in assignment:
                raise ValueError(f"no value for parameter {name!r}")
            return assignment[name]
        return value

    init = {k: replace(st, speed=resolve(st.speed)) for k, st in doc.init.items()}

    def rewrite_event(event: ScenarioEvent) -> ScenarioEvent:
        trig = event.trigger
        if isinstance(trig, RelativeDistanceCondition) and isinstance(trig.threshold, str):
            return replace(event, trigger=replace(trig, threshold=float(resolve(trig.threshold))))
        return event

    stories = tuple(
        replace(
            story,
            acts=tuple(
                replace(
                    act,
                    groups=tuple(
                        replace(
                            group,
                            maneuvers=tuple(
                                replace(m, events=tuple(rewrite_event(e) for e in m.events))
                                for m in group.maneuvers
                            ),
                        )
                        for group in act.groups
                    ),
                )
                for act in story.acts
            ),
        )
        for story in doc.stories
    )
    return replace(doc, init=init, stories=stories, parameters=())


# -- replay ------------------------------------------------------------------------


@dataclass
class ReplayResult:
    times: np.ndarray
    states: dict[str, np.ndarray]  # entity -> (n, 3): x, y, heading
    fire_times: dict[str, float | None]
    entities: tuple[EntityDef, ...]


def replay_scenario(doc: ScenarioDocument, dt: float = REPLAY_DT, t_end: float | None = None) -> ReplayResult:
    """Deterministic kinematic replay.

    Entities hold their init pose until their event's trigger fires
    (conditions are checked each tick against the pre-tick state); fired
    events play their trajectory by linear interpolation and hold the last
    vertex afterwards.
    """
    doc.validate()
    events = list(doc.iter_events())
    for event, _ in events:
        trig = event.trigger
        if isinstance(trig, RelativeDistanceCondition) and isinstance(trig.threshold, str):
            raise ValueError(f"unresolved parameter {trig.threshold!r} in trigger")
    for name, st in doc.init.items():
        if isinstance(st.speed, str):
            raise ValueError(f"unresolved parameter {st.speed!r} in init of {name!r}")

    if t_end is None:
        horizon = 0.0
        pending = 0.0
        for event, _ in events:
            if isinstance(event.trigger, SimulationTimeCondition):
                horizon = max(horizon, event.trigger.at + event.action.duration)
            else:
                pending = max(pending, event.action.duration)
        t_end = horizon + (pending + 30.0 if pending else 0.0)
        t_end = max(t_end, dt)

    n_ticks = int(round(t_end / dt)) + 1
    entity_names = [e.name for e in doc.entities]
    fired: dict[str, float | None] = {event.name: None for event, _ in events}
    # Precompute unwrapped headings for interpolation.
    traj_heading = {
        event.name: np.unwrap(np.asarray(event.action.heading)) for event, _ in events
    }

    def position_of(entity: str, t: float) -> tuple[float, float, float]:
        active = None
        active_fire = -math.inf
        for event, owner in events:
            ft = fired[event.name]
            if owner == entity and ft is not None and ft <= t + 1e-12 and ft > active_fire:
                active = event
                active_fire = ft
        if active is None:
            st = doc.init[entity]
            return st.x, st.y, st.heading
        action = active.action
        local = min(max(t - active_fire, action.times[0]), action.times[-1])
        x = float(np.interp(local, action.times, action.x))
        y = float(np.interp(local, action.times, action.y))
        h = float(normalize_angle(np.interp(local, action.times, traj_heading[active.name])))
        return x, y, h

    def condition_true(trigger: TriggerCondition, t: float) -> bool:
        if isinstance(trigger, SimulationTimeCondition):
            return t >= trigger.at - 1e-9
        pa = position_of(trigger.entity_a, t)
        pb = position_of(trigger.entity_b, t)
        dist = math.hypot(pa[0] - pb[0], pa[1] - pb[1])
        return dist < trigger.threshold if trigger.rule == "<" else dist > trigger.threshold

    times = np.arange(n_ticks) * dt
    out = {name: np.empty((n_ticks, 3)) for name in entity_names}
    for k in range(n_ticks):
        t = float(times[k])
        for event, _ in events:
            if fired[event.name] is None and condition_true(event.trigger, t):
                fired[event.name] = t
        for name in entity_names:
            out[name][k] = position_of(name, t)
    return ReplayResult(times=times, states=out, fire_times=fired, entities=doc.entities)


def replay_frames(result: ReplayResult, ego_entity: str = "Ego") -> list[Frame]:
    """Convert a replay into object-list frames (speeds by finite
    differences) for the safety scorer."""
    dims = {e.name: (e.length, e.width, e.actor_class) for e in result.entities}
    n = len(result.times)
    speeds: dict[str, np.ndarray] = {}
    for name, arr in result.states.items():
        if n >= 2:
            d = np.hypot(np.diff(arr[:, 0]), np.diff(arr[:, 1])) / np.diff(result.times)
            speeds[name] = np.append(d, d[-1])
        else:
            speeds[name] = np.zeros(n)
    frames = []
    for k in range(n):
        actors = []
        for name, arr in result.states.items():
            length, width, cls = dims[name]
            actors.append(
                ActorState(
                    actor_id=name,
                    actor_class=cls,
                    x=float(arr[k, 0]),
                    y=float(arr[k, 1]),
                    heading=float(arr[k, 2]),
                    speed=float(speeds[name][k]),
                    length=length,
                    width=width,
                    is_ego=name == ego_entity,
                )
            )
        frames.append(Frame(t=float(result.times[k]), actors=tuple(actors)))
    return frames
