"""OpenSCENARIO 1.1 XML serialization for scenario documents and
parameter-value distributions.

Supported element subset (whitelisted on read): FileHeader,
ParameterDeclarations, RoadNetwork, Entities/ScenarioObject/Vehicle, Init
teleport+speed actions, Storyboard with FollowTrajectoryAction polylines,
SimulationTimeCondition and RelativeDistanceCondition triggers, and
ParameterValueDistribution with Histogram / DistributionSet entries.
Numbers are written with repr() so a write/read round trip is exact.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET

from .recording import ActorClass
from .real2sim import (
    Act,
    EntityDef,
    InitState,
    Maneuver,
    ManeuverGroup,
    ParameterDecl,
    RelativeDistanceCondition,
    ScenarioDocument,
    ScenarioEvent,
    SimulationTimeCondition,
    Story,
    TrajectoryAction,
)

FILE_DATE = "2024-01-01T00:00:00"  # constant so identical inputs give identical bytes
AUTHOR = "scenariokit"

_VEHICLE_CATEGORY = {
    ActorClass.CAR: "car",
    ActorClass.TRUCK: "truck",
    ActorClass.BICYCLE: "bicycle",
    ActorClass.PEDESTRIAN: "car",  # category set is closed; class rides in name
    ActorClass.OTHER: "car",
}


class UnsupportedElementError(ValueError):
    """File uses an element outside the documented subset."""


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))


def _parse_value(text: str) -> float | str:
    if text.startswith("$"):
        return text
    return float(text)


def _header(root: ET.Element, description: str) -> None:
    ET.SubElement(
        root,
        "FileHeader",
        revMajor="1",
        revMinor="1",
        date=FILE_DATE,
        description=description,
        author=AUTHOR,
    )


def write_openscenario(doc: ScenarioDocument, path: str) -> None:
    doc.validate()
    root = ET.Element("OpenSCENARIO")
    _header(root, doc.description)

    decls = ET.SubElement(root, "ParameterDeclarations")
    for p in doc.parameters:
        ET.SubElement(
            decls,
            "ParameterDeclaration",
            name=p.name,
            parameterType=p.ptype,
            value=p.default,
        )
    ET.SubElement(ET.SubElement(root, "RoadNetwork"), "LogicFile", filepath=doc.map_ref)

    entities = ET.SubElement(root, "Entities")
    for e in doc.entities:
        obj = ET.SubElement(entities, "ScenarioObject", name=e.name)
        veh = ET.SubElement(
            obj,
            "Vehicle",
            name=e.actor_class.value,
            vehicleCategory=_VEHICLE_CATEGORY[e.actor_class],
        )
        bb = ET.SubElement(veh, "BoundingBox")
        ET.SubElement(bb, "Center", x="0.0", y="0.0", z="0.9")
        ET.SubElement(bb, "Dimensions", width=_fmt(e.width), length=_fmt(e.length), height="1.5")
        ET.SubElement(
            veh, "Performance", maxSpeed="80.0", maxAcceleration="10.0", maxDeceleration="10.0"
        )
        axles = ET.SubElement(veh, "Axles")
        ET.SubElement(
            axles,
            "FrontAxle",
            maxSteering="0.5",
            wheelDiameter="0.6",
            trackWidth=_fmt(e.width),
            positionX=_fmt(max(e.length * 0.6, 0.1)),
            positionZ="0.3",
        )
        ET.SubElement(
            axles,
            "RearAxle",
            maxSteering="0.0",
            wheelDiameter="0.6",
            trackWidth=_fmt(e.width),
            positionX="0.0",
            positionZ="0.3",
        )

    storyboard = ET.SubElement(root, "Storyboard")
    init_actions = ET.SubElement(ET.SubElement(storyboard, "Init"), "Actions")
    for name, st in doc.init.items():
        private = ET.SubElement(init_actions, "Private", entityRef=name)
        teleport = ET.SubElement(ET.SubElement(private, "PrivateAction"), "TeleportAction")
        pos = ET.SubElement(teleport, "Position")
        ET.SubElement(pos, "WorldPosition", x=_fmt(st.x), y=_fmt(st.y), h=_fmt(st.heading))
        lon = ET.SubElement(ET.SubElement(private, "PrivateAction"), "LongitudinalAction")
        speed = ET.SubElement(lon, "SpeedAction")
        ET.SubElement(
            speed,
            "SpeedActionDynamics",
            dynamicsShape="step",
            value="0.0",
            dynamicsDimension="time",
        )
        target = ET.SubElement(speed, "SpeedActionTarget")
        ET.SubElement(target, "AbsoluteTargetSpeed", value=_fmt(st.speed))

    for story in doc.stories:
        story_el = ET.SubElement(storyboard, "Story", name=story.name)
        for act in story.acts:
            act_el = ET.SubElement(story_el, "Act", name=act.name)
            for group in act.groups:
                mg = ET.SubElement(
                    act_el, "ManeuverGroup", name=group.name, maximumExecutionCount="1"
                )
                actors = ET.SubElement(mg, "Actors", selectTriggeringEntities="false")
                ET.SubElement(actors, "EntityRef", entityRef=group.entity)
                for maneuver in group.maneuvers:
                    man_el = ET.SubElement(mg, "Maneuver", name=maneuver.name)
                    for event in maneuver.events:
                        ev_el = ET.SubElement(
                            man_el, "Event", name=event.name, priority="overwrite"
                        )
                        action_el = ET.SubElement(ev_el, "Action", name=f"act_{event.name}")
                        _write_follow_trajectory(action_el, event.action)
                        _write_trigger(ET.SubElement(ev_el, "StartTrigger"), event)
            act_start = ET.SubElement(act_el, "StartTrigger")
            cg = ET.SubElement(act_start, "ConditionGroup")
            cond = ET.SubElement(
                cg, "Condition", name="act_start", delay="0.0", conditionEdge="rising"
            )
            bv = ET.SubElement(cond, "ByValueCondition")
            ET.SubElement(bv, "SimulationTimeCondition", value="0.0", rule="greaterOrEqual")
    ET.SubElement(storyboard, "StopTrigger")

    tree = ET.ElementTree(root)
    ET.indent(tree)
    tree.write(path, encoding="unicode", xml_declaration=True)


def _write_follow_trajectory(action_el: ET.Element, action: TrajectoryAction) -> None:
    follow = ET.SubElement(
        ET.SubElement(ET.SubElement(action_el, "PrivateAction"), "RoutingAction"),
        "FollowTrajectoryAction",
    )
    traj = ET.SubElement(
        ET.SubElement(follow, "TrajectoryRef"),
        "Trajectory",
        name=f"traj_{action.entity}",
        closed="false",
    )
    poly = ET.SubElement(ET.SubElement(traj, "Shape"), "Polyline")
    for t, x, y, h in zip(action.times, action.x, action.y, action.heading):
        vertex = ET.SubElement(poly, "Vertex", time=_fmt(t))
        pos = ET.SubElement(vertex, "Position")
        ET.SubElement(pos, "WorldPosition", x=_fmt(x), y=_fmt(y), h=_fmt(h))
    timing = ET.SubElement(follow, "TimeReference")
    ET.SubElement(timing, "Timing", domainAbsoluteRelative="relative", scale="1.0", offset="0.0")
    ET.SubElement(follow, "TrajectoryFollowingMode", followingMode="position")


def _write_trigger(trigger_el: ET.Element, event: ScenarioEvent) -> None:
    cg = ET.SubElement(trigger_el, "ConditionGroup")
    cond = ET.SubElement(
        cg, "Condition", name=f"cond_{event.name}", delay="0.0", conditionEdge="rising"
    )
    trig = event.trigger
    if isinstance(trig, SimulationTimeCondition):
        bv = ET.SubElement(cond, "ByValueCondition")
        ET.SubElement(bv, "SimulationTimeCondition", value=_fmt(trig.at), rule="greaterOrEqual")
    else:
        be = ET.SubElement(cond, "ByEntityCondition")
        te = ET.SubElement(be, "TriggeringEntities", triggeringEntitiesRule="any")
        ET.SubElement(te, "EntityRef", entityRef=trig.entity_a)
        ec = ET.SubElement(be, "EntityCondition")
        ET.SubElement(
            ec,
            "RelativeDistanceCondition",
            entityRef=trig.entity_b,
            relativeDistanceType="cartesianDistance",
            value=_fmt(trig.threshold),
            freespace="false",
            rule="lessThan" if trig.rule == "<" else "greaterThan",
        )


# -- reading ---------------------------------------------------------------------


def read_openscenario(path: str) -> ScenarioDocument:
    tree = ET.parse(path)
    root = tree.getroot()
    if root.tag != "OpenSCENARIO":
        raise UnsupportedElementError(f"not an OpenSCENARIO file: <{root.tag}>")
    header = root.find("FileHeader")
    description = header.get("description", "") if header is not None else ""

    parameters = []
    decls = root.find("ParameterDeclarations")
    if decls is not None:
        for p in decls.findall("ParameterDeclaration"):
            parameters.append(
                ParameterDecl(p.get("name"), p.get("parameterType", "double"), p.get("value", ""))
            )

    road = root.find("RoadNetwork/LogicFile")
    map_ref = road.get("filepath") if road is not None else ""

    entities: list[EntityDef] = []
    for obj in root.findall("Entities/ScenarioObject"):
        veh = obj.find("Vehicle")
        if veh is None:
            raise UnsupportedElementError(
                f"unsupported entity payload in <ScenarioObject name={obj.get('name')!r}>"
            )
        dims = veh.find("BoundingBox/Dimensions")
        entities.append(
            EntityDef(
                name=obj.get("name"),
                actor_class=ActorClass(veh.get("name", "car")),
                length=float(dims.get("length")),
                width=float(dims.get("width")),
            )
        )

    init: dict[str, InitState] = {}
    for private in root.findall("Storyboard/Init/Actions/Private"):
        name = private.get("entityRef")
        world = private.find("PrivateAction/TeleportAction/Position/WorldPosition")
        speed_el = private.find(
            "PrivateAction/LongitudinalAction/SpeedAction/SpeedActionTarget/AbsoluteTargetSpeed"
        )
        init[name] = InitState(
            x=float(world.get("x")),
            y=float(world.get("y")),
            heading=float(world.get("h", 0.0)),
            speed=_parse_value(speed_el.get("value")) if speed_el is not None else 0.0,
        )

    stories = []
    for story_el in root.findall("Storyboard/Story"):
        acts = []
        for act_el in story_el.findall("Act"):
            groups = []
            for mg in act_el.findall("ManeuverGroup"):
                entity_ref = mg.find("Actors/EntityRef")
                maneuvers = []
                for man_el in mg.findall("Maneuver"):
                    events = []
                    for ev_el in man_el.findall("Event"):
                        events.append(_read_event(ev_el))
                    maneuvers.append(Maneuver(name=man_el.get("name"), events=tuple(events)))
                groups.append(
                    ManeuverGroup(
                        name=mg.get("name"),
                        entity=entity_ref.get("entityRef") if entity_ref is not None else "",
                        maneuvers=tuple(maneuvers),
                    )
                )
            acts.append(Act(name=act_el.get("name"), groups=tuple(groups)))
        stories.append(Story(name=story_el.get("name"), acts=tuple(acts)))

    doc = ScenarioDocument(
        description=description,
        map_ref=map_ref,
        entities=tuple(entities),
        init=init,
        stories=tuple(stories),
        parameters=tuple(parameters),
    )
    doc.validate()
    return doc


def _read_event(ev_el: ET.Element) -> ScenarioEvent:
    private = ev_el.find("Action/PrivateAction")
    if private is None or len(private) == 0:
        raise UnsupportedElementError(f"event {ev_el.get('name')!r} has no supported action")
    payload = private[0]
    if payload.tag != "RoutingAction":
        raise UnsupportedElementError(f"unsupported action <{payload.tag}>")
    follow = payload.find("FollowTrajectoryAction")
    if follow is None:
        raise UnsupportedElementError(
            f"unsupported routing action in event {ev_el.get('name')!r}"
        )
    poly = follow.find("TrajectoryRef/Trajectory/Shape/Polyline")
    if poly is None:
        raise UnsupportedElementError("unsupported trajectory shape (only Polyline)")
    times, xs, ys, hs = [], [], [], []
    for vertex in poly.findall("Vertex"):
        world = vertex.find("Position/WorldPosition")
        times.append(float(vertex.get("time")))
        xs.append(float(world.get("x")))
        ys.append(float(world.get("y")))
        hs.append(float(world.get("h", 0.0)))
    # The owning entity is recorded on the trajectory name by the writer;
    # fall back to the maneuver-group entity on read (resolved by caller).
    traj = follow.find("TrajectoryRef/Trajectory")
    entity = traj.get("name", "traj_").removeprefix("traj_")
    action = TrajectoryAction(
        entity=entity, times=tuple(times), x=tuple(xs), y=tuple(ys), heading=tuple(hs)
    )

    cond = ev_el.find("StartTrigger/ConditionGroup/Condition")
    if cond is None:
        raise UnsupportedElementError(f"event {ev_el.get('name')!r} missing start trigger")
    bv = cond.find("ByValueCondition/SimulationTimeCondition")
    if bv is not None:
        trigger = SimulationTimeCondition(at=float(bv.get("value")))
    else:
        be = cond.find("ByEntityCondition")
        if be is None:
            raise UnsupportedElementError(
                f"unsupported condition in event {ev_el.get('name')!r}"
            )
        rd = be.find("EntityCondition/RelativeDistanceCondition")
        if rd is None:
            raise UnsupportedElementError(
                f"unsupported entity condition in event {ev_el.get('name')!r}"
            )
        entity_a = be.find("TriggeringEntities/EntityRef").get("entityRef")
        trigger = RelativeDistanceCondition(
            entity_a=entity_a,
            entity_b=rd.get("entityRef"),
            threshold=_parse_value(rd.get("value")),
            rule="<" if rd.get("rule") == "lessThan" else ">",
        )
    return ScenarioEvent(name=ev_el.get("name"), trigger=trigger, action=action)


# -- parameter value distributions -------------------------------------------------


def write_parameter_distribution(
    path: str,
    scenario_file: str,
    histograms: dict[str, list[tuple[float, float, float]]],
    value_sets: dict[str, list[str]] | None = None,
    n_runs: int = 100,
    seed: int = 0,
) -> None:
    """ParameterValueDistribution file: Histogram bins (lo, hi, weight) per
    stochastic parameter, DistributionSet per enumeration parameter."""
    root = ET.Element("OpenSCENARIO")
    _header(root, f"parameter distributions for {scenario_file}")
    pvd = ET.SubElement(root, "ParameterValueDistribution")
    ET.SubElement(pvd, "ScenarioFile", filepath=scenario_file)
    if histograms:
        stoch = ET.SubElement(pvd, "Stochastic", numberOfTestRuns=str(n_runs), randomSeed=str(seed))
        for pname, bins in histograms.items():
            dist = ET.SubElement(stoch, "StochasticDistribution", parameterName=pname)
            hist = ET.SubElement(dist, "Histogram")
            for lo, hi, weight in bins:
                bin_el = ET.SubElement(hist, "Bin", weight=_fmt(weight))
                ET.SubElement(bin_el, "Range", lowerLimit=_fmt(lo), upperLimit=_fmt(hi))
    if value_sets:
        det = ET.SubElement(pvd, "Deterministic")
        for pname, values in value_sets.items():
            single = ET.SubElement(
                det, "DeterministicSingleParameterDistribution", parameterName=pname
            )
            dset = ET.SubElement(single, "DistributionSet")
            for v in values:
                ET.SubElement(dset, "Element", value=str(v))
    tree = ET.ElementTree(root)
    ET.indent(tree)
    tree.write(path, encoding="unicode", xml_declaration=True)


def read_parameter_distribution(path: str):
    """Returns (scenario_file, histograms, value_sets) as written by
    write_parameter_distribution."""
    root = ET.parse(path).getroot()
    pvd = root.find("ParameterValueDistribution")
    if pvd is None:
        raise UnsupportedElementError("missing ParameterValueDistribution")
    scenario_file = pvd.find("ScenarioFile").get("filepath")
    histograms: dict[str, list[tuple[float, float, float]]] = {}
    stoch = pvd.find("Stochastic")
    if stoch is not None:
        for dist in stoch.findall("StochasticDistribution"):
            hist = dist.find("Histogram")
            if hist is None:
                raise UnsupportedElementError(
                    f"unsupported stochastic distribution for {dist.get('parameterName')!r}"
                )
            bins = []
            for bin_el in hist.findall("Bin"):
                rng = bin_el.find("Range")
                bins.append(
                    (
                        float(rng.get("lowerLimit")),
                        float(rng.get("upperLimit")),
                        float(bin_el.get("weight")),
                    )
                )
            histograms[dist.get("parameterName")] = bins
    value_sets: dict[str, list[str]] = {}
    det = pvd.find("Deterministic")
    if det is not None:
        for single in det.findall("DeterministicSingleParameterDistribution"):
            values = [e.get("value") for e in single.findall("DistributionSet/Element")]
            value_sets[single.get("parameterName")] = values
    return scenario_file, histograms, value_sets


# -- structural validation -----------------------------------------------------------

# tag -> allowed child tags (None = any attributes, children listed only).
_SCENARIO_WHITELIST: dict[str, set[str]] = {
    "OpenSCENARIO": {"FileHeader", "ParameterDeclarations", "RoadNetwork", "Entities", "Storyboard", "ParameterValueDistribution", "CatalogLocations"},
    "FileHeader": set(),
    "ParameterDeclarations": {"ParameterDeclaration"},
    "ParameterDeclaration": set(),
    "CatalogLocations": set(),
    "RoadNetwork": {"LogicFile", "SceneGraphFile"},
    "LogicFile": set(),
    "SceneGraphFile": set(),
    "Entities": {"ScenarioObject"},
    "ScenarioObject": {"Vehicle"},
    "Vehicle": {"ParameterDeclarations", "BoundingBox", "Performance", "Axles", "Properties"},
    "BoundingBox": {"Center", "Dimensions"},
    "Center": set(),
    "Dimensions": set(),
    "Performance": set(),
    "Axles": {"FrontAxle", "RearAxle", "AdditionalAxle"},
    "FrontAxle": set(),
    "RearAxle": set(),
    "AdditionalAxle": set(),
    "Properties": {"Property"},
    "Property": set(),
    "Storyboard": {"Init", "Story", "StopTrigger"},
    "Init": {"Actions"},
    "Actions": {"Private", "GlobalAction"},
    "GlobalAction": {"EnvironmentAction"},
    "EnvironmentAction": {"Environment"},
    "Environment": {"TimeOfDay", "Weather", "RoadCondition"},
    "TimeOfDay": set(),
    "Weather": {"Sun", "Fog", "Precipitation"},
    "Sun": set(),
    "Fog": set(),
    "Precipitation": set(),
    "RoadCondition": set(),
    "Private": {"PrivateAction"},
    "PrivateAction": {"TeleportAction", "LongitudinalAction", "RoutingAction"},
    "TeleportAction": {"Position"},
    "Position": {"WorldPosition"},
    "WorldPosition": set(),
    "LongitudinalAction": {"SpeedAction"},
    "SpeedAction": {"SpeedActionDynamics", "SpeedActionTarget"},
    "SpeedActionDynamics": set(),
    "SpeedActionTarget": {"AbsoluteTargetSpeed"},
    "AbsoluteTargetSpeed": set(),
    "Story": {"ParameterDeclarations", "Act"},
    "Act": {"ManeuverGroup", "StartTrigger", "StopTrigger"},
    "ManeuverGroup": {"Actors", "Maneuver"},
    "Actors": {"EntityRef"},
    "EntityRef": set(),
    "Maneuver": {"ParameterDeclarations", "Event"},
    "Event": {"Action", "StartTrigger"},
    "Action": {"PrivateAction"},
    "RoutingAction": {"FollowTrajectoryAction"},
    "FollowTrajectoryAction": {"TrajectoryRef", "TimeReference", "TrajectoryFollowingMode"},
    "TrajectoryRef": {"Trajectory"},
    "Trajectory": {"ParameterDeclarations", "Shape"},
    "Shape": {"Polyline"},
    "Polyline": {"Vertex"},
    "Vertex": {"Position"},
    "TimeReference": {"Timing", "None"},
    "Timing": set(),
    "None": set(),
    "TrajectoryFollowingMode": set(),
    "StartTrigger": {"ConditionGroup"},
    "StopTrigger": {"ConditionGroup"},
    "ConditionGroup": {"Condition"},
    "Condition": {"ByValueCondition", "ByEntityCondition"},
    "ByValueCondition": {"SimulationTimeCondition"},
    "SimulationTimeCondition": set(),
    "ByEntityCondition": {"TriggeringEntities", "EntityCondition"},
    "TriggeringEntities": {"EntityRef"},
    "EntityCondition": {"RelativeDistanceCondition"},
    "RelativeDistanceCondition": set(),
    "ParameterValueDistribution": {"ScenarioFile", "Stochastic", "Deterministic"},
    "ScenarioFile": set(),
    "Stochastic": {"StochasticDistribution"},
    "StochasticDistribution": {"Histogram"},
    "Histogram": {"Bin"},
    "Bin": {"Range"},
    "Range": set(),
    "Deterministic": {"DeterministicSingleParameterDistribution"},
    "DeterministicSingleParameterDistribution": {"DistributionSet"},
    "DistributionSet": {"Element"},
    "Element": set(),
}

_REQUIRED_CHILDREN = {
    "OpenSCENARIO": {"FileHeader"},
    "Event": {"Action", "StartTrigger"},
    "ScenarioObject": {"Vehicle"},
}


def validate_openscenario(path: str, schema_path: str | None = None) -> list[str]:
    """Validate a file against the XSD when one is supplied, otherwise
    against the structural whitelist. Returns a list of violations (empty
    means valid)."""
    if schema_path is not None:
        try:
            import xmlschema  # optional, only used when a schema is provided
        except ImportError:
            pass
        else:
            schema = xmlschema.XMLSchema(schema_path)
            return [str(e) for e in schema.iter_errors(path)]
    violations: list[str] = []
    root = ET.parse(path).getroot()

    def walk(el: ET.Element, trail: str):
        allowed = _SCENARIO_WHITELIST.get(el.tag)
        if allowed is None:
            violations.append(f"{trail}: element <{el.tag}> outside supported subset")
            return
        present = {c.tag for c in el}
        for missing in _REQUIRED_CHILDREN.get(el.tag, set()) - present:
            violations.append(f"{trail}/{el.tag}: missing required <{missing}>")
        for child in el:
            if child.tag not in allowed:
                violations.append(f"{trail}/{el.tag}: unexpected child <{child.tag}>")
            else:
                walk(child, f"{trail}/{el.tag}")

    if root.tag != "OpenSCENARIO":
        return [f"root element <{root.tag}> is not OpenSCENARIO"]
    walk(root, "")
    return violations
