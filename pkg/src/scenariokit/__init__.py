"""Scenario database toolkit: turn drive recordings into searchable
scenarios, export digital twins, fit parameter distributions, sample
variations and score interactions for safety."""

__version__ = "0.1.0"

from .recording import (
    ActorClass,
    ActorState,
    Frame,
    IngestReport,
    Recording,
    RecordingError,
    ingest_batch,
    parse_recording,
    parse_recording_segments,
    throughput_curve,
)
from .mapmodel import (
    Junction,
    Lane,
    MapError,
    MapModel,
    Road,
    RoadwayType,
    SignFeature,
    SignalFeature,
    SignalState,
    assign_lane,
    junction_distance,
    load_map,
    save_map_json,
    write_opendrive,
)
from .tagging import (
    EventKind,
    EventTag,
    TagEvalReport,
    TaggerConfig,
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
from .query import (
    And,
    Atom,
    Or,
    QueryError,
    estimate_query_accuracy,
    parse_query,
    print_query,
)
from .index import (
    IndexManifest,
    MetadataRecord,
    ScenarioIndex,
    ScenarioSegment,
    SchemaConflictError,
    build_index,
    evaluate_query,
    extract_odd_records,
    latency_probe,
    metadata_from_tags,
)
from .real2sim import (
    RelativeDistanceCondition,
    ScenarioDocument,
    SimulationTimeCondition,
    TrajectoryAction,
    add_relative_distance_trigger,
    build_scenario,
    replay_frames,
    replay_scenario,
    substitute_parameters,
)
from .xosc import (
    UnsupportedElementError,
    read_openscenario,
    validate_openscenario,
    write_openscenario,
)
from .fidelity import (
    FidelityReport,
    MotaResult,
    f1_labels,
    fidelity_static,
    fidelity_tracking,
    iou_boxes,
    jaccard_grids,
)
from .distributions import (
    FitError,
    HistogramDistribution,
    JointDistribution,
    KdeDistribution,
    UnivariateDistribution,
    fit_joint,
    fit_univariate,
    read_distributions_json,
    write_distributions_json,
)
from .scevar import (
    ConcreteVariation,
    CoverageReport,
    LogicalScenario,
    TurnParameters,
    TurnTrajectoryModel,
    compute_coverage,
    extract_turn_parameters,
    learn_turn_trajectories,
    read_logical_scenario,
    sample_variations,
    write_logical_scenario,
)
from .safety import (
    InteractionScore,
    ScenarioSafetyReport,
    aggregate_safety,
    classify_scene,
    compute_ttc,
)
from .config import Config, ConfigError, load_config

__all__ = [name for name in dir() if not name.startswith("_")]
