"""Command-line pipeline: ingest, tag, index, search, export, fit, logical,
sample, coverage, analyze, bench.

Exit codes: 0 success, 1 user error (bad input, missing file, query syntax),
2 internal error. `--json` switches stdout to machine-readable JSON.
"""

from __future__ import annotations

import argparse
import glob
import json
import math
import os
import sys
import traceback

import numpy as np

from .config import Config, ConfigError, load_config
from .distributions import (
    FitError,
    JointDistribution,
    read_distributions_json,
    fit_joint,
    fit_univariate,
    write_distributions_json,
)
from .index import (
    MetadataRecord,
    ScenarioIndex,
    build_index,
    evaluate_query,
    extract_odd_records,
    latency_probe,
    metadata_from_tags,
)
from .mapmodel import MapError, load_map, write_opendrive
from .query import DEFAULT_FIELD_TYPES, QueryError, parse_query
from .real2sim import build_scenario, replay_frames, replay_scenario
from .recording import Recording, RecordingError, ingest_batch, parse_recording_segments, throughput_curve
from .safety import aggregate_safety, classify_scene, scores_to_csv
from .scevar import (
    LogicalScenario,
    TURN_PARAMETER_NAMES,
    compute_coverage,
    extract_turn_parameters,
    read_logical_scenario,
    sample_variations,
    write_logical_scenario,
)
from .synthetic import recording_to_jsonl
from .tagging import read_tags_jsonl, tag_recording, write_tags_jsonl
from .xosc import read_openscenario, validate_openscenario, write_openscenario


class CliError(Exception):
    """User-facing error: message to stderr, exit code 1."""


def _emit(args, payload, human: str | None = None) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    elif human is not None:
        print(human)


def _recordings_dir(config: Config) -> str:
    return os.path.join(config.paths.data_dir, "recordings")


def _load_recordings(config: Config) -> list[Recording]:
    pattern = os.path.join(_recordings_dir(config), "*.jsonl")
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise CliError(f"no recordings under {_recordings_dir(config)} (run `ingest` first)")
    recordings: list[Recording] = []
    for path in paths:
        recordings.extend(parse_recording_segments(path))
    return recordings


def _load_map(config: Config):
    if not os.path.exists(config.paths.map):
        raise CliError(f"map file not found: {config.paths.map}")
    return load_map(config.paths.map)


def _odd_path(config: Config) -> str:
    return os.path.join(config.paths.data_dir, "odd.jsonl")


def _tags_path(config: Config) -> str:
    return os.path.join(config.paths.data_dir, "tags.jsonl")


def _write_odd_jsonl(records: list[MetadataRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "recording_id": r.recording_id,
                        "t_start": r.t_start,
                        "t_end": r.t_end,
                        "field": r.field,
                        "value": r.value,
                    }
                )
                + "\n"
            )


def _read_odd_jsonl(path: str) -> list[MetadataRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                d = json.loads(line)
                records.append(
                    MetadataRecord(
                        recording_id=d["recording_id"],
                        t_start=float(d["t_start"]),
                        t_end=float(d["t_end"]),
                        field=d["field"],
                        value=d["value"],
                    )
                )
    return records


# -- commands ----------------------------------------------------------------------


def cmd_ingest(args, config: Config) -> int:
    paths = [p for pattern in args.files for p in sorted(glob.glob(pattern))] or args.files
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise CliError(f"input not found: {missing[0]}")
    recordings, report = ingest_batch(paths, workers=args.workers)
    out_dir = _recordings_dir(config)
    os.makedirs(out_dir, exist_ok=True)
    for rec in recordings:
        with open(os.path.join(out_dir, f"{rec.recording_id}.jsonl"), "w", encoding="utf-8") as fh:
            fh.write(recording_to_jsonl(rec))
    os.makedirs(config.paths.data_dir, exist_ok=True)
    with open(os.path.join(config.paths.data_dir, "ingest_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    _emit(
        args,
        report.to_dict(),
        f"ingested {report.recordings_ok} recordings "
        f"({report.bytes_ingested} bytes at {report.throughput:.0f} B/s), "
        f"{report.recordings_rejected} rejected",
    )
    for rejection in report.rejections:
        print(f"  rejected {rejection.path}: {rejection.reason}", file=sys.stderr)
    return 0


def cmd_tag(args, config: Config) -> int:
    recordings = _load_recordings(config)
    map_model = _load_map(config)
    tags = []
    odd: list[MetadataRecord] = []
    for rec in recordings:
        tags.extend(tag_recording(rec, map_model, config.tagger))
        odd.extend(extract_odd_records(rec, map_model, config.tagger))
    write_tags_jsonl(tags, _tags_path(config))
    _write_odd_jsonl(odd, _odd_path(config))
    _emit(
        args,
        {"tags": len(tags), "odd_records": len(odd)},
        f"tagged {len(recordings)} recordings: {len(tags)} tags, {len(odd)} ODD records",
    )
    return 0


def cmd_index(args, config: Config) -> int:
    if not os.path.exists(_tags_path(config)):
        raise CliError(f"no tags at {_tags_path(config)} (run `tag` first)")
    tags = read_tags_jsonl(_tags_path(config))
    odd = _read_odd_jsonl(_odd_path(config)) if os.path.exists(_odd_path(config)) else []
    manifest = build_index(tags, odd, config.paths.index_dir)
    _emit(
        args,
        manifest.to_dict(),
        f"indexed {manifest.total_records} records over {len(manifest.schema)} fields "
        f"into {config.paths.index_dir}",
    )
    return 0


def _parse_query_with_caret(text: str, schema: dict[str, str]):
    try:
        return parse_query(text, schema)
    except QueryError as e:
        message = str(e)
        if e.position is not None:
            caret = " " * e.position + "^"
            message = f"{message}\n  {text}\n  {caret}"
        raise CliError(f"query error: {message}") from None


def cmd_search(args, config: Config) -> int:
    index = ScenarioIndex.open(config.paths.index_dir)
    schema = dict(DEFAULT_FIELD_TYPES)
    schema.update(index.schema)
    ast = _parse_query_with_caret(args.query, schema)
    segments = evaluate_query(index, ast, overlap_slack=config.query.overlap_slack)
    payload = [s.to_dict() for s in segments]
    os.makedirs(config.paths.out_dir, exist_ok=True)
    with open(os.path.join(config.paths.out_dir, "search_results.json"), "w", encoding="utf-8") as fh:
        json.dump({"query": args.query, "segments": payload}, fh, indent=2)
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(f"{len(segments)} segment(s) for {args.query!r}")
        for s in segments:
            fields = ",".join(s.matched_fields)
            print(f"  {s.segment_id}  {s.recording_id}  [{s.t_start:.2f}, {s.t_end:.2f}]  {fields}")
    return 0


def cmd_export(args, config: Config) -> int:
    results_path = os.path.join(config.paths.out_dir, "search_results.json")
    if not os.path.exists(results_path):
        raise CliError(f"no search results at {results_path} (run `search` first)")
    with open(results_path, "r", encoding="utf-8") as fh:
        results = json.load(fh)
    match = next((s for s in results["segments"] if s["segment_id"] == args.segment_id), None)
    if match is None:
        raise CliError(f"segment {args.segment_id!r} not in the latest search results")
    rec_path = os.path.join(_recordings_dir(config), f"{match['recording_id']}.jsonl")
    if not os.path.exists(rec_path):
        raise CliError(f"recording file missing: {rec_path}")
    segments = parse_recording_segments(rec_path)
    rec = segments[0]
    map_model = _load_map(config)

    out_dir = os.path.join(config.paths.out_dir, "scenarios")
    os.makedirs(out_dir, exist_ok=True)
    map_path = os.path.join(out_dir, "map.xodr")
    write_opendrive(map_model, map_path)

    from .index import ScenarioSegment

    segment = ScenarioSegment(
        recording_id=match["recording_id"],
        t_start=float(match["t_start"]),
        t_end=float(match["t_end"]),
        matched_fields=tuple(match.get("matched_fields", ())),
    )
    doc = build_scenario(rec, segment, map_ref="map.xodr")
    xosc_path = os.path.join(out_dir, f"{args.segment_id}.xosc")
    write_openscenario(doc, xosc_path)
    violations = validate_openscenario(xosc_path)
    if violations:
        raise CliError(f"exported scenario failed validation: {violations[0]}")
    _emit(
        args,
        {"scenario": xosc_path, "map": map_path, "entities": [e.name for e in doc.entities]},
        f"exported {xosc_path} ({len(doc.entities)} entities) + {map_path}",
    )
    return 0


def cmd_fit(args, config: Config) -> int:
    params = [p.strip() for p in args.params.split(",") if p.strip()]
    unknown = [p for p in params if p not in TURN_PARAMETER_NAMES]
    if unknown:
        raise CliError(f"unknown parameter(s) {unknown}; choose from {list(TURN_PARAMETER_NAMES)}")
    if not params:
        raise CliError("no parameters given")
    if not os.path.exists(_tags_path(config)):
        raise CliError(f"no tags at {_tags_path(config)} (run `tag` first)")
    tags = read_tags_jsonl(_tags_path(config))
    turns = extract_turn_parameters([], tags)
    if len(turns) < 5:
        raise CliError(f"only {len(turns)} turns available; need >= 5 to fit")
    dists = {}
    for name in params:
        dists[name] = fit_univariate(
            np.array([t.value(name) for t in turns]), "gaussian_kde", name=name
        )
    if len(params) >= 2:
        samples = np.column_stack([[t.value(name) for t in turns] for name in params])
        if len(turns) >= 10:
            dists["__joint__"] = fit_joint(samples, dims=tuple(params))
    os.makedirs(config.paths.out_dir, exist_ok=True)
    out = os.path.join(config.paths.out_dir, "distributions.json")
    write_distributions_json(dists, out)
    _emit(
        args,
        {"parameters": params, "n_turns": len(turns), "file": out},
        f"fitted {params} from {len(turns)} turns -> {out}",
    )
    return 0


def cmd_logical(args, config: Config) -> int:
    template = read_openscenario(args.template)
    dist_path = os.path.join(config.paths.out_dir, "distributions.json")
    if not os.path.exists(dist_path):
        raise CliError(f"no fitted distributions at {dist_path} (run `fit` first)")
    fitted = read_distributions_json(dist_path)
    declared = template.parameter_names()
    distributions = {}
    joint = fitted.get("__joint__")
    if isinstance(joint, JointDistribution) and set(joint.dims) <= declared:
        distributions[tuple(joint.dims)] = joint
        declared = declared - set(joint.dims)
    for name in sorted(declared):
        if name not in fitted:
            raise CliError(f"template parameter {name!r} has no fitted distribution")
        distributions[name] = fitted[name]
    logical = LogicalScenario(template=template, distributions=distributions)
    out_dir = os.path.join(config.paths.out_dir, "logical")
    template_path, pvd_path = write_logical_scenario(logical, out_dir, seed=config.seed)
    for path in (template_path, pvd_path):
        violations = validate_openscenario(path)
        if violations:
            raise CliError(f"{path} failed validation: {violations[0]}")
    _emit(
        args,
        {"template": template_path, "distributions": pvd_path},
        f"wrote logical scenario: {template_path} + {pvd_path}",
    )
    return 0


def cmd_sample(args, config: Config) -> int:
    pvd_path = os.path.join(config.paths.out_dir, "logical", "distributions.xosc")
    if not os.path.exists(pvd_path):
        raise CliError(f"no logical scenario at {pvd_path} (run `logical` first)")
    logical = read_logical_scenario(pvd_path)
    seed = args.seed if args.seed is not None else config.seed
    variations = sample_variations(logical, args.n, mode=args.mode, seed=seed)
    out_dir = os.path.join(config.paths.out_dir, "variations")
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    for i, v in enumerate(variations):
        path = os.path.join(out_dir, f"variation_{i:04d}.xosc")
        write_openscenario(v.document, path)
        manifest.append({"file": os.path.basename(path), "assignment": v.assignment})
    with open(os.path.join(out_dir, "assignments.json"), "w", encoding="utf-8") as fh:
        json.dump({"mode": args.mode, "seed": seed, "variations": manifest}, fh, indent=2, sort_keys=True)
    _emit(
        args,
        {"n": len(variations), "mode": args.mode, "seed": seed, "dir": out_dir},
        f"wrote {len(variations)} variations ({args.mode}, seed {seed}) to {out_dir}",
    )
    return 0


def _read_points(path: str) -> np.ndarray:
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            return np.asarray(json.load(fh), dtype=float)
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                continue  # header line
    if not rows:
        raise CliError(f"no numeric rows in {path}")
    return np.asarray(rows)


def cmd_coverage(args, config: Config) -> int:
    dists = read_distributions_json(args.distributions)
    if args.param:
        if args.param not in dists:
            raise CliError(f"parameter {args.param!r} not in {args.distributions}")
        dist = dists[args.param]
    elif "__joint__" in dists:
        dist = dists["__joint__"]
    elif len(dists) == 1:
        dist = next(iter(dists.values()))
    else:
        raise CliError(f"pick one of {sorted(dists)} with --param")
    points = _read_points(args.points)
    report = compute_coverage(dist, points, bins_per_dim=args.bins)
    os.makedirs(config.paths.out_dir, exist_ok=True)
    with open(os.path.join(config.paths.out_dir, "coverage.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    with open(os.path.join(config.paths.out_dir, "coverage.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    _emit(
        args,
        {"covered_mass": report.covered_mass, "bins": int(len(report.masses))},
        f"coverage: {report.covered_mass:.3f} of distribution mass "
        f"({int((report.hits > 0).sum())}/{len(report.masses)} bins hit)",
    )
    return 0


def cmd_analyze(args, config: Config) -> int:
    if args.target.endswith(".xosc"):
        doc = read_openscenario(args.target)
        result = replay_scenario(doc)
        frames = replay_frames(result)
    else:
        segments = parse_recording_segments(args.target)
        frames = [segments[0].frame(i) for i in range(segments[0].n_frames)]
    scores = []
    for frame in frames:
        if len(frame.actors) >= 2:
            scores.extend(classify_scene(frame, ttc_threshold=config.safety.ttc_threshold))
    if not scores:
        raise CliError("nothing to analyze: no frames with two or more actors")
    report = aggregate_safety(
        scores,
        unsafe_fraction_max=config.safety.unsafe_fraction_max,
        ttc_floor=config.safety.ttc_floor,
        ttc_threshold=config.safety.ttc_threshold,
    )
    os.makedirs(config.paths.out_dir, exist_ok=True)
    with open(os.path.join(config.paths.out_dir, "safety_report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(os.path.join(config.paths.out_dir, "safety_scores.csv"), "w", encoding="utf-8") as fh:
        fh.write(scores_to_csv(scores))
    worst = min(report.pairs, key=lambda p: p.min_ttc, default=None)
    human = f"verdict: {report.verdict}"
    if worst is not None and not math.isinf(worst.min_ttc):
        human += f" (min TTC {worst.min_ttc:.2f} s between {worst.actor_a} and {worst.actor_b})"
    _emit(args, report.to_dict(), human)
    return 0


def cmd_bench(args, config: Config) -> int:
    os.makedirs(config.paths.out_dir, exist_ok=True)
    if args.what == "ingest":
        sizes = [int(float(s) * 1e6) for s in args.sizes.split(",")]
        samples = throughput_curve(sizes, workers=args.workers, seed=config.seed)
        lines = ["bytes,throughput_bytes_per_s"] + [f"{b},{t!r}" for b, t in samples]
        csv = "\n".join(lines) + "\n"
        with open(os.path.join(config.paths.out_dir, "bench_ingest.csv"), "w", encoding="utf-8") as fh:
            fh.write(csv)
        _emit(args, {"samples": [[b, t] for b, t in samples]}, csv.strip())
        return 0
    sizes = [int(float(s)) for s in args.sizes.split(",")]
    queries = [
        "event=lane_change",
        "speed>15",
        "event=turn & turn=left",
        "ODD.intersection=3-way & turn=left||right",
    ]
    samples = latency_probe(sizes, queries, seed=config.seed)
    lines = ["records,mean_latency_s"] + [f"{n},{t!r}" for n, t in samples]
    csv = "\n".join(lines) + "\n"
    with open(os.path.join(config.paths.out_dir, "bench_search.csv"), "w", encoding="utf-8") as fh:
        fh.write(csv)
    _emit(args, {"samples": [[n, t] for n, t in samples]}, csv.strip())
    return 0


# -- entry -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenariokit",
        description="Scenario database, digital twins, variations and safety scoring",
    )
    parser.add_argument("--config", help="JSON config file (SAFR_* env vars override)")
    parser.add_argument("--json", action="store_true", help="machine-readable stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse recordings into the data directory")
    p.add_argument("files", nargs="+", help="JSONL recording files (globs ok)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("tag", help="detect events and ODD attributes")
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("index", help="build the searchable index")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="evaluate a behavioral-competency query")
    p.add_argument("query")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("export", help="export a matched segment as a digital twin")
    p.add_argument("segment_id")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("fit", help="fit turn-parameter distributions")
    p.add_argument("--params", required=True, help="comma list, e.g. turning_speed,turning_radius")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("logical", help="attach distributions to a parameterized template")
    p.add_argument("template", help="template .xosc with parameter declarations")
    p.set_defaults(func=cmd_logical)

    p = sub.add_parser("sample", help="sample concrete scenario variations")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--mode", choices=["random", "stratified"], default="random")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("coverage", help="parameter-space coverage of executed points")
    p.add_argument("distributions", help="distributions.json from `fit`")
    p.add_argument("points", help="CSV or JSON of executed parameter points")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--param", default=None, help="univariate parameter name")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("analyze", help="TTC safety analysis of a scenario or recording")
    p.add_argument("target", help=".xosc scenario or .jsonl recording")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="throughput / latency measurements")
    p.add_argument("what", choices=["ingest", "search"])
    p.add_argument("--sizes", default="1,5,10", help="MB for ingest, record counts for search")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; bad arguments are user errors.
        return 0 if e.code == 0 else 1
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except (CliError, ConfigError, RecordingError, MapError, QueryError, FitError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename or e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def entry() -> None:
    raise SystemExit(run())
