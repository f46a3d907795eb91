"""Searchable scenario metadata index.

Event tags and ODD attributes lower to MetadataRecords (field path, value,
time interval). String fields are stored as sorted postings over an
interned value pool, numeric fields as value-sorted columns, both in one
npz next to a JSON manifest. Indexes are write-once; re-ingestion builds a
new directory generation.

Interval algebra (shared by the brute-force oracle in the test suite):

* every operand interval set is canonical per recording: sorted, with any
  gap <= overlap_slack coalesced;
* And combines operand intervals pairwise: true intersection when they
  overlap, the bridging gap [min_end, max_start] when 0 < gap <= slack;
  n-ary And folds left, re-canonicalizing between steps;
* Or is the union; node outputs merge only overlapping/touching pieces.

This is the one simple semantics that keeps eval(And(a,a)) == eval(a),
eval(Or(a,a)) == eval(a), and every And(a,b) segment inside a slack-padded
eval(a) segment, while giving plain interval intersection for genuinely
overlapping conditions.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .mapmodel import MapModel, assign_lane
from .query import DEFAULT_FIELD_TYPES, And, Atom, Or, QueryError, QueryNode, parse_query
from .recording import Recording
from .tagging import EventKind, EventTag, TaggerConfig, detect_intersection_presence

DEFAULT_OVERLAP_SLACK = 2.0

INDEX_VERSION = 1
MANIFEST_NAME = "manifest.json"
POSTINGS_NAME = "postings.npz"

# Ranges the ego must be within for a sign/signal to describe its ODD.
SIGN_RANGE_M = 30.0
SIGNAL_RANGE_M = 40.0


class SchemaConflictError(ValueError):
    """Same field indexed with two value types."""


@dataclass(frozen=True)
class MetadataRecord:
    recording_id: str
    t_start: float
    t_end: float
    field: str
    value: str | float

    def __post_init__(self):
        if not self.field:
            raise ValueError("empty field path")
        if not self.t_start < self.t_end:
            raise ValueError(f"empty interval for {self.field}")


@dataclass(frozen=True)
class ScenarioSegment:
    recording_id: str
    t_start: float
    t_end: float
    matched_fields: tuple[str, ...]

    @property
    def segment_id(self) -> str:
        """Content hash, stable across re-indexing."""
        key = f"{self.recording_id}|{self.t_start:.3f}|{self.t_end:.3f}"
        return hashlib.sha1(key.encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {
            "segment_id": self.segment_id,
            "recording_id": self.recording_id,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "matched_fields": list(self.matched_fields),
        }


@dataclass
class IndexManifest:
    version: int
    schema: dict[str, str]
    counts: dict[str, int]
    recording_ids: list[str]
    total_records: int
    files: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "schema": self.schema,
            "counts": self.counts,
            "recording_ids": self.recording_ids,
            "total_records": self.total_records,
            "files": self.files,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IndexManifest":
        return cls(
            version=int(d["version"]),
            schema=dict(d["schema"]),
            counts={k: int(v) for k, v in d["counts"].items()},
            recording_ids=list(d["recording_ids"]),
            total_records=int(d["total_records"]),
            files=dict(d.get("files", {})),
        )


# -- lowering ------------------------------------------------------------------

# EventTag kind -> (event value, extra (field, value) pairs needing attributes).
_KIND_EVENT_VALUE = {
    EventKind.TURN_LEFT: "turn",
    EventKind.TURN_RIGHT: "turn",
    EventKind.LANE_CHANGE_LEFT: "lane_change",
    EventKind.LANE_CHANGE_RIGHT: "lane_change",
    EventKind.CUT_IN: "cut_in",
    EventKind.CUT_OUT: "cut_out",
    EventKind.RAPID_DECEL: "rapid_decel",
    EventKind.MERGE: "merge",
    EventKind.STOP: "stop",
}

_NUMERIC_ATTRIBUTES = {
    "mean_speed": "speed",
    "min_accel": "min_accel",
    "net_heading_change": "heading_change",
    "min_turn_radius": "turn_radius",
    "gap_m": "gap",
}


def metadata_from_tags(tags: list[EventTag]) -> list[MetadataRecord]:
    """Lower event tags to the searchable schema.

    turn/lane_change kinds also emit a direction field; ego-owned events
    mirror into ego_vehicle_event; junction presence of the ego becomes
    ODD.intersection = "<arity>-way".
    """
    records: list[MetadataRecord] = []

    def rec(tag: EventTag, fname: str, value):
        records.append(
            MetadataRecord(
                recording_id=tag.recording_id,
                t_start=tag.t_start,
                t_end=tag.t_end,
                field=fname,
                value=value,
            )
        )

    for tag in tags:
        is_ego = bool(tag.attributes.get("ego"))
        if tag.kind is EventKind.INTERSECTION_PRESENCE:
            if is_ego and "arity" in tag.attributes:
                rec(tag, "ODD.intersection", f"{int(tag.attributes['arity'])}-way")
            continue
        event_value = _KIND_EVENT_VALUE[tag.kind]
        rec(tag, "event", event_value)
        if tag.kind in (EventKind.TURN_LEFT, EventKind.LANE_CHANGE_LEFT):
            rec(tag, event_value if tag.kind is EventKind.TURN_LEFT else "lane_change", "left")
        elif tag.kind in (EventKind.TURN_RIGHT, EventKind.LANE_CHANGE_RIGHT):
            rec(tag, event_value if tag.kind is EventKind.TURN_RIGHT else "lane_change", "right")
        if is_ego:
            rec(tag, "ego_vehicle_event", event_value)
        for attr, fname in _NUMERIC_ATTRIBUTES.items():
            if attr in tag.attributes and isinstance(tag.attributes[attr], (int, float)):
                value = float(tag.attributes[attr])
                if math.isfinite(value):
                    rec(tag, fname, value)
    return records


def _proximity_runs(times: np.ndarray, inside: np.ndarray, merge_gap: float):
    if not np.any(inside):
        return []
    d = np.diff(np.concatenate([[0], inside.astype(np.int8), [0]]))
    starts = np.nonzero(d == 1)[0]
    ends = np.nonzero(d == -1)[0] - 1
    intervals = []
    for i0, i1 in zip(starts, ends):
        if times[i1] > times[i0]:
            intervals.append([float(times[i0]), float(times[i1])])
    merged: list[list[float]] = []
    for s, e in intervals:
        if merged and s - merged[-1][1] <= merge_gap:
            merged[-1][1] = e
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def extract_odd_records(
    rec: Recording, map_model: MapModel, config: TaggerConfig | None = None
) -> list[MetadataRecord]:
    """Ego-centric ODD attributes: roadway type intervals, signage and
    signal-state proximity, junction arity."""
    config = config or TaggerConfig()
    ego = rec.ego_track()
    t = ego.times
    records: list[MetadataRecord] = []

    # Roadway type from the ego's assigned road.
    assigns = [assign_lane(map_model, float(x), float(y)) for x, y in zip(ego.x, ego.y)]
    types = [map_model.road(a[0]).roadway_type.value if a else None for a in assigns]
    i = 0
    runs: list[tuple[str, float, float]] = []
    while i < len(types):
        if types[i] is None:
            i += 1
            continue
        j = i
        while j + 1 < len(types) and types[j + 1] == types[i]:
            j += 1
        if t[j] > t[i]:
            runs.append((types[i], float(t[i]), float(t[j])))
        i = j + 1
    merged: list[list] = []
    for value, s, e in runs:
        if merged and merged[-1][0] == value and s - merged[-1][2] <= config.interval_merge_s:
            merged[-1][2] = e
        else:
            merged.append([value, s, e])
    for value, s, e in merged:
        records.append(MetadataRecord(rec.recording_id, s, e, "ODD.roadway_type", value))

    for sign in map_model.signage:
        dist = np.hypot(ego.x - sign.position[0], ego.y - sign.position[1])
        for s, e in _proximity_runs(t, dist <= SIGN_RANGE_M, config.interval_merge_s):
            records.append(MetadataRecord(rec.recording_id, s, e, "ODD.signage", sign.kind))

    for signal in map_model.signals:
        dist = np.hypot(ego.x - signal.position[0], ego.y - signal.position[1])
        for s, e in _proximity_runs(t, dist <= SIGNAL_RANGE_M, config.interval_merge_s):
            for st in signal.states:
                lo = max(s, st.t_start)
                hi = min(e, st.t_end)
                if hi > lo:
                    records.append(
                        MetadataRecord(rec.recording_id, lo, hi, "ODD.traffic_signal", st.state)
                    )

    ego_id = ego.actor_id
    for tag in detect_intersection_presence(rec, map_model, ego_id, config):
        records.append(
            MetadataRecord(
                rec.recording_id,
                tag.t_start,
                tag.t_end,
                "ODD.intersection",
                f"{int(tag.attributes['arity'])}-way",
            )
        )
    return records


# -- index structure -------------------------------------------------------------


class ScenarioIndex:
    """Immutable postings over metadata records, queryable via QueryAst."""

    def __init__(self, manifest: IndexManifest, fields: dict[str, dict]):
        self.manifest = manifest
        self._fields = fields
        self.recording_ids = manifest.recording_ids

    # -- construction -----------------------------------------------------

    @classmethod
    def from_records(cls, records: list[MetadataRecord]) -> "ScenarioIndex":
        schema: dict[str, str] = {}
        for r in records:
            ftype = "number" if isinstance(r.value, (int, float)) and not isinstance(r.value, bool) else "string"
            prev = schema.setdefault(r.field, ftype)
            if prev != ftype:
                raise SchemaConflictError(
                    f"schema conflict: field {r.field!r} indexed as both {prev} and {ftype}"
                )
        rec_ids = sorted({r.recording_id for r in records})
        rec_idx = {rid: i for i, rid in enumerate(rec_ids)}
        by_field: dict[str, list[MetadataRecord]] = {}
        for r in records:
            by_field.setdefault(r.field, []).append(r)

        fields: dict[str, dict] = {}
        for fname, rows in by_field.items():
            recs = np.array([rec_idx[r.recording_id] for r in rows], dtype=np.int32)
            t0 = np.array([r.t_start for r in rows])
            t1 = np.array([r.t_end for r in rows])
            if schema[fname] == "string":
                pool = sorted({str(r.value) for r in rows})
                pool_idx = {v: i for i, v in enumerate(pool)}
                vidx = np.array([pool_idx[str(r.value)] for r in rows], dtype=np.int32)
                order = np.lexsort((t0, recs, vidx))
                fields[fname] = {
                    "type": "string",
                    "pool": pool,
                    "value_idx": vidx[order],
                    "rec": recs[order],
                    "t0": t0[order],
                    "t1": t1[order],
                }
            else:
                values = np.array([float(r.value) for r in rows])
                order = np.lexsort((t0, recs, values))
                fields[fname] = {
                    "type": "number",
                    "values": values[order],
                    "rec": recs[order],
                    "t0": t0[order],
                    "t1": t1[order],
                }
        manifest = IndexManifest(
            version=INDEX_VERSION,
            schema=schema,
            counts={f: len(by_field[f]) for f in by_field},
            recording_ids=rec_ids,
            total_records=len(records),
            files={f: POSTINGS_NAME for f in by_field},
        )
        return cls(manifest, fields)

    def save(self, directory: str) -> IndexManifest:
        os.makedirs(directory, exist_ok=True)
        arrays: dict[str, np.ndarray] = {}
        pools: dict[str, list[str]] = {}
        for fname, data in self._fields.items():
            if data["type"] == "string":
                pools[fname] = data["pool"]
                arrays[f"{fname}::value_idx"] = data["value_idx"]
            else:
                arrays[f"{fname}::values"] = data["values"]
            arrays[f"{fname}::rec"] = data["rec"]
            arrays[f"{fname}::t0"] = data["t0"]
            arrays[f"{fname}::t1"] = data["t1"]
        np.savez(os.path.join(directory, POSTINGS_NAME), **arrays)
        manifest_dict = self.manifest.to_dict()
        manifest_dict["string_pools"] = pools
        with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
            json.dump(manifest_dict, fh)
        return self.manifest

    @classmethod
    def open(cls, directory: str) -> "ScenarioIndex":
        with open(os.path.join(directory, MANIFEST_NAME), "r", encoding="utf-8") as fh:
            manifest_dict = json.load(fh)
        manifest = IndexManifest.from_dict(manifest_dict)
        pools = manifest_dict.get("string_pools", {})
        with np.load(os.path.join(directory, POSTINGS_NAME)) as data:
            fields: dict[str, dict] = {}
            for fname, ftype in manifest.schema.items():
                entry: dict = {"type": ftype}
                if ftype == "string":
                    entry["pool"] = list(pools[fname])
                    entry["value_idx"] = data[f"{fname}::value_idx"]
                else:
                    entry["values"] = data[f"{fname}::values"]
                entry["rec"] = data[f"{fname}::rec"]
                entry["t0"] = data[f"{fname}::t0"]
                entry["t1"] = data[f"{fname}::t1"]
                if len(entry["rec"]) != manifest.counts.get(fname, -1):
                    raise ValueError(f"index corrupt: counts mismatch for field {fname!r}")
                fields[fname] = entry
        return cls(manifest, fields)

    @property
    def schema(self) -> dict[str, str]:
        return self.manifest.schema

    # -- atom resolution ----------------------------------------------------

    def _atom_rows(self, atom: Atom) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rec, t0, t1) arrays of records matching the atom, sorted by
        (rec, t0)."""
        data = self._fields.get(atom.field)
        if data is None:
            return np.empty(0, np.int32), np.empty(0), np.empty(0)
        if data["type"] == "string":
            if atom.op != "=":
                raise QueryError(f"operator {atom.op!r} needs a numeric field")
            pool = data["pool"]
            lo_i = np.searchsorted(pool, atom.value)
            if lo_i >= len(pool) or pool[lo_i] != atom.value:
                return np.empty(0, np.int32), np.empty(0), np.empty(0)
            vidx = data["value_idx"]
            lo = int(np.searchsorted(vidx, lo_i, side="left"))
            hi = int(np.searchsorted(vidx, lo_i, side="right"))
            return data["rec"][lo:hi], data["t0"][lo:hi], data["t1"][lo:hi]
        values = data["values"]
        v = float(atom.value)
        if atom.op == "=":
            lo, hi = np.searchsorted(values, [v, np.nextafter(v, math.inf)])
        elif atom.op == ">":
            lo, hi = int(np.searchsorted(values, v, side="right")), len(values)
        elif atom.op == ">=":
            lo, hi = int(np.searchsorted(values, v, side="left")), len(values)
        elif atom.op == "<":
            lo, hi = 0, int(np.searchsorted(values, v, side="left"))
        elif atom.op == "<=":
            lo, hi = 0, int(np.searchsorted(values, v, side="right"))
        else:
            raise QueryError(f"unknown operator {atom.op!r}")
        rec, t0, t1 = data["rec"][lo:hi], data["t0"][lo:hi], data["t1"][lo:hi]
        order = np.lexsort((t0, rec))
        return rec[order], t0[order], t1[order]

    def query(self, ast: QueryNode, overlap_slack: float = DEFAULT_OVERLAP_SLACK) -> list[ScenarioSegment]:
        return evaluate_query(self, ast, overlap_slack)


# -- interval algebra ------------------------------------------------------------


@dataclass
class _Intervals:
    starts: np.ndarray
    ends: np.ndarray
    fields: list[frozenset]


def _group_merge(iv: _Intervals, gap: float) -> _Intervals:
    """Merge intervals whose start is within `gap` of the running max end
    (gap=0 merges only overlapping/touching). Input sorted by start."""
    n = len(iv.starts)
    if n <= 1:
        return iv
    cummax = np.maximum.accumulate(iv.ends)
    new_group = np.empty(n, dtype=bool)
    new_group[0] = True
    new_group[1:] = iv.starts[1:] > cummax[:-1] + gap
    if new_group.all():
        return iv
    firsts = np.nonzero(new_group)[0]
    starts = iv.starts[firsts]
    ends = np.maximum.reduceat(iv.ends, firsts)
    fields: list[frozenset] = []
    bounds = list(firsts) + [n]
    for gi in range(len(firsts)):
        members = iv.fields[bounds[gi] : bounds[gi + 1]]
        fs = members[0]
        for other in members[1:]:
            if other is not fs:
                fs = fs | other
        fields.append(fs)
    return _Intervals(starts, ends, fields)


def _canonical(per_rec: dict[int, _Intervals], slack: float) -> dict[int, _Intervals]:
    return {rec: _group_merge(iv, slack) for rec, iv in per_rec.items()}


def _merge_overlapping(per_rec: dict[int, _Intervals]) -> dict[int, _Intervals]:
    return {rec: _group_merge(iv, 0.0) for rec, iv in per_rec.items()}


def _combine_and(a: _Intervals, b: _Intervals, slack: float) -> _Intervals | None:
    """Pairwise combination of two canonical interval lists."""
    out_s: list[float] = []
    out_e: list[float] = []
    out_f: list[frozenset] = []
    i = j = 0
    na, nb = len(a.starts), len(b.starts)
    while i < na and j < nb:
        a0, a1 = a.starts[i], a.ends[i]
        b0, b1 = b.starts[j], b.ends[j]
        lo = max(a0, b0)
        hi = min(a1, b1)
        if hi > lo:
            out_s.append(lo)
            out_e.append(hi)
            out_f.append(a.fields[i] | b.fields[j])
        elif 0.0 < lo - hi <= slack:
            out_s.append(hi)
            out_e.append(lo)
            out_f.append(a.fields[i] | b.fields[j])
        if a1 <= b1:
            i += 1
        else:
            j += 1
    if not out_s:
        return None
    order = np.argsort(np.asarray(out_s), kind="stable")
    return _Intervals(
        np.asarray(out_s)[order],
        np.asarray(out_e)[order],
        [out_f[k] for k in order],
    )


def _eval_node(index: ScenarioIndex, node: QueryNode, slack: float) -> dict[int, _Intervals]:
    if isinstance(node, Atom):
        rec, t0, t1 = index._atom_rows(node)
        per_rec: dict[int, _Intervals] = {}
        fs = frozenset([node.field])
        if len(rec):
            boundaries = np.nonzero(np.diff(rec))[0] + 1
            starts = np.concatenate([[0], boundaries])
            stops = np.concatenate([boundaries, [len(rec)]])
            for s, e in zip(starts, stops):
                iv = _Intervals(t0[s:e], t1[s:e], [fs] * (e - s))
                per_rec[int(rec[s])] = iv
        return _canonical(per_rec, slack)
    if isinstance(node, Or):
        merged: dict[int, list[_Intervals]] = {}
        for child in node.children:
            for rec_i, iv in _eval_node(index, child, slack).items():
                merged.setdefault(rec_i, []).append(iv)
        out: dict[int, _Intervals] = {}
        for rec_i, parts in merged.items():
            starts = np.concatenate([p.starts for p in parts])
            ends = np.concatenate([p.ends for p in parts])
            fields = [f for p in parts for f in p.fields]
            order = np.argsort(starts, kind="stable")
            out[rec_i] = _group_merge(
                _Intervals(starts[order], ends[order], [fields[k] for k in order]), 0.0
            )
        return out
    if isinstance(node, And):
        acc = _canonical(_eval_node(index, node.children[0], slack), slack)
        rest = node.children[1:]
        for step, child in enumerate(rest):
            operand = _canonical(_eval_node(index, child, slack), slack)
            combined: dict[int, _Intervals] = {}
            for rec_i in acc.keys() & operand.keys():
                piece = _combine_and(acc[rec_i], operand[rec_i], slack)
                if piece is not None:
                    combined[rec_i] = piece
            acc = _merge_overlapping(combined)
            if step < len(rest) - 1:
                # Intermediate folds feed the next combine as an operand,
                # which must be canonical; the final output stays merely
                # overlap-merged (keeps And(a,b) segments inside padded
                # eval(a) segments).
                acc = _canonical(acc, slack)
        return acc
    raise TypeError(f"unknown query node {type(node).__name__}")


def _typecheck(index: ScenarioIndex, node: QueryNode) -> None:
    if isinstance(node, Atom):
        ftype = index.schema.get(node.field, DEFAULT_FIELD_TYPES.get(node.field))
        if ftype is None:
            raise QueryError(f"unknown field {node.field!r}")
        if ftype == "number" and not isinstance(node.value, (int, float)):
            raise QueryError(f"field {node.field!r} is numeric, got {node.value!r}")
        if ftype == "string":
            if isinstance(node.value, (int, float)):
                raise QueryError(f"field {node.field!r} is string, got a number")
            if node.op != "=":
                raise QueryError(f"operator {node.op!r} needs a numeric field")
        return
    for child in node.children:
        _typecheck(index, child)


def evaluate_query(
    index: ScenarioIndex, ast: QueryNode, overlap_slack: float = DEFAULT_OVERLAP_SLACK
) -> list[ScenarioSegment]:
    """Evaluate an AST; output sorted by (recording_id, t_start) and equal,
    segment for segment, to a brute-force linear scan of the records."""
    _typecheck(index, ast)
    per_rec = _eval_node(index, ast, overlap_slack)
    segments: list[ScenarioSegment] = []
    for rec_i in sorted(per_rec, key=lambda r: index.recording_ids[r]):
        iv = per_rec[rec_i]
        rid = index.recording_ids[rec_i]
        for k in range(len(iv.starts)):
            segments.append(
                ScenarioSegment(
                    recording_id=rid,
                    t_start=float(iv.starts[k]),
                    t_end=float(iv.ends[k]),
                    matched_fields=tuple(sorted(iv.fields[k])),
                )
            )
    return segments


def build_index(
    tags: list[EventTag], odd_records: list[MetadataRecord], directory: str
) -> IndexManifest:
    """Lower tags, join ODD records, and persist the index. Returns the
    manifest; reopen with ScenarioIndex.open."""
    records = metadata_from_tags(tags) + list(odd_records)
    return ScenarioIndex.from_records(records).save(directory)


# -- latency probe -----------------------------------------------------------------


def latency_probe(
    index_sizes: list[int],
    queries: list[str],
    seed: int = 0,
    repeats: int = 3,
) -> list[tuple[int, float]]:
    """Mean query latency per index size over in-memory synthetic indexes.

    Used by the acceptance suite to check the near-linear scaling shape.
    """
    from .synthetic import generate_metadata_records

    if not queries:
        raise ValueError("no queries")
    samples: list[tuple[int, float]] = []
    for n in index_sizes:
        records = generate_metadata_records(int(n), seed=seed)
        index = ScenarioIndex.from_records(records)
        schema = dict(DEFAULT_FIELD_TYPES)
        schema.update(index.schema)
        asts = [parse_query(q, schema) for q in queries]
        for ast in asts:  # warmup
            evaluate_query(index, ast)
        t_begin = time.perf_counter()
        runs = 0
        for _ in range(repeats):
            for ast in asts:
                evaluate_query(index, ast)
                runs += 1
        samples.append((int(n), (time.perf_counter() - t_begin) / runs))
    return samples
