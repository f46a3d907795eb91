"""Object-list recording model, JSON-Lines parser and batch ingestion.

A recording file is JSON Lines: an optional header line
``{"recording_id": ..., "meta": {...}}`` followed by one frame per line,

    {"t": 0.1, "actors": [{"id": "ego", "class": "car", "x": 0.0, "y": 0.0,
                           "heading": 0.0, "speed": 8.0, "length": 4.5,
                           "width": 1.8, "ego": true}, ...]}

Defaults: class "car"; length/width from the class defaults table; ego
false; heading and speed, when absent, are derived by finite differences
of position. Speeds may be strings with a unit suffix ("50mph"); all
stored values are SI.

Recordings are stored column-wise (flat numpy arrays, one row per actor
observation) so that parsing large files produces compact objects that
move cheaply between worker processes. `Frame`/`ActorState` views are
materialized on demand.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .units import UnknownUnitError, parse_speed

TWO_PI = 2.0 * math.pi

# A gap larger than this multiple of the median inter-frame gap splits the
# file into separate recordings (dropout handling).
GAP_SPLIT_FACTOR = 10.0


class ActorClass(Enum):
    CAR = "car"
    TRUCK = "truck"
    BICYCLE = "bicycle"
    PEDESTRIAN = "pedestrian"
    OTHER = "other"


# (length, width) in meters used when the input omits dimensions.
DEFAULT_DIMENSIONS: dict[ActorClass, tuple[float, float]] = {
    ActorClass.CAR: (4.5, 1.8),
    ActorClass.TRUCK: (12.0, 2.5),
    ActorClass.BICYCLE: (1.8, 0.6),
    ActorClass.PEDESTRIAN: (0.5, 0.5),
    ActorClass.OTHER: (1.0, 1.0),
}

_CLASS_BY_VALUE = {c.value: c for c in ActorClass}


class RecordingError(ValueError):
    """A recording file violates the documented format or an invariant.

    `path` and `line` (1-based) locate the offending input when known.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}:"
            if line is not None:
                loc += f"{line}:"
            loc += " "
        super().__init__(f"{loc}{message}")


def normalize_angle(a: float | np.ndarray) -> float | np.ndarray:
    """Wrap angle(s) into [-pi, pi)."""
    return (a + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class ActorState:
    """One actor's state in one frame (SI units, map frame)."""

    actor_id: str
    actor_class: ActorClass
    x: float
    y: float
    heading: float  # rad in [-pi, pi), counterclockwise positive
    speed: float  # m/s
    length: float
    width: float
    is_ego: bool


@dataclass(frozen=True)
class Frame:
    t: float
    actors: tuple[ActorState, ...]


@dataclass(frozen=True)
class ActorTrack:
    """Column view of a single actor across the frames it appears in."""

    actor_id: str
    actor_class: ActorClass
    frame_idx: np.ndarray  # indices into the recording's frame list
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    length: float
    width: float
    is_ego: bool


@dataclass
class Recording:
    """Time-ordered object-list states of all actors in one drive.

    `times` has one entry per frame; rows [offsets[i], offsets[i+1]) of the
    flat per-observation arrays belong to frame i. `id_pool` interns actor
    ids; `ego_row` gives the row of the (unique) ego observation per frame.
    """

    recording_id: str
    times: np.ndarray  # (F,) float64, strictly increasing
    offsets: np.ndarray  # (F+1,) int64 row ranges
    id_idx: np.ndarray  # (R,) int32 into id_pool
    class_idx: np.ndarray  # (R,) int8 into ActorClass order
    cols: np.ndarray  # (R, 6) float64: x, y, heading, speed, length, width
    ego_row: np.ndarray  # (F,) int64
    id_pool: list[str]
    source_meta: dict = field(default_factory=dict)

    _CLASS_ORDER = list(ActorClass)

    # -- derived ---------------------------------------------------------

    @property
    def n_frames(self) -> int:
        return len(self.times)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def sample_rate_hz(self) -> float:
        """1 / median inter-frame gap; 0.0 for single-frame recordings."""
        if len(self.times) < 2:
            return 0.0
        return 1.0 / float(np.median(np.diff(self.times)))

    def actor_ids(self) -> list[str]:
        return list(self.id_pool)

    # -- row/frame access --------------------------------------------------

    def _state_from_row(self, row: int) -> ActorState:
        x, y, heading, speed, length, width = self.cols[row]
        return ActorState(
            actor_id=self.id_pool[self.id_idx[row]],
            actor_class=self._CLASS_ORDER[self.class_idx[row]],
            x=float(x),
            y=float(y),
            heading=float(heading),
            speed=float(speed),
            length=float(length),
            width=float(width),
            is_ego=bool(row == self.ego_row[self._frame_of_row(row)]),
        )

    def _frame_of_row(self, row: int) -> int:
        return int(np.searchsorted(self.offsets, row, side="right")) - 1

    def frame(self, i: int) -> Frame:
        lo, hi = int(self.offsets[i]), int(self.offsets[i + 1])
        ego = int(self.ego_row[i])
        actors = []
        for row in range(lo, hi):
            x, y, heading, speed, length, width = self.cols[row]
            actors.append(
                ActorState(
                    actor_id=self.id_pool[self.id_idx[row]],
                    actor_class=self._CLASS_ORDER[self.class_idx[row]],
                    x=float(x),
                    y=float(y),
                    heading=float(heading),
                    speed=float(speed),
                    length=float(length),
                    width=float(width),
                    is_ego=row == ego,
                )
            )
        return Frame(t=float(self.times[i]), actors=tuple(actors))

    @property
    def frames(self) -> list[Frame]:
        """Materialized frame list. O(rows); prefer the columnar accessors
        in hot paths."""
        return [self.frame(i) for i in range(self.n_frames)]

    def track(self, actor_id: str) -> ActorTrack:
        """All observations of one actor, column-wise."""
        try:
            want = self.id_pool.index(actor_id)
        except ValueError:
            raise KeyError(f"actor {actor_id!r} not in recording {self.recording_id!r}") from None
        rows = np.nonzero(self.id_idx == want)[0]
        frame_idx = np.searchsorted(self.offsets, rows, side="right") - 1
        c = self.cols[rows]
        ego = bool(len(rows)) and bool(np.all(self.ego_row[frame_idx] == rows))
        return ActorTrack(
            actor_id=actor_id,
            actor_class=self._CLASS_ORDER[self.class_idx[rows[0]]] if len(rows) else ActorClass.OTHER,
            frame_idx=frame_idx,
            times=self.times[frame_idx],
            x=c[:, 0],
            y=c[:, 1],
            heading=c[:, 2],
            speed=c[:, 3],
            length=float(np.median(c[:, 4])) if len(rows) else 0.0,
            width=float(np.median(c[:, 5])) if len(rows) else 0.0,
            is_ego=ego,
        )

    def ego_track(self) -> ActorTrack:
        """Per-frame ego states (the ego is present in every frame)."""
        rows = self.ego_row
        c = self.cols[rows]
        return ActorTrack(
            actor_id=self.id_pool[self.id_idx[rows[0]]],
            actor_class=self._CLASS_ORDER[self.class_idx[rows[0]]],
            frame_idx=np.arange(self.n_frames),
            times=self.times,
            x=c[:, 0],
            y=c[:, 1],
            heading=c[:, 2],
            speed=c[:, 3],
            length=float(np.median(c[:, 4])),
            width=float(np.median(c[:, 5])),
            is_ego=True,
        )

    def frame_range(self, t_start: float, t_end: float) -> tuple[int, int]:
        """Half-open frame index range [i, j) with t_start <= t <= t_end."""
        i = int(np.searchsorted(self.times, t_start, side="left"))
        j = int(np.searchsorted(self.times, t_end, side="right"))
        return i, j

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        """Check the type invariants; raises RecordingError on violation."""
        if self.n_frames == 0:
            raise RecordingError("recording has no frames")
        if np.any(np.diff(self.times) <= 0):
            raise RecordingError("frame times not strictly increasing")
        if not np.all(np.isfinite(self.cols)):
            raise RecordingError("non-finite actor state value")
        if np.any(self.cols[:, 3] < 0):
            raise RecordingError("negative speed")
        if np.any(self.cols[:, 4:6] <= 0):
            raise RecordingError("non-positive actor dimensions")
        for i in range(self.n_frames):
            lo, hi = int(self.offsets[i]), int(self.offsets[i + 1])
            if not lo <= self.ego_row[i] < hi:
                raise RecordingError("missing ego")
            ids = self.id_idx[lo:hi]
            if len(np.unique(ids)) != len(ids):
                raise RecordingError("duplicate actor")


@dataclass(frozen=True)
class IngestRejection:
    path: str
    reason: str


@dataclass
class IngestReport:
    """Outcome and throughput of one ingest_batch run."""

    bytes_ingested: int
    wall_time: float
    throughput: float  # bytes / second
    recordings_ok: int
    recordings_rejected: int
    rejections: list[IngestRejection] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bytes_ingested": self.bytes_ingested,
            "wall_time": self.wall_time,
            "throughput": self.throughput,
            "recordings_ok": self.recordings_ok,
            "recordings_rejected": self.recordings_rejected,
            "rejections": [{"path": r.path, "reason": r.reason} for r in self.rejections],
        }


# -- parsing ---------------------------------------------------------------


def _derive_missing_kinematics(
    times: np.ndarray,
    offsets: np.ndarray,
    id_idx: np.ndarray,
    cols: np.ndarray,
) -> None:
    """Fill NaN heading/speed entries by finite differences of position,
    per actor. Single-observation actors fall back to 0."""
    heading = cols[:, 2]
    speed = cols[:, 3]
    need = np.isnan(heading) | np.isnan(speed)
    if not np.any(need):
        return
    row_frame = np.searchsorted(offsets, np.arange(len(id_idx)), side="right") - 1
    for actor in np.unique(id_idx[need]):
        rows = np.nonzero(id_idx == actor)[0]
        t = times[row_frame[rows]]
        x = cols[rows, 0]
        y = cols[rows, 1]
        if len(rows) >= 2:
            dx = np.diff(x)
            dy = np.diff(y)
            dt = np.diff(t)
            step = np.hypot(dx, dy)
            v = step / dt
            v = np.append(v, v[-1])
            hd = np.arctan2(dy, dx)
            # Stationary steps carry no direction; reuse the previous one.
            good = step > 1e-9
            if np.any(good):
                filled = hd[np.maximum.accumulate(np.where(good, np.arange(len(hd)), -1))]
                first_good = hd[np.argmax(good)]
                filled = np.where(np.arange(len(hd)) < np.argmax(good), first_good, filled)
                hd = filled
            else:
                hd = np.zeros_like(hd)
            hd = np.append(hd, hd[-1])
        else:
            v = np.zeros(len(rows))
            hd = np.zeros(len(rows))
        h_mask = np.isnan(heading[rows])
        s_mask = np.isnan(speed[rows])
        heading[rows] = np.where(h_mask, normalize_angle(hd), heading[rows])
        speed[rows] = np.where(s_mask, v, speed[rows])


def _parse_lines(lines, path: str) -> tuple[str, dict, list[float], list[list]]:
    """First pass: JSON-decode and per-line validation.

    Returns (recording_id, meta, frame_times, frame_actor_dicts).
    """
    recording_id = os.path.splitext(os.path.basename(path))[0] if path else "recording"
    meta: dict = {}
    frame_times: list[float] = []
    frame_actors: list[list] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise RecordingError(f"malformed line: {e.msg}", path, lineno) from None
        if not isinstance(obj, dict):
            raise RecordingError("malformed line: expected a JSON object", path, lineno)
        if "t" not in obj:
            if lineno == 1 and ("recording_id" in obj or "meta" in obj):
                recording_id = str(obj.get("recording_id", recording_id))
                raw_meta = obj.get("meta", {})
                if not isinstance(raw_meta, dict):
                    raise RecordingError("malformed line: meta must be an object", path, lineno)
                meta = raw_meta
                continue
            raise RecordingError("malformed line: missing \"t\"", path, lineno)
        t = obj["t"]
        if not isinstance(t, (int, float)) or isinstance(t, bool) or not math.isfinite(t):
            raise RecordingError("malformed line: t must be a finite number", path, lineno)
        actors = obj.get("actors")
        if not isinstance(actors, list):
            raise RecordingError("malformed line: missing \"actors\" list", path, lineno)
        if frame_times and t <= frame_times[-1]:
            raise RecordingError("non-monotone time", path, lineno)
        frame_times.append(float(t))
        frame_actors.append((lineno, actors))
    if not frame_times:
        raise RecordingError("no frames", path)
    return recording_id, meta, frame_times, frame_actors


def _assemble_segments(
    recording_id: str,
    meta: dict,
    frame_times: list[float],
    frame_actors: list[list],
    path: str,
) -> list[Recording]:
    """Second pass: flatten actors into columns, split on large gaps,
    derive missing kinematics, validate."""
    pool_index: dict[str, int] = {}
    id_pool: list[str] = []
    times = np.asarray(frame_times)

    n_frames = len(frame_times)
    offsets = np.zeros(n_frames + 1, dtype=np.int64)
    id_rows: list[int] = []
    class_rows: list[int] = []
    col_rows: list[tuple] = []
    ego_row = np.full(n_frames, -1, dtype=np.int64)

    class_order_index = {c: i for i, c in enumerate(ActorClass)}
    row = 0
    for fi, (lineno, actors) in enumerate(frame_actors):
        seen: set[int] = set()
        for a in actors:
            if not isinstance(a, dict):
                raise RecordingError("malformed line: actor must be an object", path, lineno)
            try:
                aid = a["id"]
                x = float(a["x"])
                y = float(a["y"])
            except (KeyError, TypeError, ValueError) as e:
                raise RecordingError(f"malformed line: bad actor entry ({e})", path, lineno) from None
            if not isinstance(aid, str):
                aid = str(aid)
            cls_name = a.get("class", "car")
            cls = _CLASS_BY_VALUE.get(cls_name)
            if cls is None:
                raise RecordingError(f"unknown actor class {cls_name!r}", path, lineno)
            idx = pool_index.get(aid)
            if idx is None:
                idx = pool_index[aid] = len(id_pool)
                id_pool.append(aid)
            if idx in seen:
                raise RecordingError(f"duplicate actor {aid!r}", path, lineno)
            seen.add(idx)
            heading = a.get("heading")
            heading = float(heading) if heading is not None else math.nan
            raw_speed = a.get("speed")
            if raw_speed is None:
                speed = math.nan
            else:
                try:
                    speed = parse_speed(raw_speed)
                except UnknownUnitError as e:
                    raise RecordingError(str(e), path, lineno) from None
                except ValueError as e:
                    raise RecordingError(f"malformed line: {e}", path, lineno) from None
            default_l, default_w = DEFAULT_DIMENSIONS[cls]
            length = float(a.get("length", default_l))
            width = float(a.get("width", default_w))
            if not (math.isfinite(x) and math.isfinite(y)):
                raise RecordingError("non-finite position", path, lineno)
            if length <= 0 or width <= 0:
                raise RecordingError("non-positive actor dimensions", path, lineno)
            if not math.isnan(speed) and speed < 0:
                raise RecordingError("negative speed", path, lineno)
            if a.get("ego", False):
                if ego_row[fi] != -1:
                    raise RecordingError("multiple ego actors", path, lineno)
                ego_row[fi] = row
            id_rows.append(idx)
            class_rows.append(class_order_index[cls])
            col_rows.append((x, y, heading, speed, length, width))
            row += 1
        if ego_row[fi] == -1:
            raise RecordingError("missing ego", path, lineno)
        offsets[fi + 1] = row

    id_idx = np.asarray(id_rows, dtype=np.int32)
    class_idx = np.asarray(class_rows, dtype=np.int8)
    cols = np.asarray(col_rows, dtype=np.float64).reshape(len(col_rows), 6)
    cols[:, 2] = np.where(np.isnan(cols[:, 2]), np.nan, normalize_angle(cols[:, 2]))

    # Split at dropouts before deriving kinematics so the derivatives never
    # straddle a gap.
    if n_frames >= 2:
        gaps = np.diff(times)
        median_gap = float(np.median(gaps))
        cut_after = np.nonzero(gaps > GAP_SPLIT_FACTOR * median_gap)[0]
    else:
        cut_after = np.array([], dtype=np.int64)

    bounds = [0, *(int(i) + 1 for i in cut_after), n_frames]
    segments: list[Recording] = []
    multi = len(bounds) > 2
    for si in range(len(bounds) - 1):
        f0, f1 = bounds[si], bounds[si + 1]
        r0, r1 = int(offsets[f0]), int(offsets[f1])
        seg_id = f"{recording_id}#{si}" if multi else recording_id
        seg_ids = id_idx[r0:r1]
        # Re-intern the pool so segments stay self-contained.
        used = np.unique(seg_ids)
        remap = np.zeros(len(id_pool), dtype=np.int32)
        remap[used] = np.arange(len(used), dtype=np.int32)
        seg = Recording(
            recording_id=seg_id,
            times=times[f0:f1].copy(),
            offsets=(offsets[f0 : f1 + 1] - r0).copy(),
            id_idx=remap[seg_ids],
            class_idx=class_idx[r0:r1].copy(),
            cols=cols[r0:r1].copy(),
            ego_row=(ego_row[f0:f1] - r0).copy(),
            id_pool=[id_pool[int(u)] for u in used],
            source_meta=dict(meta),
        )
        _derive_missing_kinematics(seg.times, seg.offsets, seg.id_idx, seg.cols)
        seg.cols[:, 2] = normalize_angle(seg.cols[:, 2])
        seg.validate()
        segments.append(seg)
    return segments


def parse_recording_segments(path: str) -> list[Recording]:
    """Parse a JSON-Lines recording file.

    Gaps larger than 10x the median inter-frame gap split the file into
    several recordings (ids suffixed "#0", "#1", ...).
    """
    with open(path, "r", encoding="utf-8") as fh:
        recording_id, meta, frame_times, frame_actors = _parse_lines(fh, path)
    return _assemble_segments(recording_id, meta, frame_times, frame_actors, path)


def parse_recording(path: str) -> Recording:
    """Parse a file that is expected to hold one contiguous recording.

    Raises RecordingError if the dropout rule splits the file; callers that
    can handle splits should use parse_recording_segments.
    """
    segments = parse_recording_segments(path)
    if len(segments) != 1:
        raise RecordingError(
            f"file splits into {len(segments)} recordings at dropout gaps", path
        )
    return segments[0]


def parse_recording_text(text: str, path: str = "<memory>") -> list[Recording]:
    """parse_recording_segments over an in-memory JSONL string."""
    recording_id, meta, frame_times, frame_actors = _parse_lines(text.splitlines(), path)
    return _assemble_segments(recording_id, meta, frame_times, frame_actors, path)


# -- batch ingestion ---------------------------------------------------------


def _parse_one(path: str):
    """Worker body: returns (segments, None) or (None, reason)."""
    try:
        return parse_recording_segments(path), None
    except RecordingError as e:
        return None, str(e)
    except OSError as e:
        return None, f"{path}: {e.strerror or e}"


def ingest_batch(paths: list[str], workers: int = 1) -> tuple[list[Recording], IngestReport]:
    """Parse many files, optionally across worker processes.

    Per-file failures are collected in the report, never raised. The result
    list is ordered by input path (then segment) and is identical for every
    `workers` value.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    t0 = time.perf_counter()
    bytes_total = 0
    for p in paths:
        try:
            bytes_total += os.path.getsize(p)
        except OSError:
            pass

    if workers == 1 or len(paths) <= 1:
        outcomes = [_parse_one(p) for p in paths]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_parse_one, paths, chunksize=1))

    recordings: list[Recording] = []
    rejections: list[IngestRejection] = []
    for path, (segments, reason) in zip(paths, outcomes):
        if segments is None:
            rejections.append(IngestRejection(path=path, reason=reason))
        else:
            recordings.extend(segments)
    wall = time.perf_counter() - t0
    report = IngestReport(
        bytes_ingested=bytes_total,
        wall_time=wall,
        throughput=bytes_total / wall if wall > 0 else 0.0,
        recordings_ok=len(recordings),
        recordings_rejected=len(rejections),
        rejections=rejections,
    )
    return recordings, report


def throughput_curve(
    corpus_sizes: list[int],
    workers: int = 1,
    base_dir: str | None = None,
    seed: int = 0,
) -> list[tuple[int, float]]:
    """Measure ingest throughput over synthetic corpora of the given sizes.

    Returns one (actual_bytes, bytes_per_second) sample per requested size.
    """
    import tempfile

    from .synthetic import generate_jsonl_corpus

    samples: list[tuple[int, float]] = []
    for i, size in enumerate(corpus_sizes):
        with tempfile.TemporaryDirectory(dir=base_dir) as tmp:
            files = generate_jsonl_corpus(tmp, total_bytes=size, seed=seed + i)
            _, report = ingest_batch(files, workers=workers)
            if report.recordings_rejected:
                raise RuntimeError(f"synthetic corpus failed to parse: {report.rejections[0].reason}")
            samples.append((report.bytes_ingested, report.throughput))
    return samples
