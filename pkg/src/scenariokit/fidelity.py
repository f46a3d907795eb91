"""Digital-twin fidelity metrics: IoU over box sets, Jaccard over occupancy
grids, F1 over label multisets, and MOTA for responsive actors.

Degenerate inputs follow one convention everywhere: both sides empty
scores 1.0, exactly one side empty scores 0.0.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from shapely.geometry import box as shapely_box
from shapely.ops import unary_union

Box = tuple[float, float, float, float]  # xmin, ymin, xmax, ymax


@dataclass(frozen=True)
class FidelityEntry:
    element: str
    metric: str  # "iou" | "jaccard" | "f1"
    value: float


@dataclass
class FidelityReport:
    entries: list[FidelityEntry]

    def value(self, element: str) -> float:
        for e in self.entries:
            if e.element == element:
                return e.value
        raise KeyError(element)

    def to_dict(self) -> dict:
        return {e.element: {"metric": e.metric, "value": e.value} for e in self.entries}


def iou_boxes(a: list[Box], b: list[Box]) -> float:
    """Area IoU of two axis-aligned box sets."""
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    ua = unary_union([shapely_box(*bb) for bb in a])
    ub = unary_union([shapely_box(*bb) for bb in b])
    union = ua.union(ub).area
    if union == 0.0:
        return 1.0
    return ua.intersection(ub).area / union


def jaccard_grids(a: np.ndarray, b: np.ndarray) -> float:
    """|a & b| / |a | b| over boolean occupancy grids."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")
    union = int(np.sum(a | b))
    if union == 0:
        return 1.0
    return int(np.sum(a & b)) / union


def f1_labels(truth: list[str], predicted: list[str]) -> float:
    """Multiset F1 over categorical labels (e.g. weather classes)."""
    ct, cp = Counter(truth), Counter(predicted)
    if not ct and not cp:
        return 1.0
    tp = sum(min(ct[k], cp[k]) for k in ct.keys() & cp.keys())
    fp = sum(cp.values()) - tp
    fn = sum(ct.values()) - tp
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


# Geometry payload per element class: ("boxes", [Box]), ("grid", bool
# ndarray) or ("labels", [str]).
_METRIC_BY_KIND = {"boxes": "iou", "grid": "jaccard", "labels": "f1"}


def fidelity_static(twin: dict[str, tuple[str, object]], truth: dict[str, tuple[str, object]]) -> FidelityReport:
    """Per-element static fidelity; the payload kind picks the metric."""
    entries = []
    for element in sorted(set(twin) | set(truth)):
        kind_a, data_a = twin.get(element, (None, None))
        kind_b, data_b = truth.get(element, (None, None))
        kind = kind_a or kind_b
        if kind_a and kind_b and kind_a != kind_b:
            raise ValueError(f"element {element!r}: mismatched geometry kinds {kind_a}/{kind_b}")
        if kind == "boxes":
            value = iou_boxes(data_a or [], data_b or [])
        elif kind == "grid":
            if data_a is None or data_b is None:
                value = 0.0
            else:
                value = jaccard_grids(data_a, data_b)
        elif kind == "labels":
            value = f1_labels(list(data_b or []), list(data_a or []))
        else:
            raise ValueError(f"element {element!r}: unknown geometry kind {kind!r}")
        entries.append(FidelityEntry(element, _METRIC_BY_KIND[kind], value))
    return FidelityReport(entries)


# -- tracking -------------------------------------------------------------------


@dataclass(frozen=True)
class MotaResult:
    mota: float
    gt: int
    fn: int
    fp: int
    idsw: int


def fidelity_tracking(
    twin_tracks: dict[str, list[tuple[float, float, float]]],
    truth_tracks: dict[str, list[tuple[float, float, float]]],
    dist_max: float = 2.0,
) -> MotaResult:
    """MOTA = 1 - (FN + FP + IDSW) / GT with per-frame greedy nearest
    matching under dist_max. Tracks are {id: [(t, x, y), ...]} on a shared
    time base."""
    frames: dict[float, tuple[dict, dict]] = {}
    for tid, pts in truth_tracks.items():
        for t, x, y in pts:
            frames.setdefault(round(t, 9), ({}, {}))[0][tid] = (x, y)
    for tid, pts in twin_tracks.items():
        for t, x, y in pts:
            frames.setdefault(round(t, 9), ({}, {}))[1][tid] = (x, y)

    gt = fn = fp = idsw = 0
    last_match: dict[str, str] = {}
    for t in sorted(frames):
        truth_at, twin_at = frames[t]
        gt += len(truth_at)
        pairs = sorted(
            (
                (math.hypot(ax - bx, ay - by), tid, pid)
                for tid, (ax, ay) in truth_at.items()
                for pid, (bx, by) in twin_at.items()
            ),
        )
        used_t: set[str] = set()
        used_p: set[str] = set()
        matches = []
        for dist, tid, pid in pairs:
            if dist > dist_max:
                break
            if tid in used_t or pid in used_p:
                continue
            used_t.add(tid)
            used_p.add(pid)
            matches.append((tid, pid))
        fn += len(truth_at) - len(matches)
        fp += len(twin_at) - len(matches)
        for tid, pid in matches:
            if tid in last_match and last_match[tid] != pid:
                idsw += 1
            last_match[tid] = pid
    if gt == 0:
        raise ValueError("no ground-truth objects (GT = 0)")
    return MotaResult(mota=1.0 - (fn + fp + idsw) / gt, gt=gt, fn=fn, fp=fp, idsw=idsw)
