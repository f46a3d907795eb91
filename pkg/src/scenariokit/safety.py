"""Interaction safety scoring: closest-approach time-to-collision under
constant-velocity extrapolation with circular footprints (half-diagonal
radii), per-scene safe/unsafe classification and scenario-level
aggregation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations

from .recording import ActorState, Frame

DEFAULT_TTC_THRESHOLD = 1.5  # s, below is unsafe
DEFAULT_UNSAFE_FRACTION_MAX = 0.1
DEFAULT_TTC_FLOOR = 0.5  # s, any dip below fails the scenario


def half_diagonal(state: ActorState) -> float:
    return math.hypot(state.length, state.width) / 2.0


def compute_ttc(state_a: ActorState, state_b: ActorState, radius_sum: float) -> float:
    """Smallest t >= 0 with |dp + t dv| = radius_sum; math.inf when the
    footprints never meet. Already-overlapping states give 0."""
    if not radius_sum > 0:
        raise ValueError("radius_sum must be > 0")
    dx = state_b.x - state_a.x
    dy = state_b.y - state_a.y
    dvx = state_b.speed * math.cos(state_b.heading) - state_a.speed * math.cos(state_a.heading)
    dvy = state_b.speed * math.sin(state_b.heading) - state_a.speed * math.sin(state_a.heading)
    c = dx * dx + dy * dy - radius_sum * radius_sum
    if c <= 0:
        return 0.0
    a = dvx * dvx + dvy * dvy
    b = 2.0 * (dx * dvx + dy * dvy)
    if a == 0.0:
        return math.inf
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return math.inf
    sqrt_disc = math.sqrt(disc)
    t1 = (-b - sqrt_disc) / (2.0 * a)
    t2 = (-b + sqrt_disc) / (2.0 * a)
    if t1 >= 0:
        return t1
    if t2 >= 0:
        return t2
    return math.inf


@dataclass(frozen=True)
class InteractionScore:
    t: float
    actor_a: str
    actor_b: str
    ttc: float  # seconds, may be math.inf
    label: str  # "safe" | "unsafe"

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "actor_a": self.actor_a,
            "actor_b": self.actor_b,
            "ttc": None if math.isinf(self.ttc) else self.ttc,
            "label": self.label,
        }


def classify_scene(
    frame: Frame,
    ttc_threshold: float = DEFAULT_TTC_THRESHOLD,
    pair_scope: str = "ego-vs-all",
) -> list[InteractionScore]:
    """Score every in-scope actor pair of one frame; unsafe iff
    ttc < ttc_threshold."""
    if pair_scope not in ("ego-vs-all", "all-pairs"):
        raise ValueError(f"unknown pair_scope {pair_scope!r}")
    actors = sorted(frame.actors, key=lambda a: (not a.is_ego, a.actor_id))
    if pair_scope == "ego-vs-all":
        ego = next((a for a in actors if a.is_ego), None)
        if ego is None:
            raise ValueError("frame has no ego actor")
        pairs = [(ego, other) for other in actors if other is not ego]
    else:
        pairs = list(combinations(actors, 2))
    scores = []
    for a, b in pairs:
        ttc = compute_ttc(a, b, half_diagonal(a) + half_diagonal(b))
        scores.append(
            InteractionScore(
                t=frame.t,
                actor_a=a.actor_id,
                actor_b=b.actor_id,
                ttc=ttc,
                label="unsafe" if ttc < ttc_threshold else "safe",
            )
        )
    return scores


@dataclass(frozen=True)
class PairSafety:
    actor_a: str
    actor_b: str
    min_ttc: float
    unsafe_fraction: float
    n_scores: int


@dataclass
class ScenarioSafetyReport:
    pairs: list[PairSafety]
    verdict: str  # "pass" | "fail"
    ttc_threshold: float
    unsafe_fraction_max: float
    ttc_floor: float
    scores: list[InteractionScore] = field(default_factory=list)

    def pair(self, actor_a: str, actor_b: str) -> PairSafety:
        key = tuple(sorted((actor_a, actor_b)))
        for p in self.pairs:
            if tuple(sorted((p.actor_a, p.actor_b))) == key:
                return p
        raise KeyError(key)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "ttc_threshold": self.ttc_threshold,
            "unsafe_fraction_max": self.unsafe_fraction_max,
            "ttc_floor": self.ttc_floor,
            "pairs": [
                {
                    "actor_a": p.actor_a,
                    "actor_b": p.actor_b,
                    "min_ttc": None if math.isinf(p.min_ttc) else p.min_ttc,
                    "unsafe_fraction": p.unsafe_fraction,
                    "n_scores": p.n_scores,
                }
                for p in self.pairs
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def scores_to_csv(scores: list[InteractionScore]) -> str:
    lines = ["t,actor_a,actor_b,ttc,label"]
    for s in scores:
        ttc = "" if math.isinf(s.ttc) else repr(s.ttc)
        lines.append(f"{s.t!r},{s.actor_a},{s.actor_b},{ttc},{s.label}")
    return "\n".join(lines) + "\n"


def aggregate_safety(
    scores: list[InteractionScore],
    unsafe_fraction_max: float = DEFAULT_UNSAFE_FRACTION_MAX,
    ttc_floor: float = DEFAULT_TTC_FLOOR,
    ttc_threshold: float = DEFAULT_TTC_THRESHOLD,
) -> ScenarioSafetyReport:
    """Fold per-scene scores into per-pair minima/fractions and a verdict:
    fail iff any pair's unsafe fraction exceeds the cap or its minimum TTC
    dips below the floor."""
    if not scores:
        raise ValueError("empty score series")
    grouped: dict[tuple[str, str], list[InteractionScore]] = {}
    for s in scores:
        grouped.setdefault(tuple(sorted((s.actor_a, s.actor_b))), []).append(s)
    pairs = []
    verdict = "pass"
    for (a, b), entries in sorted(grouped.items()):
        min_ttc = min(e.ttc for e in entries)
        unsafe_fraction = sum(1 for e in entries if e.label == "unsafe") / len(entries)
        if unsafe_fraction > unsafe_fraction_max or min_ttc < ttc_floor:
            verdict = "fail"
        pairs.append(
            PairSafety(
                actor_a=a,
                actor_b=b,
                min_ttc=min_ttc,
                unsafe_fraction=unsafe_fraction,
                n_scores=len(entries),
            )
        )
    return ScenarioSafetyReport(
        pairs=pairs,
        verdict=verdict,
        ttc_threshold=ttc_threshold,
        unsafe_fraction_max=unsafe_fraction_max,
        ttc_floor=ttc_floor,
        scores=scores,
    )
