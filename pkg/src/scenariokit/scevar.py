"""Scenario variations: parameter extraction from turn tags, statistically
normal turning trajectories, logical scenarios (distributions instead of
fixed values), concrete variation sampling, and parameter-space coverage.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    HistogramDistribution,
    JointDistribution,
    KdeDistribution,
    UnivariateDistribution,
)
from .real2sim import ScenarioDocument, substitute_parameters
from .recording import Recording
from .tagging import EventKind, EventTag

TRAJECTORY_POINTS = 50
KDE_EXPORT_BINS = 20


@dataclass(frozen=True)
class TurnParameters:
    turning_speed: float  # m/s, mean over the turn window
    turning_angle: float  # rad, signed net heading change (left positive)
    turning_radius: float  # m, minimum over the window
    recording_id: str
    actor_id: str
    t_start: float
    t_end: float

    def value(self, name: str) -> float:
        try:
            return getattr(self, name)
        except AttributeError:
            raise KeyError(name) from None


TURN_PARAMETER_NAMES = ("turning_speed", "turning_angle", "turning_radius")


def extract_turn_parameters(recordings: list[Recording], tags: list[EventTag]) -> list[TurnParameters]:
    """One TurnParameters per turn tag, read from the tag attributes."""
    known = {r.recording_id for r in recordings} if recordings else None
    out = []
    for tag in tags:
        if tag.kind not in (EventKind.TURN_LEFT, EventKind.TURN_RIGHT):
            continue
        attrs = tag.attributes
        missing = [k for k in ("mean_speed", "net_heading_change", "min_turn_radius") if k not in attrs]
        if missing:
            raise ValueError(f"turn tag missing attributes {missing} ({tag.recording_id})")
        if known is not None and tag.recording_id not in known:
            raise ValueError(f"tag references unknown recording {tag.recording_id!r}")
        out.append(
            TurnParameters(
                turning_speed=float(attrs["mean_speed"]),
                turning_angle=float(attrs["net_heading_change"]),
                turning_radius=float(attrs["min_turn_radius"]),
                recording_id=tag.recording_id,
                actor_id=tag.actor_id,
                t_start=tag.t_start,
                t_end=tag.t_end,
            )
        )
    return out


# -- statistically normal turning trajectories --------------------------------------


@dataclass
class TurnTrajectoryModel:
    direction: str  # "left" | "right"
    angle_lo: float  # rad, |net angle| bucket bounds
    angle_hi: float
    mean_path: np.ndarray  # (TRAJECTORY_POINTS, 2), entry at origin heading +x
    band: np.ndarray  # (TRAJECTORY_POINTS,) pointwise RMS deviation
    count: int


DEFAULT_ANGLE_BUCKETS = tuple(
    (math.radians(lo), math.radians(hi)) for lo, hi in ((45, 75), (75, 105), (105, 135), (135, 180.001))
)


def _normalized_turn_path(rec: Recording, tag: EventTag) -> np.ndarray | None:
    track = rec.track(tag.actor_id)
    mask = (track.times >= tag.t_start - 1e-9) & (track.times <= tag.t_end + 1e-9)
    if int(mask.sum()) < 3:
        return None
    x = track.x[mask]
    y = track.y[mask]
    # Entry direction from the first ~0.5 s of motion (rotation-equivariant).
    t = track.times[mask]
    k = int(np.searchsorted(t, t[0] + 0.5))
    k = max(k, 1)
    k = min(k, len(x) - 1)
    entry = math.atan2(float(y[k] - y[0]), float(x[k] - x[0]))
    c, s = math.cos(-entry), math.sin(-entry)
    px = c * (x - x[0]) - s * (y - y[0])
    py = s * (x - x[0]) + c * (y - y[0])
    # Arc-length resample to a fixed number of stations.
    step = np.hypot(np.diff(px), np.diff(py))
    arc = np.concatenate([[0.0], np.cumsum(step)])
    if arc[-1] <= 0:
        return None
    stations = np.linspace(0.0, arc[-1], TRAJECTORY_POINTS)
    return np.column_stack([np.interp(stations, arc, px), np.interp(stations, arc, py)])


def learn_turn_trajectories(
    recordings: list[Recording],
    tags: list[EventTag],
    angle_buckets: tuple[tuple[float, float], ...] = DEFAULT_ANGLE_BUCKETS,
    min_per_bucket: int = 3,
) -> list[TurnTrajectoryModel]:
    """Bucket turns by (direction, |net angle|) and average their
    normalized paths; under-populated buckets are skipped with a warning."""
    by_id = {r.recording_id: r for r in recordings}
    buckets: dict[tuple[str, int], list[np.ndarray]] = {}
    for tag in tags:
        if tag.kind not in (EventKind.TURN_LEFT, EventKind.TURN_RIGHT):
            continue
        rec = by_id.get(tag.recording_id)
        if rec is None:
            continue
        angle = abs(float(tag.attributes.get("net_heading_change", 0.0)))
        bucket = next((i for i, (lo, hi) in enumerate(angle_buckets) if lo <= angle < hi), None)
        if bucket is None:
            continue
        path = _normalized_turn_path(rec, tag)
        if path is None:
            continue
        direction = "left" if tag.kind is EventKind.TURN_LEFT else "right"
        buckets.setdefault((direction, bucket), []).append(path)

    models = []
    for (direction, bucket), paths in sorted(buckets.items()):
        lo, hi = angle_buckets[bucket]
        if len(paths) < min_per_bucket:
            warnings.warn(
                f"skipping {direction} turn bucket [{math.degrees(lo):.0f}, {math.degrees(hi):.0f}) deg: "
                f"only {len(paths)} samples"
            )
            continue
        stack = np.stack(paths)
        mean_path = stack.mean(axis=0)
        band = np.sqrt(np.mean(np.sum((stack - mean_path) ** 2, axis=2), axis=0))
        models.append(
            TurnTrajectoryModel(
                direction=direction,
                angle_lo=lo,
                angle_hi=hi,
                mean_path=mean_path,
                band=band,
                count=len(paths),
            )
        )
    return models


# -- logical scenarios ----------------------------------------------------------------


@dataclass
class LogicalScenario:
    """Template document plus a distribution per declared parameter.

    Distribution values may be UnivariateDistribution, a JointDistribution
    covering several parameters at once (keyed by a tuple of names), or a
    plain list of strings for enumerations.
    """

    template: ScenarioDocument
    distributions: dict = field(default_factory=dict)

    def parameter_cover(self) -> set[str]:
        covered: set[str] = set()
        for key, dist in self.distributions.items():
            if isinstance(key, tuple):
                covered |= set(key)
            else:
                covered.add(key)
            if isinstance(dist, JointDistribution):
                covered |= set(dist.dims)
        return covered

    def validate(self) -> None:
        self.template.validate()
        declared = self.template.parameter_names()
        covered = self.parameter_cover()
        missing = declared - covered
        if missing:
            raise ValueError(f"no distribution for parameters {sorted(missing)}")
        undeclared = covered - declared
        if undeclared:
            raise ValueError(f"distributions for undeclared parameters {sorted(undeclared)}")


def _histogram_bins(dist: UnivariateDistribution) -> list[tuple[float, float, float]]:
    if isinstance(dist, HistogramDistribution):
        edges = dist.edges
        masses = dist.masses
    else:
        if isinstance(dist, KdeDistribution):
            warnings.warn(f"discretizing KDE parameter {dist.name!r} to {KDE_EXPORT_BINS} bins")
        lo, hi = dist.support
        edges = np.linspace(lo, hi, KDE_EXPORT_BINS + 1)
        masses = dist.bin_masses(edges)
        masses = masses / masses.sum()
    return [(float(edges[i]), float(edges[i + 1]), float(masses[i])) for i in range(len(masses))]


def write_logical_scenario(
    logical: LogicalScenario,
    directory: str,
    template_name: str = "template.xosc",
    distribution_name: str = "distributions.xosc",
    n_runs: int = 100,
    seed: int = 0,
) -> tuple[str, str]:
    """Write the template scenario and its ParameterValueDistribution file.

    KDE and joint distributions are discretized to histograms (joint via
    per-dimension marginals; the interchange format has no joint encoding).
    Returns (template path, distribution path).
    """
    from .xosc import write_openscenario, write_parameter_distribution

    logical.validate()
    os.makedirs(directory, exist_ok=True)
    template_path = os.path.join(directory, template_name)
    write_openscenario(logical.template, template_path)

    histograms: dict[str, list[tuple[float, float, float]]] = {}
    value_sets: dict[str, list[str]] = {}
    for key, dist in logical.distributions.items():
        if isinstance(dist, JointDistribution):
            names = key if isinstance(key, tuple) else tuple(dist.dims)
            for j, name in enumerate(names):
                histograms[name] = _histogram_bins(dist.marginal(j))
        elif isinstance(dist, UnivariateDistribution):
            histograms[str(key)] = _histogram_bins(dist)
        elif isinstance(dist, (list, tuple)):
            value_sets[str(key)] = [str(v) for v in dist]
        else:
            raise TypeError(f"unsupported distribution for {key!r}: {type(dist).__name__}")
    dist_path = os.path.join(directory, distribution_name)
    write_parameter_distribution(
        dist_path, template_name, histograms, value_sets, n_runs=n_runs, seed=seed
    )
    return template_path, dist_path


def read_logical_scenario(distribution_path: str) -> LogicalScenario:
    """Rebuild a LogicalScenario from a ParameterValueDistribution file and
    the template it references (relative to the distribution file)."""
    from .xosc import read_openscenario, read_parameter_distribution

    scenario_file, histograms, value_sets = read_parameter_distribution(distribution_path)
    base = os.path.dirname(os.path.abspath(distribution_path))
    template = read_openscenario(os.path.join(base, scenario_file))
    distributions: dict = {}
    for name, bins in histograms.items():
        edges = [bins[0][0]] + [b[1] for b in bins]
        masses = [b[2] for b in bins]
        distributions[name] = HistogramDistribution(edges, masses, name=name)
    for name, values in value_sets.items():
        distributions[name] = list(values)
    return LogicalScenario(template=template, distributions=distributions)


# -- sampling ----------------------------------------------------------------------


@dataclass
class ConcreteVariation:
    assignment: dict[str, float | str]
    document: ScenarioDocument


def sample_variations(
    logical: LogicalScenario,
    n: int,
    mode: str = "random",
    seed: int = 0,
) -> list[ConcreteVariation]:
    """Draw parameter assignments and instantiate the template.

    random: i.i.d. draws from each distribution (joint draws stay joint);
    stratified: Latin hypercube over each scalar dimension's CDF
    (enumerations cycle through their values in shuffled order).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode not in ("random", "stratified"):
        raise ValueError(f"unknown mode {mode!r}")
    logical.validate()
    rng = np.random.default_rng(seed)
    columns: dict[str, list] = {}

    def lhs_quantiles() -> np.ndarray:
        perm = rng.permutation(n)
        return (perm + rng.random(n)) / n

    for key, dist in logical.distributions.items():
        if isinstance(dist, JointDistribution):
            names = key if isinstance(key, tuple) else tuple(dist.dims)
            if mode == "random":
                draws = dist.sample(n, rng)
                for j, name in enumerate(names):
                    columns[name] = [float(v) for v in draws[:, j]]
            else:
                for j, name in enumerate(names):
                    q = lhs_quantiles()
                    columns[name] = [float(v) for v in dist.marginal(j).ppf(q)]
        elif isinstance(dist, UnivariateDistribution):
            if mode == "random":
                columns[str(key)] = [float(v) for v in dist.sample(n, rng)]
            else:
                columns[str(key)] = [float(v) for v in dist.ppf(lhs_quantiles())]
        else:
            values = list(dist)
            if mode == "random":
                columns[str(key)] = [values[int(i)] for i in rng.integers(0, len(values), n)]
            else:
                order = rng.permutation(n)
                columns[str(key)] = [values[int(order[i]) % len(values)] for i in range(n)]

    variations = []
    for i in range(n):
        assignment = {name: col[i] for name, col in columns.items()}
        document = substitute_parameters(logical.template, assignment)
        variations.append(ConcreteVariation(assignment=assignment, document=document))
    return variations


# -- coverage ----------------------------------------------------------------------


@dataclass
class CoverageReport:
    dims: tuple[str, ...]
    edges_per_dim: list[np.ndarray]
    masses: np.ndarray  # flattened bin masses
    hits: np.ndarray  # flattened hit counts
    covered_mass: float

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "edges_per_dim": [e.tolist() for e in self.edges_per_dim],
            "masses": self.masses.tolist(),
            "hits": self.hits.tolist(),
            "covered_mass": self.covered_mass,
        }

    def to_csv(self) -> str:
        lines = ["bin_index,mass,hits"]
        for i, (m, h) in enumerate(zip(self.masses, self.hits)):
            lines.append(f"{i},{m!r},{int(h)}")
        return "\n".join(lines) + "\n"


def compute_coverage(
    dist: UnivariateDistribution | JointDistribution,
    executed: np.ndarray | list,
    bins_per_dim: int = 10,
) -> CoverageReport:
    """Mass-weighted bin coverage of the executed parameter points.

    The distribution support splits into equal-width bins per dimension;
    covered mass is the summed probability mass of bins hit by at least
    one point (points clamp to the support edges).
    """
    if bins_per_dim < 1:
        raise ValueError("bins_per_dim must be >= 1")
    if isinstance(dist, JointDistribution):
        supports = dist.support
        dims = tuple(dist.dims)
        edges = [np.linspace(lo, hi, bins_per_dim + 1) for lo, hi in supports]
        masses = dist.bin_mass_tensor(edges)
    else:
        lo, hi = dist.support
        dims = (dist.name or "p0",)
        edges = [np.linspace(lo, hi, bins_per_dim + 1)]
        masses = dist.bin_masses(edges[0])
    d = len(edges)

    pts = np.asarray(executed, dtype=float)
    if pts.size == 0:
        pts = pts.reshape(0, d)
    elif pts.ndim == 1:
        if d != 1:
            raise ValueError(f"points must be (n, {d})")
        pts = pts[:, None]
    if pts.shape[1] != d:
        raise ValueError(f"points must be (n, {d})")

    shape = tuple(len(e) - 1 for e in edges)
    hits = np.zeros(shape, dtype=np.int64)
    if len(pts):
        idx = []
        for j in range(d):
            clamped = np.clip(pts[:, j], edges[j][0], edges[j][-1])
            k = np.clip(np.searchsorted(edges[j], clamped, side="right") - 1, 0, shape[j] - 1)
            idx.append(k)
        np.add.at(hits, tuple(idx), 1)

    masses = np.asarray(masses)
    covered = float(masses[hits > 0].sum())
    return CoverageReport(
        dims=dims,
        edges_per_dim=edges,
        masses=masses.ravel(),
        hits=hits.ravel(),
        covered_mass=covered,
    )
