"""Parameter distributions fitted from real-world samples.

Univariate: histogram (Freedman-Diaconis bins) or Gaussian KDE (Scott's
rule). Joint: d-dimensional Gaussian KDE with a diagonal bandwidth, or a
d-dimensional histogram. Everything exposes pdf/cdf-style mass queries and
deterministic seeded sampling; KDE quantiles come from a dense inverse-cdf
grid refined by one Newton step (plenty below the 1e-6 normalization
tolerance used in the tests).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

_PPF_GRID = 2048


class FitError(ValueError):
    pass


@dataclass
class UnivariateDistribution:
    """Base interface; concrete kinds are HistogramDistribution and
    KdeDistribution."""

    name: str = ""

    kind = "abstract"

    def pdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def ppf(self, q):
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.ppf(rng.random(n))

    def bin_masses(self, edges: np.ndarray) -> np.ndarray:
        c = self.cdf(np.asarray(edges))
        return np.diff(c)

    def to_dict(self) -> dict:
        raise NotImplementedError


class HistogramDistribution(UnivariateDistribution):
    kind = "histogram"

    def __init__(self, edges, masses, name: str = ""):
        super().__init__(name=name)
        self.edges = np.asarray(edges, dtype=float)
        masses = np.asarray(masses, dtype=float)
        if len(self.edges) != len(masses) + 1:
            raise FitError("edges must have len(masses) + 1 entries")
        if np.any(masses < 0):
            raise FitError("negative bin mass")
        total = masses.sum()
        if total <= 0:
            raise FitError("zero total mass")
        self.masses = masses / total
        self._cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        self._cum[-1] = 1.0

    @property
    def support(self) -> tuple[float, float]:
        return float(self.edges[0]), float(self.edges[-1])

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, len(self.masses) - 1)
        widths = np.diff(self.edges)
        inside = (x >= self.edges[0]) & (x <= self.edges[-1])
        return np.where(inside, self.masses[idx] / widths[idx], 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, len(self.masses) - 1)
        widths = np.diff(self.edges)
        frac = np.clip((x - self.edges[idx]) / widths[idx], 0.0, 1.0)
        out = self._cum[idx] + frac * self.masses[idx]
        return np.clip(np.where(x < self.edges[0], 0.0, np.where(x > self.edges[-1], 1.0, out)), 0.0, 1.0)

    def ppf(self, q):
        q = np.clip(np.asarray(q, dtype=float), 0.0, 1.0)
        idx = np.clip(np.searchsorted(self._cum, q, side="right") - 1, 0, len(self.masses) - 1)
        widths = np.diff(self.edges)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(self.masses[idx] > 0, (q - self._cum[idx]) / self.masses[idx], 0.0)
        return self.edges[idx] + np.clip(frac, 0.0, 1.0) * widths[idx]

    def mean(self) -> float:
        centers = (self.edges[:-1] + self.edges[1:]) / 2
        return float(np.sum(centers * self.masses))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "edges": self.edges.tolist(),
            "masses": self.masses.tolist(),
        }


class KdeDistribution(UnivariateDistribution):
    kind = "gaussian_kde"

    def __init__(self, samples, bandwidth: float, name: str = ""):
        super().__init__(name=name)
        self.samples = np.asarray(samples, dtype=float)
        if not bandwidth > 0:
            raise FitError("bandwidth must be > 0")
        self.bandwidth = float(bandwidth)
        lo = float(self.samples.min() - 3 * bandwidth)
        hi = float(self.samples.max() + 3 * bandwidth)
        self._support = (lo, hi)
        self._grid = np.linspace(lo, hi, _PPF_GRID)
        self._grid_cdf = self.cdf(self._grid)

    @property
    def support(self) -> tuple[float, float]:
        return self._support

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x)
        z = (flat[:, None] - self.samples[None, :]) / self.bandwidth
        out = np.exp(-0.5 * z * z).sum(axis=1) / (
            len(self.samples) * self.bandwidth * math.sqrt(2 * math.pi)
        )
        return out.reshape(x.shape) if x.shape else float(out[0])

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x)
        z = (flat[:, None] - self.samples[None, :]) / self.bandwidth
        out = ndtr(z).mean(axis=1)
        return out.reshape(x.shape) if x.shape else float(out[0])

    def ppf(self, q):
        q = np.clip(np.asarray(q, dtype=float), 1e-12, 1 - 1e-12)
        x = np.interp(q, self._grid_cdf, self._grid)
        # One Newton refinement sharpens the grid inverse.
        p = np.maximum(self.pdf(x), 1e-300)
        x = x - (self.cdf(x) - q) / p
        return np.clip(x, self._support[0], self._support[1])

    def mean(self) -> float:
        return float(self.samples.mean())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        picks = rng.integers(0, len(self.samples), n)
        return self.samples[picks] + rng.normal(0.0, self.bandwidth, n)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "samples": self.samples.tolist(),
            "bandwidth": self.bandwidth,
        }


def scott_bandwidth(samples: np.ndarray, d: int = 1) -> float:
    sigma = float(np.std(samples, ddof=1))
    return sigma * len(samples) ** (-1.0 / (d + 4))


def freedman_diaconis_edges(samples: np.ndarray) -> np.ndarray:
    q75, q25 = np.percentile(samples, [75, 25])
    iqr = q75 - q25
    lo, hi = float(samples.min()), float(samples.max())
    if iqr <= 0 or hi <= lo:
        # Degenerate spread: a single unit-width bin around the value.
        center = lo
        return np.array([center - 0.5, center + 0.5])
    width = 2 * iqr / len(samples) ** (1 / 3)
    n_bins = max(1, int(math.ceil((hi - lo) / width)))
    return np.linspace(lo, hi, n_bins + 1)


def fit_univariate(samples, kind: str = "gaussian_kde", name: str = "", bins=None) -> UnivariateDistribution:
    """Fit a normalized univariate distribution.

    KDE needs >= 5 samples and nonzero variance (zero variance falls back
    to a histogram with a warning); histograms need >= 1 sample and use
    Freedman-Diaconis bins unless explicit edges are given.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1:
        raise FitError("samples must be one-dimensional")
    if kind == "gaussian_kde":
        if len(samples) < 5:
            raise FitError("KDE needs >= 5 samples")
        if np.std(samples) == 0:
            warnings.warn("zero-variance samples: falling back to histogram")
            kind = "histogram"
        else:
            return KdeDistribution(samples, scott_bandwidth(samples), name=name)
    if kind != "histogram":
        raise FitError(f"unknown distribution kind {kind!r}")
    if len(samples) < 1:
        raise FitError("histogram needs >= 1 sample")
    edges = np.asarray(bins, dtype=float) if bins is not None else freedman_diaconis_edges(samples)
    counts, _ = np.histogram(samples, bins=edges)
    if counts.sum() == 0:
        raise FitError("no samples inside bin range")
    return HistogramDistribution(edges, counts / counts.sum(), name=name)


# -- joint distributions ---------------------------------------------------------


@dataclass
class JointDistribution:
    """d-dimensional distribution over named parameters (2 <= d <= 4)."""

    dims: tuple[str, ...]

    kind = "abstract"

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def marginal(self, dim: int) -> UnivariateDistribution:
        raise NotImplementedError

    @property
    def support(self) -> list[tuple[float, float]]:
        raise NotImplementedError

    def bin_mass_tensor(self, edges_per_dim: list[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class JointKde(JointDistribution):
    kind = "gaussian_kde"

    def __init__(self, samples, bandwidths, dims: tuple[str, ...]):
        super().__init__(dims=tuple(dims))
        self.samples = np.asarray(samples, dtype=float)
        self.bandwidths = np.asarray(bandwidths, dtype=float)
        if self.samples.ndim != 2:
            raise FitError("joint samples must be (n, d)")
        if self.samples.shape[1] != len(self.bandwidths) or len(self.dims) != len(self.bandwidths):
            raise FitError("dimension mismatch")
        if np.any(self.bandwidths <= 0):
            raise FitError("bandwidths must be > 0")

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    @property
    def support(self) -> list[tuple[float, float]]:
        return [
            (
                float(self.samples[:, j].min() - 3 * self.bandwidths[j]),
                float(self.samples[:, j].max() + 3 * self.bandwidths[j]),
            )
            for j in range(self.d)
        ]

    def pdf(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        z = (pts[:, None, :] - self.samples[None, :, :]) / self.bandwidths
        kernel = np.exp(-0.5 * np.sum(z * z, axis=2))
        norm = len(self.samples) * np.prod(self.bandwidths) * (2 * math.pi) ** (self.d / 2)
        return kernel.sum(axis=1) / norm

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        picks = rng.integers(0, len(self.samples), n)
        noise = rng.normal(0.0, 1.0, (n, self.d)) * self.bandwidths
        return self.samples[picks] + noise

    def marginal(self, dim: int) -> KdeDistribution:
        # Diagonal-bandwidth Gaussian KDE: marginals are exactly the 1-d
        # KDEs of the per-dimension samples.
        return KdeDistribution(self.samples[:, dim], float(self.bandwidths[dim]), name=self.dims[dim])

    def correlation(self) -> np.ndarray:
        cov = np.cov(self.samples, rowvar=False) + np.diag(self.bandwidths**2)
        sd = np.sqrt(np.diag(cov))
        return cov / np.outer(sd, sd)

    def bin_mass_tensor(self, edges_per_dim: list[np.ndarray]) -> np.ndarray:
        """Exact kernel mass in each cell of an axis-aligned grid."""
        per_dim = []
        for j, edges in enumerate(edges_per_dim):
            z = (np.asarray(edges)[None, :] - self.samples[:, j][:, None]) / self.bandwidths[j]
            per_dim.append(np.diff(ndtr(z), axis=1))  # (n, bins_j)
        letters = "bcde"
        spec = ",".join(f"n{letters[j]}" for j in range(self.d))
        out = np.einsum(f"{spec}->{''.join(letters[: self.d])}", *per_dim)
        return out / len(self.samples)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dims": list(self.dims),
            "samples": self.samples.tolist(),
            "bandwidths": self.bandwidths.tolist(),
        }


class JointHistogram(JointDistribution):
    kind = "histogram"

    def __init__(self, edges_per_dim, masses, dims: tuple[str, ...]):
        super().__init__(dims=tuple(dims))
        self.edges_per_dim = [np.asarray(e, dtype=float) for e in edges_per_dim]
        masses = np.asarray(masses, dtype=float)
        total = masses.sum()
        if total <= 0:
            raise FitError("zero total mass")
        self.masses = masses / total

    @property
    def d(self) -> int:
        return len(self.edges_per_dim)

    @property
    def support(self) -> list[tuple[float, float]]:
        return [(float(e[0]), float(e[-1])) for e in self.edges_per_dim]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        flat = self.masses.ravel()
        picks = rng.choice(len(flat), size=n, p=flat)
        coords = np.column_stack(np.unravel_index(picks, self.masses.shape))
        out = np.empty((n, self.d))
        for j in range(self.d):
            edges = self.edges_per_dim[j]
            lo = edges[coords[:, j]]
            hi = edges[coords[:, j] + 1]
            out[:, j] = lo + rng.random(n) * (hi - lo)
        return out

    def marginal(self, dim: int) -> HistogramDistribution:
        axes = tuple(j for j in range(self.d) if j != dim)
        return HistogramDistribution(
            self.edges_per_dim[dim], self.masses.sum(axis=axes), name=self.dims[dim]
        )

    def bin_mass_tensor(self, edges_per_dim: list[np.ndarray]) -> np.ndarray:
        # Overlap-weighted re-binning, assuming piecewise-uniform density.
        overlaps = []
        for j, new_edges in enumerate(edges_per_dim):
            old = self.edges_per_dim[j]
            new_edges = np.asarray(new_edges)
            ov = np.zeros((len(new_edges) - 1, len(old) - 1))
            for a in range(len(new_edges) - 1):
                lo = np.maximum(old[:-1], new_edges[a])
                hi = np.minimum(old[1:], new_edges[a + 1])
                ov[a] = np.clip(hi - lo, 0.0, None) / (old[1:] - old[:-1])
            overlaps.append(ov)
        letters = "bcde"
        out_letters = "BCDE"
        operands = []
        spec_parts = []
        for j in range(self.d):
            operands.append(overlaps[j])
            spec_parts.append(f"{out_letters[j]}{letters[j]}")
        spec = ",".join(spec_parts) + f",{''.join(letters[: self.d])}->{''.join(out_letters[: self.d])}"
        return np.einsum(spec, *operands, self.masses)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dims": list(self.dims),
            "edges_per_dim": [e.tolist() for e in self.edges_per_dim],
            "masses": self.masses.tolist(),
        }


def fit_joint(samples, dims: tuple[str, ...] | None = None, kind: str = "gaussian_kde", bins: int = 10) -> JointDistribution:
    """Fit a joint distribution over >= 10 samples of dimension 2..4."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise FitError("joint samples must be (n, d)")
    n, d = samples.shape
    if n < 10:
        raise FitError("joint fit needs >= 10 samples")
    if not 2 <= d <= 4:
        raise FitError("joint distributions support 2 <= d <= 4")
    dims = tuple(dims) if dims is not None else tuple(f"p{j}" for j in range(d))
    if len(dims) != d:
        raise FitError("dimension mismatch between samples and dims")
    if kind == "gaussian_kde":
        bandwidths = [scott_bandwidth(samples[:, j], d=d) for j in range(d)]
        if any(b <= 0 for b in bandwidths):
            raise FitError("zero-variance dimension, use a histogram")
        return JointKde(samples, bandwidths, dims)
    if kind == "histogram":
        edges = [np.linspace(samples[:, j].min(), samples[:, j].max(), bins + 1) for j in range(d)]
        masses, _ = np.histogramdd(samples, bins=edges)
        return JointHistogram(edges, masses / n, dims)
    raise FitError(f"unknown distribution kind {kind!r}")


# -- serialization -----------------------------------------------------------------


def distribution_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "histogram" and "edges" in d:
        return HistogramDistribution(d["edges"], d["masses"], name=d.get("name", ""))
    if kind == "gaussian_kde" and "samples" in d and "bandwidth" in d:
        return KdeDistribution(d["samples"], d["bandwidth"], name=d.get("name", ""))
    if kind == "gaussian_kde" and "bandwidths" in d:
        return JointKde(d["samples"], d["bandwidths"], tuple(d["dims"]))
    if kind == "histogram" and "edges_per_dim" in d:
        return JointHistogram(d["edges_per_dim"], d["masses"], tuple(d["dims"]))
    raise FitError(f"unrecognized distribution payload (kind={kind!r})")


def write_distributions_json(distributions: dict[str, object], path: str) -> None:
    payload = {name: dist.to_dict() for name, dist in distributions.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def read_distributions_json(path: str) -> dict[str, object]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return {name: distribution_from_dict(d) for name, d in payload.items()}
