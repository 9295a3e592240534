"""Binned predictive distributions and observations.

A forecast is a probability mass over half-open bins ``[l_i, u_i)`` that
tile the outcome range. The final bin is treated as closed on the right so
that a value sitting exactly on the last edge still has a home.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NEG_TOL = 1e-9
SUM_TOL = 1e-6
# totals this close to one are already normalized up to summation rounding
ROUNDING_TOL = 64 * np.finfo(float).eps


class BinnedError(ValueError):
    """Base class for problems with binned data."""


class SchemaError(BinnedError):
    pass


class InvalidForecastError(BinnedError):
    pass


class OutOfSupportError(BinnedError):
    pass


class StructureMismatchError(BinnedError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BinStructure:
    """Ordered, contiguous bins defined by their edges."""

    edges: np.ndarray

    def __post_init__(self):
        edges = np.array(self.edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2:
            raise SchemaError("a bin structure needs at least two edges")
        if not np.all(np.isfinite(edges)):
            raise SchemaError("bin edges must be finite")
        if np.any(np.diff(edges) <= 0):
            raise SchemaError("bin edges must be strictly increasing")
        object.__setattr__(self, "edges", _readonly(edges))

    @classmethod
    def uniform(cls, start: float, stop: float, width: float, tail: float | None = None) -> BinStructure:
        """Equal-width grid from ``start`` to ``stop``, optionally with one wide terminal bin up to ``tail``."""
        n = int(round((stop - start) / width))
        edges = [start + i * width for i in range(n + 1)]
        edges = [round(e, 10) for e in edges]
        if tail is not None:
            edges.append(tail)
        return cls(np.array(edges))

    @classmethod
    def flusight(cls) -> BinStructure:
        """0.0 to 13.0 in 0.1 steps plus the terminal [13, 100) bin (131 bins)."""
        return cls.uniform(0.0, 13.0, 0.1, tail=100.0)

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    @property
    def lower(self) -> np.ndarray:
        return self.edges[:-1]

    @property
    def upper(self) -> np.ndarray:
        return self.edges[1:]

    def __eq__(self, other):
        if not isinstance(other, BinStructure):
            return NotImplemented
        return self.edges.shape == other.edges.shape and bool(np.all(self.edges == other.edges))

    def __hash__(self):
        return hash(self.edges.tobytes())

    def __len__(self):
        return self.n_bins


def locate_bin(structure: BinStructure, value: float) -> int:
    """Index ``i`` with ``l_i <= value < u_i``; the last bin also takes its upper edge."""
    edges = structure.edges
    if not np.isfinite(value) or value < edges[0] or value > edges[-1]:
        raise OutOfSupportError(f"value {value!r} outside [{edges[0]}, {edges[-1]}]")
    if value == edges[-1]:
        return structure.n_bins - 1
    return int(np.searchsorted(edges, value, side="right")) - 1


@dataclass(frozen=True, eq=False)
class BinnedDistribution:
    """Probability mass per bin. Construct through :func:`validate`."""

    structure: BinStructure
    probs: np.ndarray
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.shape != (self.structure.n_bins,):
            raise SchemaError(f"expected {self.structure.n_bins} masses, got {probs.shape}")
        object.__setattr__(self, "probs", _readonly(probs))
        cum = np.empty(probs.size + 1)
        cum[0] = 0.0
        np.cumsum(probs, out=cum[1:])
        # pin both ends; drift in the middle is at rounding level
        cum[-1] = 1.0
        np.minimum(cum, 1.0, out=cum)
        object.__setattr__(self, "_cum", _readonly(cum))

    @property
    def n_bins(self) -> int:
        return self.structure.n_bins

    def cumulative(self) -> np.ndarray:
        return self._cum

    def mass(self, index: int) -> float:
        return float(self.probs[index])

    def __eq__(self, other):
        if not isinstance(other, BinnedDistribution):
            return NotImplemented
        return self.structure == other.structure and bool(np.all(self.probs == other.probs))

    __hash__ = None


def cumulative_at_edges(dist: BinnedDistribution) -> np.ndarray:
    """CDF at each of the ``I + 1`` edges: ``[0, P_1, P_1 + P_2, ..., 1]``."""
    return dist.cumulative()


def validate(
    dist: BinnedDistribution | Sequence[float] | np.ndarray,
    structure: BinStructure | None = None,
) -> BinnedDistribution:
    """Check and normalize raw bin masses.

    Masses below ``-1e-9`` are rejected, smaller negatives are clamped to
    zero, and a total within ``1e-6`` of one is rescaled to sum to one.
    An already validated distribution is returned unchanged.

    Raises:
        SchemaError: the number of masses does not match the structure.
        InvalidForecastError: negative or badly normalized masses.
    """
    if isinstance(dist, BinnedDistribution):
        return dist
    if structure is None:
        raise SchemaError("raw masses need a bin structure")
    probs = np.asarray(dist, dtype=float)
    if probs.ndim != 1 or probs.size != structure.n_bins:
        raise SchemaError(f"expected {structure.n_bins} masses, got {probs.size}")
    if not np.all(np.isfinite(probs)):
        raise InvalidForecastError("non-finite bin mass")
    if np.any(probs < -NEG_TOL):
        raise InvalidForecastError(f"negative bin mass {probs.min()!r}")
    probs = np.where(probs < 0.0, 0.0, probs)
    total = float(np.sum(probs))
    if abs(total - 1.0) > SUM_TOL:
        raise InvalidForecastError(f"bin masses sum to {total!r}")
    if abs(total - 1.0) > ROUNDING_TOL:
        probs = probs / total
    return BinnedDistribution(structure, probs)


def check_same_structure(dists: Sequence[BinnedDistribution]) -> BinStructure:
    if not dists:
        raise SchemaError("no component distributions")
    structure = dists[0].structure
    for d in dists[1:]:
        if d.structure is not structure and d.structure != structure:
            raise StructureMismatchError("component distributions use different bins")
    return structure


@dataclass(frozen=True)
class Observation:
    location: str
    season: str
    epiweek: int
    target: int
    value: float
    bin_index: int

    @classmethod
    def at(cls, structure: BinStructure, location: str, season: str, epiweek: int, target: int,
           value: float) -> Observation:
        return cls(location, season, epiweek, target, float(value), locate_bin(structure, value))

    @property
    def key(self) -> tuple[str, str, int, int]:
        return (self.location, self.season, self.epiweek, self.target)


@dataclass(frozen=True, eq=False)
class ForecastRecord:
    model_id: str
    location: str
    season: str
    epiweek: int
    target: int
    dist: BinnedDistribution

    def __post_init__(self):
        if self.target not in (1, 2, 3, 4):
            raise SchemaError(f"target horizon must be 1-4, got {self.target}")
        if not 1 <= self.epiweek <= 53:
            raise SchemaError(f"epiweek {self.epiweek} out of range")

    @property
    def key(self) -> tuple[str, str, int, int]:
        return (self.location, self.season, self.epiweek, self.target)


@dataclass(frozen=True, eq=False)
class AlignedRecord:
    """All component forecasts for one key, in roster order, with the matched observation."""

    components: tuple[BinnedDistribution, ...]
    observation: Observation

    @property
    def key(self) -> tuple[str, str, int, int]:
        return self.observation.key

    @property
    def season(self) -> str:
        return self.observation.season

    @property
    def target(self) -> int:
        return self.observation.target
