"""Randomized PIT values, probability-plot data and Cramer distances.

For a binned forecast the PIT of an observation in bin ``j`` is drawn
uniformly between the CDF values at the bin's edges. Each draw comes from a
Philox stream keyed on the run seed and the record's identity, so a record
keeps its PIT value no matter which other records are processed alongside.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .binned import BinnedDistribution, Observation

log = logging.getLogger(__name__)

GRID_STEP = 0.01


@dataclass(frozen=True)
class PITValue:
    method: str
    location: str
    season: str
    epiweek: int
    target: int
    value: float
    u: float
    lower: float
    upper: float
    period: str = "test"
    fit_season: str = ""


def keyed_rng(seed: int, *key) -> np.random.Generator:
    """Counter-based generator whose stream depends only on ``seed`` and ``key``."""
    text = "\x1f".join([str(int(seed))] + [str(k) for k in key])
    digest = hashlib.sha256(text.encode()).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], "little")))


def pit(dist: BinnedDistribution, obs: Observation, rng: np.random.Generator | float, method: str = "",
        **extra) -> PITValue:
    """Randomized PIT: ``F(l_j) + U * (F(u_j) - F(l_j))`` for the observed bin ``j``.

    ``rng`` is a generator to draw ``U`` from, or ``U`` itself.
    """
    cum = dist.cumulative()
    lo, hi = float(cum[obs.bin_index]), float(cum[obs.bin_index + 1])
    u = float(rng) if isinstance(rng, (float, int)) else float(rng.random())
    value = min(max(lo + u * (hi - lo), lo), hi)
    return PITValue(method, obs.location, obs.season, obs.epiweek, obs.target, value, u, lo, hi, **extra)


def keyed_pit(dist: BinnedDistribution, obs: Observation, seed: int, method: str, **extra) -> PITValue:
    """PIT with its uniform draw taken from the stream keyed on the record's identity."""
    rng = keyed_rng(seed, method, obs.location, obs.season, obs.epiweek, obs.target)
    return pit(dist, obs, rng, method, **extra)


def _values(pits) -> np.ndarray:
    vals = np.array([p.value if isinstance(p, PITValue) else p for p in pits], dtype=float)
    if vals.size == 0:
        raise ValueError("no PIT values")
    if np.any((vals < 0) | (vals > 1)):
        raise ValueError("PIT values must lie in [0, 1]")
    return vals


class EmpiricalCDF:
    """Right-continuous step function ``F_n(x) = #{z <= x} / n``."""

    def __init__(self, pits):
        self.values = np.sort(_values(pits))
        self.n = self.values.size

    def __call__(self, x):
        return np.searchsorted(self.values, x, side="right") / self.n

    def curve(self, step: float = GRID_STEP) -> list[tuple[float, float]]:
        """Plot-ready points: a regular grid plus both sides of every jump."""
        grid = np.round(np.arange(0.0, 1.0 + step / 2, step), 12)
        left = np.searchsorted(self.values, self.values, side="left") / self.n
        pts = {(float(x), float(self(x))) for x in grid}
        pts |= {(float(z), float(f)) for z, f in zip(self.values, left)}
        pts |= {(float(z), float(self(z))) for z in self.values}
        return sorted(pts)


def empirical_cdf(pits) -> EmpiricalCDF:
    return EmpiricalCDF(pits)


def cramer_distance(pits) -> float:
    """Exact ``int_0^1 (F_n(x) - x)^2 dx`` for the empirical CDF of ``pits``.

    On each stretch between consecutive sorted values ``F_n`` is a constant
    ``c`` and the integral of ``(c - x)^2`` over ``[a, b]`` is
    ``((b - c)^3 - (a - c)^3) / 3``.
    """
    z = np.sort(_values(pits))
    n = z.size
    a = np.concatenate([[0.0], z])
    b = np.concatenate([z, [1.0]])
    c = np.arange(n + 1) / n
    return float(np.sum(((b - c) ** 3 - (a - c) ** 3) / 3.0))


@dataclass
class CalibrationRow:
    group: dict
    n: int
    cramer_distance: float
    cdf: EmpiricalCDF
    curve_path: str = ""


REPORT_GROUPINGS = {
    "method_target": ("method", "target"),
    "method_target_season": ("method", "target", "season"),
}


def calibration_report(pits: Iterable[PITValue], groupings: Sequence[Sequence[str]] | None = None) -> list[CalibrationRow]:
    """Empirical CDF and Cramer distance for every group of PIT values.

    By default groups are method x target and method x target x season.
    """
    pits = list(pits)
    groupings = list(groupings) if groupings is not None else list(REPORT_GROUPINGS.values())
    rows = []
    for by in groupings:
        groups: dict[tuple, list[float]] = defaultdict(list)
        for p in pits:
            groups[tuple(getattr(p, f) for f in by)].append(p.value)
        for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
            vals = groups[key]
            if not vals:
                log.warning("empty calibration group %s skipped", key)
                continue
            cdf = EmpiricalCDF(vals)
            rows.append(CalibrationRow(dict(zip(by, key)), cdf.n, cramer_distance(vals), cdf))
    return rows


PIT_COLUMNS = ["method", "location", "season", "epiweek", "target", "value", "u", "lower", "upper", "period",
               "fit_season"]


def write_pits(path, pits: Iterable[PITValue], header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(PIT_COLUMNS)
        for p in pits:
            w.writerow([p.method, p.location, p.season, p.epiweek, p.target, repr(p.value), repr(p.u),
                        repr(p.lower), repr(p.upper), p.period, p.fit_season])


def read_pits(path) -> list[PITValue]:
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        return [PITValue(r["method"], r["location"], r["season"], int(r["epiweek"]), int(r["target"]),
                         float(r["value"]), float(r["u"]), float(r["lower"]), float(r["upper"]),
                         r.get("period", "test"), r.get("fit_season", "")) for r in rows]


def write_curve(path, cdf: EmpiricalCDF, header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["x", "ecdf"])
        for x, f in cdf.curve():
            w.writerow([repr(x), repr(f)])
