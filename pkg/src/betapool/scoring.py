"""Truncated log scores and their aggregation."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

from .binned import BinnedDistribution, Observation

log = logging.getLogger(__name__)

LOG_SCORE_FLOOR = -10.0

GROUPINGS = {
    "target": ("target",),
    "season": ("season",),
    "target_season": ("target", "season"),
    "target_season_location": ("target", "season", "location"),
    "overall": (),
}


def raw_log_score(dist: BinnedDistribution, obs: Observation) -> float:
    p = dist.mass(obs.bin_index)
    return math.log(p) if p > 0 else -math.inf


def log_score(dist: BinnedDistribution, obs: Observation) -> float:
    """Natural log of the mass on the observed bin, truncated below at -10."""
    return max(raw_log_score(dist, obs), LOG_SCORE_FLOOR)


@dataclass(frozen=True)
class ScoreRecord:
    method: str
    location: str
    season: str
    epiweek: int
    target: int
    log_score: float
    raw_log_score: float

    @classmethod
    def score(cls, method: str, dist: BinnedDistribution, obs: Observation) -> ScoreRecord:
        raw = raw_log_score(dist, obs)
        return cls(method, obs.location, obs.season, obs.epiweek, obs.target, max(raw, LOG_SCORE_FLOOR), raw)

    @property
    def truncated(self) -> bool:
        return self.raw_log_score < LOG_SCORE_FLOOR


def aggregate(scores: Iterable[ScoreRecord], by: Sequence[str] | str = ("target", "season")) -> dict[tuple, float]:
    """Mean truncated log score per method and group.

    ``by`` is a tuple of ScoreRecord field names or the name of one of
    :data:`GROUPINGS`. Keys of the result are ``(method, *group values)``.
    """
    if isinstance(by, str):
        by = GROUPINGS[by]
    sums: dict[tuple, list[float]] = defaultdict(list)
    for s in scores:
        sums[(s.method,) + tuple(getattr(s, f) for f in by)].append(s.log_score)
    out = {}
    for key in sorted(sums, key=lambda k: tuple(str(x) for x in k)):
        vals = sums[key]
        if not vals:
            log.warning("empty group %s omitted", key)
            continue
        out[key] = math.fsum(vals) / len(vals)
    return out


SCORE_COLUMNS = [f.name for f in fields(ScoreRecord)]


def write_scores(path, scores: Iterable[ScoreRecord], header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=SCORE_COLUMNS)
        w.writeheader()
        for s in scores:
            row = asdict(s)
            row["log_score"] = repr(s.log_score)
            row["raw_log_score"] = repr(s.raw_log_score)
            w.writerow(row)


def read_scores(path) -> list[ScoreRecord]:
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        return [
            ScoreRecord(r["method"], r["location"], r["season"], int(r["epiweek"]), int(r["target"]),
                        float(r["log_score"]), float(r["raw_log_score"]))
            for r in rows
        ]


def write_aggregate(path, table: dict[tuple, float], by: Sequence[str], header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["method", *by, "mean_log_score"])
        for key, value in table.items():
            w.writerow([*key, repr(value)])
