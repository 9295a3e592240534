"""Reading FluSight-style submission files and truth data into aligned datasets.

Submission files carry one block of bin rows per (location, target):

    Location,Target,Type,Unit,Bin_start_incl,Bin_end_notincl,Value

and are named ``EW<week>-<year>-<model>.csv``. Seasons run from MMWR week
40 of one year to week 39 of the next and are labelled ``"2016/2017"``.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .binned import (
    AlignedRecord,
    BinnedDistribution,
    BinnedError,
    BinStructure,
    Observation,
    OutOfSupportError,
    validate,
)

log = logging.getLogger(__name__)

HEADER = ["Location", "Target", "Type", "Unit", "Bin_start_incl", "Bin_end_notincl", "Value"]
TRUTH_HEADER = ["location", "season", "epiweek", "wili"]
SEASON_START_WEEK = 40
_TARGET_RE = re.compile(r"^\s*(\d+)\s*wk\s+ahead\s*$", re.IGNORECASE)
_FILE_RE = re.compile(r"^EW(\d{1,2})-(\d{4})-(.+)\.csv$", re.IGNORECASE)


class DataError(Exception):
    """Unusable input data."""


class ParseError(DataError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


class EmptyDatasetError(DataError):
    pass


# MMWR calendar


def mmwr_week1_start(year: int) -> dt.date:
    """Sunday starting MMWR week 1: the week holding January 4."""
    jan4 = dt.date(year, 1, 4)
    return jan4 - dt.timedelta(days=(jan4.weekday() + 1) % 7)


def mmwr_week(date: dt.date) -> tuple[int, int]:
    for year in (date.year + 1, date.year, date.year - 1):
        start = mmwr_week1_start(year)
        if date >= start:
            return year, (date - start).days // 7 + 1
    raise AssertionError("unreachable")


def weeks_in_year(year: int) -> int:
    return (mmwr_week1_start(year + 1) - mmwr_week1_start(year)).days // 7


def add_weeks(year: int, week: int, n: int) -> tuple[int, int]:
    if not 1 <= week <= weeks_in_year(year):
        raise ValueError(f"{year} has no MMWR week {week}")
    return mmwr_week(mmwr_week1_start(year) + dt.timedelta(weeks=week - 1 + n))


def season_of(year: int, week: int) -> str:
    first = year if week >= SEASON_START_WEEK else year - 1
    return f"{first}/{first + 1}"


def calendar_week(season: str, epiweek: int) -> tuple[int, int]:
    """(year, week) of a season-relative MMWR week."""
    first, second = parse_season(season)
    return (first if epiweek >= SEASON_START_WEEK else second), epiweek


def parse_season(season: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d{4})/(\d{4})", season.strip())
    if not m or int(m.group(2)) != int(m.group(1)) + 1:
        raise ValueError(f"bad season label {season!r}")
    return int(m.group(1)), int(m.group(2))


def target_week(season: str, epiweek: int, horizon: int) -> tuple[str, int]:
    """Season and MMWR week that a ``horizon``-week-ahead forecast made in ``epiweek`` refers to."""
    year, week = add_weeks(*calendar_week(season, epiweek), horizon)
    return season_of(year, week), week


def parse_target(text: str) -> int | None:
    m = _TARGET_RE.match(text)
    return int(m.group(1)) if m else None


# submission files


@dataclass(frozen=True)
class SubmissionRow:
    location: str
    target: str
    type: str
    unit: str
    bin_start_incl: float | None
    bin_end_notincl: float | None
    value: float


@dataclass
class SubmissionFile:
    model_id: str
    season: str
    epiweek: int
    year: int
    rows: list[SubmissionRow]
    distributions: dict[tuple[str, int], BinnedDistribution] = field(default_factory=dict)
    rejections: dict[tuple[str, int], str] = field(default_factory=dict)


_structures: dict[bytes, BinStructure] = {}


def _interned(edges: np.ndarray) -> BinStructure:
    key = np.asarray(edges, dtype=float).tobytes()
    s = _structures.get(key)
    if s is None:
        s = _structures[key] = BinStructure(edges)
    return s


def _num(text: str) -> float | None:
    text = text.strip()
    if text.upper() in ("NA", "NAN", ""):
        return None
    return float(text)


def infer_file_keys(path) -> tuple[str, int, int]:
    """(model_id, year, week) from an ``EW<week>-<year>-<model>.csv`` file name."""
    m = _FILE_RE.match(Path(path).name)
    if not m:
        raise ValueError(f"cannot infer model and week from file name {Path(path).name!r}")
    return m.group(3), int(m.group(2)), int(m.group(1))


def parse_submission(path, model_id: str | None = None, year: int | None = None, week: int | None = None) -> SubmissionFile:
    """Parse one submission file.

    Point rows are kept but not turned into distributions. Each week-ahead
    (location, target) block is checked for contiguous bins and validated;
    blocks that fail land in ``rejections`` with the reason.

    Raises:
        ParseError: bad header, wrong field count or unparseable number.
    """
    path = Path(path)
    if model_id is None or year is None or week is None:
        m_id, y, w = infer_file_keys(path)
        model_id, year, week = model_id or m_id, year or y, week or w
    rows: list[SubmissionRow] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if [h.strip() for h in header] != HEADER:
            raise ParseError(path, 1, f"unexpected header {header}")
        for lineno, fields_ in enumerate(reader, start=2):
            if not fields_:
                continue
            if len(fields_) != len(HEADER):
                raise ParseError(path, lineno, f"expected {len(HEADER)} fields, got {len(fields_)}")
            loc, target, typ, unit, start, end, value = (f.strip() for f in fields_)
            try:
                row = SubmissionRow(loc, target, typ, unit, _num(start), _num(end), _num(value))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if row.value is None and typ.lower() == "bin":
                raise ParseError(path, lineno, "missing bin value")
            rows.append(row)

    sub = SubmissionFile(model_id, season_of(year, week), week, year, rows)
    blocks: dict[tuple[str, int], list[SubmissionRow]] = defaultdict(list)
    for row in rows:
        h = parse_target(row.target)
        if h is None or row.type.lower() != "bin":
            continue
        blocks[(row.location, h)].append(row)
    for key, block in blocks.items():
        try:
            sub.distributions[key] = _block_distribution(block)
        except (BinnedError, ValueError) as exc:
            sub.rejections[key] = f"{type(exc).__name__}: {exc}"
            log.warning("%s: rejected %s %s: %s", path.name, key[0], key[1], exc)
    return sub


def _block_distribution(block: Sequence[SubmissionRow]) -> BinnedDistribution:
    block = sorted(block, key=lambda r: r.bin_start_incl)
    starts = [r.bin_start_incl for r in block]
    ends = [r.bin_end_notincl for r in block]
    if any(s is None for s in starts) or any(e is None for e in ends):
        raise BinnedError("bin row without bounds")
    for a, b in zip(ends[:-1], starts[1:]):
        if not math.isclose(a, b, rel_tol=0, abs_tol=1e-9):
            raise BinnedError(f"bins not contiguous at {a} / {b}")
    edges = np.array(starts + [ends[-1]])
    return validate(np.array([r.value for r in block]), _interned(edges))


def _fmt(x: float | None) -> str:
    return "NA" if x is None else repr(x)


def write_submission(path, sub: SubmissionFile) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for r in sub.rows:
            w.writerow([r.location, r.target, r.type, r.unit, _fmt(r.bin_start_incl), _fmt(r.bin_end_notincl),
                        _fmt(r.value)])


def submission_from_distributions(model_id: str, year: int, week: int,
                                  dists: dict[tuple[str, int], BinnedDistribution]) -> SubmissionFile:
    rows = []
    for (loc, h), d in sorted(dists.items()):
        for lo, hi, p in zip(d.structure.lower, d.structure.upper, d.probs):
            rows.append(SubmissionRow(loc, f"{h} wk ahead", "Bin", "percent", float(lo), float(hi), float(p)))
    return SubmissionFile(model_id, season_of(year, week), week, year, rows, dict(dists))


def discover_submissions(root, models: Iterable[str] | None = None) -> list[Path]:
    """Submission files under ``root``, optionally restricted to a model roster, in sorted order."""
    wanted = set(models) if models else None
    out = []
    for p in sorted(Path(root).rglob("*.csv")):
        m = _FILE_RE.match(p.name)
        if m and (wanted is None or m.group(3) in wanted):
            out.append(p)
    return out


# truth


def read_truth(path) -> dict[tuple[str, str, int], float]:
    """``(location, season, epiweek) -> wILI`` from a ``location,season,epiweek,wili`` file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"truth file {path} not found")
    out: dict[tuple[str, str, int], float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = [h.strip().lower() for h in next(reader, [])]
        if header != TRUTH_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(TRUTH_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                loc, season, week, value = row[0].strip(), row[1].strip(), int(row[2]), float(row[3])
                parse_season(season)
            except (ValueError, IndexError) as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if not value >= 0:
                raise ParseError(path, lineno, f"negative wILI {value}")
            key = (loc, season, week)
            if key in out:
                raise ParseError(path, lineno, f"duplicate truth for {key}")
            out[key] = value
    return out


def write_truth(path, truth: dict[tuple[str, str, int], float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRUTH_HEADER)
        for (loc, season, week), v in sorted(truth.items()):
            w.writerow([loc, season, week, repr(v)])


# alignment


def _season_order(season: str, epiweek: int) -> tuple[int, int]:
    return calendar_week(season, epiweek)


@dataclass
class Dataset:
    """Complete-case records: every record has one forecast per roster model."""

    models: tuple[str, ...]
    all_records: list[AlignedRecord]
    excluded: dict[str, int] = field(default_factory=dict)

    def seasons(self) -> list[str]:
        return sorted({r.season for r in self.all_records})

    def targets(self) -> list[int]:
        return sorted({r.target for r in self.all_records})

    def training_seasons(self, test_season: str) -> list[str]:
        """Every season in the data that ends before ``test_season`` starts."""
        first = parse_season(test_season)[0]
        return [s for s in self.seasons() if parse_season(s)[0] < first]

    def locations(self) -> list[str]:
        return sorted({r.observation.location for r in self.all_records})

    def records(self, target: int | None = None, seasons: Iterable[str] | None = None,
                locations: Iterable[str] | None = None) -> list[AlignedRecord]:
        seasons = set(seasons) if seasons is not None else None
        locations = set(locations) if locations is not None else None
        return [
            r for r in self.all_records
            if (target is None or r.target == target)
            and (seasons is None or r.season in seasons)
            and (locations is None or r.observation.location in locations)
        ]

    def __len__(self):
        return len(self.all_records)


def build_dataset(
    submissions: Iterable[SubmissionFile],
    truth: dict[tuple[str, str, int], float],
    targets: Iterable[int] = (1, 2, 3, 4),
    locations: Iterable[str] | None = None,
    models: Sequence[str] | None = None,
) -> Dataset:
    """Align component forecasts with observed values.

    Keys missing any roster model, using mismatched bins, lacking truth or
    with a truth value outside the bins are dropped and counted in
    ``Dataset.excluded``.

    Raises:
        EmptyDatasetError: nothing survives alignment.
    """
    targets = set(targets)
    locations = set(locations) if locations is not None else None
    forecasts: dict[tuple[str, str, int, int], dict[str, BinnedDistribution]] = defaultdict(dict)
    seen_models = set()
    for sub in submissions:
        seen_models.add(sub.model_id)
        for (loc, h), dist in sub.distributions.items():
            if h not in targets or (locations is not None and loc not in locations):
                continue
            forecasts[(loc, sub.season, sub.epiweek, h)][sub.model_id] = dist
    roster = tuple(models) if models else tuple(sorted(seen_models))
    excluded: dict[str, int] = defaultdict(int)
    records = []
    for key in sorted(forecasts, key=lambda k: (_season_order(k[1], k[2]), k[0], k[3])):
        loc, season, week, h = key
        by_model = forecasts[key]
        if any(m not in by_model for m in roster):
            excluded["missing component"] += 1
            continue
        comps = tuple(by_model[m] for m in roster)
        structure = comps[0].structure
        if any(c.structure != structure for c in comps[1:]):
            excluded["bin mismatch"] += 1
            continue
        t_season, t_week = target_week(season, week, h)
        value = truth.get((loc, t_season, t_week))
        if value is None:
            excluded["no truth"] += 1
            continue
        try:
            obs = Observation.at(structure, loc, season, week, h, value)
        except OutOfSupportError:
            excluded["truth outside bins"] += 1
            continue
        records.append(AlignedRecord(comps, obs))
    for reason, count in excluded.items():
        log.info("excluded %d keys: %s", count, reason)
    if not records:
        raise EmptyDatasetError("no forecast keys align with the truth data")
    return Dataset(roster, records, dict(excluded))


def load_dataset(forecast_dir, truth_path, models: Sequence[str] | None = None, targets=(1, 2, 3, 4),
                 locations=None) -> Dataset:
    truth = read_truth(truth_path)
    paths = discover_submissions(forecast_dir, models)
    if not paths:
        raise DataError(f"no submission files under {forecast_dir}")
    subs = [parse_submission(p) for p in paths]
    return build_dataset(subs, truth, targets, locations, models)
