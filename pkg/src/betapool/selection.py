"""Leave-one-season-out choice of the number of beta components."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .combinators import Method
from .estimation import FitConfig, TrainingSet, fit_warm, pointwise_loglik
from .scoring import LOG_SCORE_FLOOR

log = logging.getLogger(__name__)

DEFAULT_K_GRID = (2, 3, 4, 5)
# absorbs rounding when a mean sits exactly on the edge of the band
BAND_TOL = 1e-12
SE_DEFINITION = "sample sd (ddof=1) of per-validation-season mean log scores of the best K / sqrt(n_seasons)"


class SelectionError(RuntimeError):
    pass


@dataclass
class KStats:
    mean: float
    se: float
    season_means: dict[str, float] = field(default_factory=dict)
    n_obs: int = 0
    failed: bool = False


@dataclass
class CVResult:
    method: Method
    target: int
    test_season: str
    per_K: dict[int, KStats]
    selected_K: int
    n_seasons: int
    se_definition: str = SE_DEFINITION


def loso_folds(seasons: Iterable[str]) -> list[tuple[str, list[str]]]:
    """(held-out season, training seasons) for every season, in sorted order."""
    seasons = sorted(set(seasons))
    return [(s, [t for t in seasons if t != s]) for s in seasons]


def one_se_select(per_k: Mapping[int, KStats | tuple[float, float]]) -> int:
    """Smallest K whose mean is at least the best mean minus the best K's standard error."""
    stats = {}
    for k, s in per_k.items():
        if isinstance(s, KStats):
            if s.failed or not math.isfinite(s.mean):
                continue
            stats[k] = (s.mean, s.se)
        else:
            stats[k] = (float(s[0]), float(s[1]))
    if not stats:
        raise SelectionError("no K has valid validation scores")
    best_k = max(sorted(stats), key=lambda k: stats[k][0])
    best_mean, best_se = stats[best_k]
    se = best_se if math.isfinite(best_se) else 0.0
    return min(k for k, (m, _) in stats.items() if m >= best_mean - se - BAND_TOL)


def validation_scores(method: Method, k: int, train: TrainingSet, held_out: TrainingSet,
                      config: FitConfig) -> np.ndarray:
    """Truncated log scores on ``held_out`` of a fit on ``train``."""
    result = fit_warm(method, k, train, config)
    return np.maximum(pointwise_loglik(result.params, held_out, raw=True), LOG_SCORE_FLOOR)


def _fold_task(args):
    return validation_scores(*args)


def loso_cv(
    method: Method | str,
    target: int,
    training: TrainingSet,
    k_grid: Sequence[int] = DEFAULT_K_GRID,
    config: FitConfig = FitConfig(),
    test_season: str = "",
    jobs: int = 1,
) -> CVResult:
    """Leave-one-season-out validation of each K, then the one-standard-error choice.

    The mean for a K pools every validation score across folds; its standard
    error comes from the per-season means.
    """
    method = Method(method)
    if not k_grid:
        raise ValueError("empty K grid")
    folds = loso_folds(training.seasons)
    if len(folds) < 2:
        raise ValueError("leave-one-season-out needs at least two training seasons")
    tasks, index = [], []
    for k in k_grid:
        for held, rest in folds:
            tasks.append((method, k, training.season_subset(rest), training.season_subset([held]), config))
            index.append((k, held))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_fold_task, t) for t in tasks]
            outcomes = []
            for f in futures:
                try:
                    outcomes.append(f.result())
                except Exception as exc:  # noqa: BLE001 - a failed fold only disqualifies its K
                    outcomes.append(exc)
    else:
        outcomes = []
        for t in tasks:
            try:
                outcomes.append(_fold_task(t))
            except Exception as exc:  # noqa: BLE001
                outcomes.append(exc)

    per_k: dict[int, KStats] = {}
    for k in k_grid:
        season_scores = {}
        failed = False
        for (kk, held), out in zip(index, outcomes):
            if kk != k:
                continue
            if isinstance(out, Exception):
                log.warning("%s K=%d fold %s failed: %s", method, k, held, out)
                failed = True
                continue
            season_scores[held] = out
        if failed:
            per_k[k] = KStats(math.nan, math.nan, failed=True)
            continue
        pooled = np.concatenate([season_scores[s] for s in sorted(season_scores)])
        means = {s: math.fsum(v) / v.size for s, v in sorted(season_scores.items())}
        vals = np.array(list(means.values()))
        se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
        per_k[k] = KStats(math.fsum(pooled) / pooled.size, se, means, int(pooled.size))
    selected = one_se_select(per_k)
    return CVResult(method, target, test_season, per_k, selected, len(folds))


CV_COLUMNS = ["method", "target", "test_season", "K", "mean_validation_logscore", "se", "n_obs", "n_seasons",
              "failed", "selected"]


def write_cv(path, results: Iterable[CVResult], header: Sequence[str] = ()) -> None:
    """Long-format table, one row per (method, target, test season, K)."""
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(f"# se: {SE_DEFINITION}\n")
        w = csv.writer(fh)
        w.writerow(CV_COLUMNS)
        for r in results:
            for k, s in sorted(r.per_K.items()):
                w.writerow([r.method.value, r.target, r.test_season, k, repr(s.mean), repr(s.se), s.n_obs,
                            r.n_seasons, int(s.failed), int(k == r.selected_K)])


def write_cv_table(path, results: Iterable[CVResult], header: Sequence[str] = ()) -> None:
    """Wide table: one row per (test season, target), one column per method and K."""
    results = list(results)
    cols = sorted({(r.method.value, k) for r in results for k in r.per_K}, key=lambda c: (c[0].startswith("EW"), c))
    rows: dict[tuple, dict] = {}
    for r in results:
        row = rows.setdefault((r.test_season, r.target), {})
        for k, s in r.per_K.items():
            row[(r.method.value, k)] = f"{s.mean:.2f}" + ("*" if k == r.selected_K else "")
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("# * marks the selected K\n")
        w = csv.writer(fh)
        w.writerow(["test_season", "target"] + [f"{m}{k}" for m, k in cols])
        for key in sorted(rows):
            w.writerow(list(key) + [rows[key].get(c, "") for c in cols])


def read_selected_k(path) -> dict[tuple[str, int, str], int]:
    """(method, target, test season) -> selected K from a long-format CV file."""
    out = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(line for line in fh if not line.startswith("#")):
            if int(r["selected"]):
                out[(r["method"], int(r["target"]), r["test_season"])] = int(r["K"])
    return out
