import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synth import normal_binned  # noqa: E402

from betapool.binned import BinStructure  # noqa: E402
from betapool.ingestion import (  # noqa: E402
    calendar_week,
    submission_from_distributions,
    target_week,
    write_submission,
    write_truth,
)

MODELS = ("alpha_model", "beta_model", "gamma_model")
MODEL_BIAS = {"alpha_model": -0.3, "beta_model": 0.4, "gamma_model": 0.0}
MODEL_SD = {"alpha_model": 0.4, "beta_model": 0.9, "gamma_model": 1.5}
SEASONS = ("2013/2014", "2014/2015", "2015/2016")
LOCATIONS = ("US National", "HHS Region 1")
WEEKS = (40, 41, 42, 43, 44, 45)


def _wili(location: str, season: str, week: int) -> float:
    first = int(season[:4])
    t = week - 40 if week >= 40 else week + 13
    amp = 2.0 + 0.5 * (first % 3) + (0.7 if location == "US National" else 0.0)
    return round(1.0 + amp * math.exp(-((t - 10) / 5.0) ** 2), 1) + 0.05


def write_archive(root: Path, seed: int = 3) -> tuple[Path, Path]:
    """Tiny FluSight-like archive: 3 models, 3 seasons, 2 locations, 6 forecast weeks."""
    rng = np.random.default_rng(seed)
    structure = BinStructure.flusight()
    truth = {}
    for season in SEASONS:
        for loc in LOCATIONS:
            for w in list(range(40, 53)) + list(range(1, 21)):
                truth[(loc, season, w)] = _wili(loc, season, w)
    fdir = root / "component-models"
    for model in MODELS:
        (fdir / model).mkdir(parents=True, exist_ok=True)
        for season in SEASONS:
            for week in WEEKS:
                dists = {}
                for loc in LOCATIONS:
                    for h in (1, 2, 3, 4):
                        ts, tw = target_week(season, week, h)
                        centre = truth[(loc, ts, tw)] + MODEL_BIAS[model] + rng.normal(0, 0.3)
                        dists[(loc, h)] = normal_binned(structure, centre, MODEL_SD[model] * (1 + 0.2 * h))
                year, _ = calendar_week(season, week)
                sub = submission_from_distributions(model, year, week, dists)
                write_submission(fdir / model / f"EW{week:02d}-{year}-{model}.csv", sub)
    truth_path = root / "truth.csv"
    write_truth(truth_path, truth)
    return fdir, truth_path


@pytest.fixture(scope="session")
def archive(tmp_path_factory):
    root = tmp_path_factory.mktemp("archive")
    return write_archive(root)
