"""Command line entry point: cross-validate K, fit/forecast/score, calibrate.

    betapool cv        --config run.yaml --out results/
    betapool run       --config run.yaml --out results/
    betapool calibrate --config run.yaml --out results/

Outputs land in ``cv/``, ``params/``, ``forecasts/``, ``scores/`` and
``calibration/`` under ``--out``. Every file starts with ``#`` metadata
lines (config hash, seed, version).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import yaml

from . import __version__
from .binned import AlignedRecord
from .calibration import calibration_report, keyed_pit, write_curve, write_pits
from .combinators import EnsembleParams, Method, combine
from .estimation import FIT_ORDER, FitConfig, FitResult, TrainingSet, fit_methods
from .ingestion import DataError, Dataset, load_dataset
from .scoring import GROUPINGS, ScoreRecord, aggregate, write_aggregate, write_scores
from .selection import CVResult, SelectionError, loso_cv, read_selected_k, write_cv, write_cv_table

log = logging.getLogger("betapool")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_FIT = 0, 1, 2, 3

DEFAULT_TEST_SEASONS = ("2016/2017", "2017/2018", "2018/2019")


class ConfigError(Exception):
    pass


class FitFailure(Exception):
    pass


@dataclass
class RunConfig:
    forecasts: Path
    truth: Path
    models: list[str] | None = None
    locations: list[str] | None = None
    methods: list[Method] = field(default_factory=lambda: list(FIT_ORDER))
    targets: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    test_seasons: list[str] = field(default_factory=lambda: list(DEFAULT_TEST_SEASONS))
    k_grid: list[int] = field(default_factory=lambda: [2, 3, 4, 5])
    k: int | None = None
    seed: int = 0
    jobs: int = 1
    optimizer: FitConfig = field(default_factory=FitConfig)

    def fit_config(self) -> FitConfig:
        return replace(self.optimizer, seed=self.seed)

    def digest(self) -> str:
        d = asdict(self)
        d.pop("jobs")
        d["methods"] = [m.value for m in self.methods]
        blob = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def header(self) -> list[str]:
        return [f"config_hash: {self.digest()}", f"seed: {self.seed}", f"betapool_version: {__version__}"]


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def load_config(args: argparse.Namespace) -> RunConfig:
    """Read the YAML config and apply command line overrides."""
    if not args.config:
        raise ConfigError("--config is required")
    path = Path(args.config)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    data = raw.get("data") or {}
    exp = raw.get("experiment") or {}
    opt = raw.get("optimizer") or {}
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    try:
        cfg = RunConfig(forecasts=resolve(data["forecasts"]), truth=resolve(data["truth"]))
    except KeyError as exc:
        raise ConfigError(f"config is missing data.{exc.args[0]}") from None
    try:
        cfg.models = data.get("models")
        cfg.locations = data.get("locations")
        if "methods" in exp:
            cfg.methods = [Method(m) for m in exp["methods"]]
        if "targets" in exp:
            cfg.targets = [int(t) for t in exp["targets"]]
        if "test_seasons" in exp:
            cfg.test_seasons = [str(s) for s in exp["test_seasons"]]
        if "k_grid" in exp:
            cfg.k_grid = [int(k) for k in exp["k_grid"]]
        if exp.get("k") is not None:
            cfg.k = int(exp["k"])
        cfg.seed = int(exp.get("seed", 0))
        unknown = set(opt) - set(FitConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown optimizer settings {sorted(unknown)}")
        cfg.optimizer = FitConfig(**{k: type(getattr(FitConfig(), k))(v) for k, v in opt.items()})

        if args.methods:
            cfg.methods = [Method(m) for m in _split_list(args.methods)]
        if args.targets:
            cfg.targets = [int(t) for t in _split_list(args.targets)]
        if args.test_seasons:
            cfg.test_seasons = _split_list(args.test_seasons)
        if args.seed is not None:
            cfg.seed = args.seed
        if getattr(args, "k", None) is not None:
            cfg.k = args.k
        if getattr(args, "k_grid", None):
            cfg.k_grid = [int(k) for k in _split_list(args.k_grid)]
        cfg.jobs = max(1, args.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if any(t not in (1, 2, 3, 4) for t in cfg.targets):
        raise ConfigError("targets must be week-ahead horizons 1-4")
    return cfg


def _dataset(cfg: RunConfig) -> Dataset:
    return load_dataset(cfg.forecasts, cfg.truth, cfg.models, cfg.targets, cfg.locations)


def _training(data: Dataset, target: int, test_season: str, floor: float) -> TrainingSet:
    records = data.records(target=target, seasons=data.training_seasons(test_season))
    if not records:
        raise DataError(f"no training data for target {target} before {test_season}")
    return TrainingSet.from_records(records, floor)


def _pool_map(fn: Callable, tasks: list, jobs: int) -> list:
    """Results (or the raised exception) for each task, in task order."""
    out = []
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(fn, *t) for t in tasks]
            for f in futures:
                try:
                    out.append(f.result())
                except Exception as exc:  # noqa: BLE001 - isolated per task
                    out.append(exc)
        return out
    for t in tasks:
        try:
            out.append(fn(*t))
        except Exception as exc:  # noqa: BLE001
            out.append(exc)
    return out


def season_tag(season: str) -> str:
    return season.replace("/", "-")


# cv


def _cv_task(method, target, test_season, ts, k_grid, config):
    return loso_cv(method, target, ts, k_grid, config, test_season)


def cmd_cv(cfg: RunConfig, out: Path, data: Dataset | None = None) -> list[CVResult]:
    data = data or _dataset(cfg)
    methods = [m for m in cfg.methods if m.mixture] or [Method.BMC, Method.EW_BMC]
    tasks = []
    for test_season in cfg.test_seasons:
        for target in cfg.targets:
            ts = _training(data, target, test_season, cfg.optimizer.floor)
            for method in methods:
                tasks.append((method, target, test_season, ts, cfg.k_grid, cfg.fit_config()))
    outcomes = _pool_map(_cv_task, tasks, cfg.jobs)
    results, failures = [], []
    for task, res in zip(tasks, outcomes):
        if isinstance(res, Exception):
            failures.append(f"{task[0]} target {task[1]} {task[2]}: {res}")
        else:
            results.append(res)
    (out / "cv").mkdir(parents=True, exist_ok=True)
    write_cv(out / "cv" / "cv_results.csv", results, cfg.header())
    write_cv_table(out / "cv" / "cv_table.csv", results, cfg.header())
    if failures:
        raise FitFailure("; ".join(failures))
    return results


# run


def _fit_task(target, test_season, ts, methods, k_by_method, config):
    return fit_methods(ts, methods, k_by_method, config, skip_failures=True)


def _k_lookup(cfg: RunConfig, out: Path) -> Callable[[Method, int, str], int]:
    if cfg.k is not None:
        return lambda method, target, season: cfg.k
    path = out / "cv" / "cv_results.csv"
    if not any(m.mixture for m in cfg.methods):
        return lambda method, target, season: 1
    if not path.is_file():
        raise ConfigError(f"BMC methods need K: give experiment.k / --k or run `betapool cv` first ({path} missing)")
    table = read_selected_k(path)

    def lookup(method, target, season):
        try:
            return table[(method.value, target, season)]
        except KeyError:
            raise ConfigError(f"no CV selection for {method} target {target} {season}") from None

    return lookup


def _params_path(out: Path, method: Method, target: int, season: str) -> Path:
    return out / "params" / f"{method.value}_{target}wk_{season_tag(season)}.json"


def cmd_run(cfg: RunConfig, out: Path, data: Dataset | None = None) -> dict:
    """Fit every method per (target, test season), forecast the test season and score it."""
    k_of = _k_lookup(cfg, out)
    data = data or _dataset(cfg)
    tasks = []
    for test_season in cfg.test_seasons:
        for target in cfg.targets:
            ts = _training(data, target, test_season, cfg.optimizer.floor)
            ks = {m: k_of(m, target, test_season) for m in cfg.methods if m.mixture}
            tasks.append((target, test_season, ts, cfg.methods, ks, cfg.fit_config()))
    outcomes = _pool_map(_fit_task, tasks, cfg.jobs)

    for sub in ("params", "forecasts", "scores"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    header = cfg.header()
    scores: list[ScoreRecord] = []
    summary = []
    failures = []
    forecast_rows: dict[str, list] = {}
    fits: dict[tuple, FitResult] = {}
    for task, res in zip(tasks, outcomes):
        target, test_season = task[0], task[1]
        if isinstance(res, Exception):
            failures.append(f"target {target} {test_season}: {res}")
            continue
        for method in cfg.methods:
            if method not in res:
                failures.append(f"{method} target {target} {test_season}")
                continue
            fits[(method, target, test_season)] = res[method]
        test_records = data.records(target=target, seasons=[test_season])
        for method, fr in res.items():
            label = method.label(fr.params.K)
            doc = {"metadata": header, "method": method.value, "label": label, "target": target,
                   "test_season": test_season, **fr.to_dict()}
            _params_path(out, method, target, test_season).write_text(json.dumps(doc, indent=1) + "\n")
            summary.append([label, target, test_season, fr.params.K, repr(fr.train_mean_logscore), fr.n_obs,
                            int(fr.converged), fr.restarts_used])
            rows = forecast_rows.setdefault(method.value, [])
            for rec in test_records:
                ens = combine(rec.components, fr.params)
                scores.append(ScoreRecord.score(method.value, ens, rec.observation))
                obs = rec.observation
                for lo, hi, p in zip(ens.structure.lower, ens.structure.upper, ens.probs):
                    rows.append([obs.location, obs.season, obs.epiweek, obs.target, repr(float(lo)),
                                 repr(float(hi)), repr(float(p))])

    with open(out / "params" / "summary.csv", "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["method", "target", "test_season", "K", "train_mean_logscore", "n_obs", "converged",
                    "restarts_used"])
        w.writerows(summary)
    for method, rows in forecast_rows.items():
        with open(out / "forecasts" / f"{method}.csv", "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["location", "season", "epiweek", "target", "bin_start_incl", "bin_end_notincl", "value"])
            w.writerows(rows)
    write_scores(out / "scores" / "scores.csv", scores, header)
    tables = {}
    for name, by in GROUPINGS.items():
        tables[name] = aggregate(scores, by)
        write_aggregate(out / "scores" / f"{name}.csv", tables[name], by, header)
    if failures:
        raise FitFailure("failed fits: " + "; ".join(failures))
    return {"fits": fits, "scores": scores, "tables": tables}


# calibrate


def _load_params(out: Path, cfg: RunConfig) -> dict[tuple[Method, int, str], EnsembleParams]:
    found = {}
    for method in cfg.methods:
        for target in cfg.targets:
            for season in cfg.test_seasons:
                p = _params_path(out, method, target, season)
                if p.is_file():
                    found[(method, target, season)] = FitResult.from_dict(json.loads(p.read_text())).params
    return found


def _pits(records: Iterable[AlignedRecord], params: EnsembleParams, seed: int, label: str, **extra):
    return [keyed_pit(combine(r.components, params), r.observation, seed, label, **extra) for r in records]


def cmd_calibrate(cfg: RunConfig, out: Path, data: Dataset | None = None) -> list:
    """PIT values, probability-plot curves and Cramer distances for the test and training periods."""
    params = _load_params(out, cfg)
    if not params:
        raise ConfigError(f"no fitted parameters under {out / 'params'}; run `betapool run` first")
    data = data or _dataset(cfg)
    pits = []
    for (method, target, season), p in sorted(params.items(), key=lambda kv: (kv[0][0].value, *kv[0][1:])):
        label = method.label(p.K)
        pits += _pits(data.records(target=target, seasons=[season]), p, cfg.seed, label,
                      period="test", fit_season=season)
        pits += _pits(data.records(target=target, seasons=data.training_seasons(season)), p, cfg.seed, label,
                      period="train", fit_season=season)

    cal = out / "calibration"
    (cal / "curves").mkdir(parents=True, exist_ok=True)
    header = cfg.header()
    write_pits(cal / "pits.csv", pits, header)
    report = []
    for period in ("test", "train"):
        subset = [p for p in pits if p.period == period]
        if not subset:
            continue
        # training PITs of different fits overlap, so seasons there mean the fit's test season
        season_field = "season" if period == "test" else "fit_season"
        rows = calibration_report(subset, [("method", "target"), ("method", "target", season_field)])
        for row in rows:
            tag = "_".join(season_tag(str(v)) for v in row.group.values())
            path = cal / "curves" / f"{period}_{tag}.csv"
            write_curve(path, row.cdf, header)
            row.curve_path = str(path.relative_to(out))
            report.append((period, row))
    with open(cal / "cramer.csv", "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["period", "method", "target", "season", "n", "cramer_distance", "curve_path"])
        for period, row in report:
            g = row.group
            season = g.get("season", g.get("fit_season", "all"))
            w.writerow([period, g["method"], g["target"], season, row.n, repr(row.cramer_distance), row.curve_path])
    return report


# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="betapool", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("cv", "leave-one-season-out selection of K for BMC and EW-BMC"),
                        ("run", "fit, forecast and score every method"),
                        ("calibrate", "PIT, probability-plot and Cramer distance reports")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--methods")
        p.add_argument("--targets")
        p.add_argument("--test-seasons")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "run":
            p.add_argument("--k", type=int, help="number of beta components, instead of CV results")
        if name == "cv":
            p.add_argument("--k-grid")
    return parser


COMMANDS = {"cv": cmd_cv, "run": cmd_run, "calibrate": cmd_calibrate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitFailure, SelectionError) as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
