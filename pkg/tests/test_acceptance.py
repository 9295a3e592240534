"""Acceptance criteria, one test per criterion.

Each test prints a ``[criterion N] PASS`` or ``FAIL`` line with the measured
numbers, then asserts. Criterion 7 needs the public FluSight Network archive
and runs only when ``BETAPOOL_FLUSIGHT_CONFIG`` names a config file for it.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad

from synth import calibrated_pair_records, random_components, simulate_from_ensemble
from test_selection import PUBLISHED_CV_SCORES, published_cells

from betapool.calibration import cramer_distance, empirical_cdf, pit
from betapool.combinators import EnsembleParams, Method, combine, combine_bmc, combine_lp
from betapool.estimation import FitConfig, TrainingSet, fit, fit_methods
from betapool.selection import loso_folds, one_se_select
from betapool.special import BetaParams, beta_cdf, betainc, log_beta


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def test_criterion_1_nesting_identities(capsys):
    rng = np.random.default_rng(20240101)
    worst_lp = worst_bmc = worst_ew = worst_sum = 0.0
    for _ in range(1000):
        n_bins, m = int(rng.integers(2, 11)), int(rng.integers(1, 6))
        comps = random_components(rng, n_bins, m, concentration=float(rng.choice([0.1, 1.0, 10.0])))
        w = rng.dirichlet(np.ones(m))
        a, b = np.exp(rng.uniform(-2.5, 2.5, 2))
        lp = combine_lp(comps, w).probs
        blp1 = combine_bmc(comps, EnsembleParams.beta_linear_pool(w, 1.0, 1.0)).probs
        blp = combine_bmc(comps, EnsembleParams.beta_linear_pool(w, a, b)).probs
        bmc1 = combine_bmc(comps, EnsembleParams.beta_mixture([1.0], [a], [b], [w])).probs
        ew = np.full(m, 1.0 / m)
        ew_pairs = [
            (combine(comps, EnsembleParams.linear_pool(ew)).probs,
             combine(comps, EnsembleParams.equal_weight_linear_pool(m)).probs),
            (combine(comps, EnsembleParams.beta_linear_pool(ew, a, b)).probs,
             combine(comps, EnsembleParams.equal_weight_beta_linear_pool(m, a, b)).probs),
            (combine(comps, EnsembleParams.beta_mixture([0.3, 0.7], [a, b], [b, a], [ew, ew])).probs,
             combine(comps, EnsembleParams.equal_weight_beta_mixture([0.3, 0.7], [a, b], [b, a], m)).probs),
        ]
        worst_lp = max(worst_lp, np.max(np.abs(blp1 - lp)))
        worst_bmc = max(worst_bmc, np.max(np.abs(bmc1 - blp)))
        worst_ew = max(worst_ew, max(np.max(np.abs(x - y)) for x, y in ew_pairs))
        outs = [lp, blp1, blp, bmc1] + [v for pair in ew_pairs for v in pair]
        worst_sum = max(worst_sum, max(abs(o.sum() - 1.0) for o in outs))
    ok = worst_lp <= 1e-12 and worst_bmc <= 1e-12 and worst_ew <= 1e-12 and worst_sum <= 1e-9
    verdict(capsys, 1, ok, f"1000 instances; max |BLP(1,1)-LP|={worst_lp:.2e}, |BMC1-BLP|={worst_bmc:.2e}, "
                           f"|weighted(1/M)-EW|={worst_ew:.2e}, |sum-1|={worst_sum:.2e}")


def _quad_cdf(a, b, x):
    val, _ = quad(lambda t: (1.0 - t) ** (b - 1.0), 0.0, x, weight="alg", wvar=(a - 1.0, 0.0),
                  epsabs=1e-14, epsrel=1e-13, limit=200)
    return math.exp(-log_beta(a, b)) * val


def test_criterion_2_special_function(capsys):
    shapes = (0.5, 1.0, 2.0, 5.0, 10.0)
    xs = [round(0.01 * i, 2) for i in range(1, 100)]
    worst_quad = max(abs(beta_cdf(BetaParams(a, b), x) - _quad_cdf(a, b, x)) for a in shapes for b in shapes for x in xs)
    rng = np.random.default_rng(7)
    a = np.exp(rng.uniform(math.log(0.05), math.log(50), 5000))
    b = np.exp(rng.uniform(math.log(0.05), math.log(50), 5000))
    x = rng.integers(0, 2**30, 5000) / 2**30
    worst_sym = float(np.max(np.abs(betainc(a, b, x) - (1.0 - betainc(b, a, 1.0 - x)))))
    half = beta_cdf(BetaParams(2, 3), 0.5)
    ok = worst_quad <= 1e-8 and worst_sym <= 1e-12 and abs(half - 0.6875) <= 1e-10
    verdict(capsys, 2, ok, f"max |I - quadrature|={worst_quad:.2e} over 25x99 grid; max symmetry gap={worst_sym:.2e}; "
                           f"I_0.5(2,3)={half!r}")


def test_criterion_3_likelihood_dominance(capsys):
    start = time.perf_counter()
    slack = 1e-6
    worst = math.inf
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        m, k = int(rng.integers(2, 5)), int(rng.integers(1, 3))
        truth = EnsembleParams.beta_mixture(rng.dirichlet(np.ones(k)), np.exp(rng.uniform(-1, 1.2, k)),
                                            np.exp(rng.uniform(-1, 1.2, k)), rng.dirichlet(np.ones(m), size=k))
        ts = TrainingSet.from_records(simulate_from_ensemble(truth, int(rng.integers(100, 300)), seed=seed))
        v = {mm: r.train_mean_logscore for mm, r in fit_methods(ts, k=2, config=FitConfig(seed=seed)).items()}
        gaps = [v[Method.BLP] - v[Method.LP], v[Method.BMC] - v[Method.BLP], v[Method.LP] - v[Method.EW_LP],
                v[Method.BLP] - v[Method.EW_BLP], v[Method.BMC] - v[Method.EW_BMC]]
        worst = min(worst, min(gaps))
    elapsed = time.perf_counter() - start
    ok = worst >= -slack and elapsed < 300
    verdict(capsys, 3, ok, f"20 datasets; smallest nested gap={worst:.3e} (slack {slack:g}); runtime {elapsed:.0f}s")


def test_criterion_4_parameter_recovery(capsys):
    start = time.perf_counter()
    truth = EnsembleParams.beta_linear_pool([0.3, 0.7], 2.0, 3.0)
    ts = TrainingSet.from_records(simulate_from_ensemble(truth, 5000, seed=0))
    p = fit(Method.BLP, 1, ts, FitConfig()).params
    elapsed = time.perf_counter() - start
    w, a, b = p.omega[0, 0], p.alpha[0], p.beta[0]
    ok = abs(w - 0.3) <= 0.05 and abs(a / 2 - 1) <= 0.15 and abs(b / 3 - 1) <= 0.15 and elapsed < 120
    verdict(capsys, 4, ok, f"omega_1={w:.4f} (0.3), alpha={a:.4f} (2), beta={b:.4f} (3); runtime {elapsed:.0f}s")


def _quad_cramer(vals):
    cdf = empirical_cdf(vals)
    pts = sorted({float(v) for v in vals if 0 < v < 1})
    val, _ = quad(lambda t: (float(cdf(t)) - t) ** 2, 0, 1, points=pts or None, limit=max(100, 4 * len(pts)),
                  epsabs=1e-13, epsrel=1e-12)
    return val


def _lp_slope(seed, n=500):
    rng = np.random.default_rng(seed)
    vals = [pit(combine_lp(r.components, [0.5, 0.5]), r.observation, rng).value
            for r in calibrated_pair_records(n, seed)]
    f = empirical_cdf(vals)
    return float(f(0.67) - f(0.33)) / 0.34


def test_criterion_5_calibration(capsys):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 50))
        vals = rng.beta(rng.uniform(0.3, 3), rng.uniform(0.3, 3), n)
        worst = max(worst, abs(cramer_distance(vals) - _quad_cramer(vals)))
    single = cramer_distance([0.5])
    slopes = [_lp_slope(seed) for seed in range(100)]
    over = sum(s > 1 for s in slopes)
    ok = worst <= 1e-8 and abs(single - 1 / 12) <= 1e-12 and over >= 95
    verdict(capsys, 5, ok, f"max |closed form - quadrature|={worst:.2e} on 200 sets; single 0.5 -> {single!r}; "
                           f"LP slope over [0.33, 0.67] > 1 in {over}/100 (median {np.median(slopes):.2f})")


def test_criterion_6_selection(capsys):
    picks = []
    for extra in (0.0, 1e-4, 0.005, 0.02, 0.1):
        for _, _, means in published_cells():
            se = max(means.values()) - means[2] + extra
            picks.append(one_se_select({k: (v, se) for k, v in means.items()}))
    table_ok = all(k == 2 for k in picks) and len(PUBLISHED_CV_SCORES) == 12

    rng = np.random.default_rng(6)
    parsimony_ok = folds_ok = True
    for _ in range(2000):
        ks = sorted(rng.choice(np.arange(1, 9), size=int(rng.integers(1, 6)), replace=False).tolist())
        means = {k: float(rng.choice([-2.5, -2.6, rng.uniform(-4, -2)])) for k in ks}
        se = float(rng.choice([0.0, rng.uniform(0, 0.5)]))
        chosen = one_se_select({k: (m, se) for k, m in means.items()})
        best = max(means.values())
        parsimony_ok &= means[chosen] >= best - se - 1e-12
        parsimony_ok &= not any(k < chosen and means[k] >= means[chosen] for k in ks)
        parsimony_ok &= not any(k < chosen and means[k] >= best - se for k in ks)
        seasons = [f"{y}/{y + 1}" for y in rng.integers(2005, 2016, size=int(rng.integers(1, 20)))]
        folds = loso_folds(seasons)
        held = [h for h, _ in folds]
        folds_ok &= sorted(held) == sorted(set(seasons)) and len(held) == len(set(held))
        folds_ok &= all(h not in rest and sorted(rest + [h]) == sorted(set(seasons)) for h, rest in folds)
    ok = table_ok and parsimony_ok and folds_ok
    verdict(capsys, 6, ok, f"published grid: {sum(k == 2 for k in picks)}/{len(picks)} selections are K=2 "
                           f"(24 cells x 5 se levels); parsimony {'ok' if parsimony_ok else 'violated'}; "
                           f"fold partition {'ok' if folds_ok else 'violated'} on 2000 random instances")


FLUSIGHT_CONFIG = os.environ.get("BETAPOOL_FLUSIGHT_CONFIG")


@pytest.mark.slow
def test_criterion_7_flusight_reproduction(capsys, tmp_path):
    import csv

    from betapool.cli import main

    if not FLUSIGHT_CONFIG:
        with capsys.disabled():
            print("\n[criterion 7] SKIP: needs the FluSight Network archive; set BETAPOOL_FLUSIGHT_CONFIG")
        pytest.skip("set BETAPOOL_FLUSIGHT_CONFIG to a config for the FluSight archive")
    out = Path(os.environ.get("BETAPOOL_FLUSIGHT_OUT", tmp_path))
    jobs = os.environ.get("BETAPOOL_JOBS", "1")
    for cmd in ("cv", "run"):
        assert main([cmd, "--config", FLUSIGHT_CONFIG, "--out", str(out), "--jobs", jobs]) == 0

    def table(path):
        with open(path, newline="") as fh:
            return list(csv.DictReader(line for line in fh if not line.startswith("#")))

    overall = {r["method"]: float(r["mean_log_score"]) for r in table(out / "scores" / "overall.csv")}
    expected = {"BMC": -3.02, "BLP": -3.03, "LP": -3.06}
    score_gaps = {m: overall[m] - v for m, v in expected.items()}
    cv = {(r["method"], int(r["target"]), r["test_season"], int(r["K"])): float(r["mean_validation_logscore"])
          for r in table(out / "cv" / "cv_results.csv")}
    cell_gaps = []
    for (season, target), rows in PUBLISHED_CV_SCORES.items():
        for method, means in zip(("BMC", "EW-BMC"), rows):
            for k, v in zip((2, 3, 4, 5), means):
                cell_gaps.append(abs(cv[(method, target, season, k)] - v))
    ok = all(abs(g) <= 0.05 for g in score_gaps.values()) and max(cell_gaps) <= 0.05
    verdict(capsys, 7, ok, "overall " + ", ".join(f"{m}={overall[m]:.3f} ({expected[m]})" for m in expected)
            + f"; worst validation cell gap {max(cell_gaps):.3f}")
