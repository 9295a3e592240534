"""Maximum likelihood fitting of combination parameters on binned data.

The objective is the mean over observations of

    log[ F(u_j) - F(l_j) ]

where ``F`` is the ensemble CDF and ``j`` the observed bin, so only the two
component CDF values bracketing each observation are needed. Parameters are
optimized on an unconstrained scale: softmax logits (last one pinned at 0)
for the mixture weights and each model-weight row, logs for the beta shapes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .binned import AlignedRecord, BinnedDistribution, check_same_structure
from .combinators import EnsembleParams, Method, ensemble_cdf
from .special import betainc, log_beta

if TYPE_CHECKING:
    from .ingestion import Dataset

log = logging.getLogger(__name__)

LOG_SHAPE_BOUND = math.log(1e3)
_LOGIT_FLOOR = -700.0
_FD_STEP = 1e-6
_TINY_MASS = 1e-300


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 5
    seed: int = 0
    max_iter: int = 500
    rel_tol: float = 1e-8
    floor: float = 1e-10
    jitter: float = 0.1


def binned_loglik(params: EnsembleParams, components: Sequence[BinnedDistribution], obs_bin: int) -> float:
    """Log of the ensemble mass in ``obs_bin``; ``-inf`` if that mass is zero."""
    structure = check_same_structure(components)
    if not 0 <= obs_bin < structure.n_bins:
        raise IndexError(f"bin {obs_bin} outside 0..{structure.n_bins - 1}")
    cdf = ensemble_cdf(components, params)
    mass = cdf[obs_bin + 1] - cdf[obs_bin]
    return math.log(mass) if mass > 0 else -math.inf


def _floored_cumulative(probs: np.ndarray, floor: float) -> np.ndarray:
    p = np.maximum(probs, floor)
    p = p / p.sum()
    cum = np.empty(p.size + 1)
    cum[0] = 0.0
    np.cumsum(p, out=cum[1:])
    cum[-1] = 1.0
    return np.minimum(cum, 1.0)


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Component CDF values at the edges of each observed bin.

    ``lower``/``upper`` (N, M) come from floored component masses and feed
    the optimizer; ``raw_lower``/``raw_upper`` keep the unmodified values.
    """

    lower: np.ndarray
    upper: np.ndarray
    raw_lower: np.ndarray
    raw_upper: np.ndarray
    seasons: np.ndarray
    keys: tuple = ()
    floor: float = 1e-10
    bottom: np.ndarray = field(init=False, repr=False)
    top: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.lower.ndim != 2 or self.lower.shape != self.upper.shape or self.lower.shape[0] == 0:
            raise ValueError("training set needs matching nonempty (N, M) arrays")
        object.__setattr__(self, "bottom", np.all(self.lower == 0.0, axis=1))
        object.__setattr__(self, "top", np.all(self.upper == 1.0, axis=1))

    @classmethod
    def from_records(cls, records: Sequence[AlignedRecord], floor: float = 1e-10) -> TrainingSet:
        if not records:
            raise ValueError("empty training set")
        m = len(records[0].components)
        n = len(records)
        lower, upper = np.empty((n, m)), np.empty((n, m))
        raw_lower, raw_upper = np.empty((n, m)), np.empty((n, m))
        for i, rec in enumerate(records):
            if len(rec.components) != m:
                raise ValueError("every record needs the same number of components")
            j = rec.observation.bin_index
            for k, comp in enumerate(rec.components):
                cum = _floored_cumulative(comp.probs, floor)
                lower[i, k], upper[i, k] = cum[j], cum[j + 1]
                raw = comp.cumulative()
                raw_lower[i, k], raw_upper[i, k] = raw[j], raw[j + 1]
        seasons = np.array([r.season for r in records], dtype=object)
        return cls(lower, upper, raw_lower, raw_upper, seasons, tuple(r.key for r in records), floor)

    @property
    def n_obs(self) -> int:
        return self.lower.shape[0]

    @property
    def n_models(self) -> int:
        return self.lower.shape[1]

    def subset(self, mask) -> TrainingSet:
        mask = np.asarray(mask)
        keys = tuple(np.array(self.keys, dtype=object)[mask]) if self.keys else ()
        return TrainingSet(self.lower[mask], self.upper[mask], self.raw_lower[mask], self.raw_upper[mask],
                           self.seasons[mask], tuple(tuple(k) for k in keys), self.floor)

    def season_subset(self, seasons: Iterable[str]) -> TrainingSet:
        return self.subset(np.isin(self.seasons, list(seasons)))


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = np.concatenate([logits, np.zeros(logits.shape[:-1] + (1,))], axis=-1)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logits(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        lp = np.maximum(np.log(p), _LOGIT_FLOOR)
    return lp[..., :-1] - lp[..., -1:]


class Parameterization:
    """Maps between an unconstrained vector and :class:`EnsembleParams` for one family.

    Vector layout: theta logits (K-1), omega logits (K*(M-1)), log alpha (K), log beta (K);
    blocks that the method fixes are absent.
    """

    def __init__(self, method: Method | str, k: int, m: int):
        self.method = Method(method)
        self.K = k if self.method.mixture else 1
        self.M = m
        self.n_theta = self.K - 1
        self.n_omega = 0 if self.method.equal_weight else self.K * (self.M - 1)
        self.n_shape = self.K if self.method.beta_transformed else 0
        self.size = self.n_theta + self.n_omega + 2 * self.n_shape

    def _split(self, x):
        i = 0
        a = x[i:i + self.n_theta]
        i += self.n_theta
        b = x[i:i + self.n_omega]
        i += self.n_omega
        la = x[i:i + self.n_shape]
        i += self.n_shape
        lb = x[i:i + self.n_shape]
        return a, b, la, lb

    def unpack(self, x) -> EnsembleParams:
        x = np.asarray(x, dtype=float)
        a, b, la, lb = self._split(x)
        theta = _softmax_rows(a)
        if self.method.equal_weight:
            omega = np.full((self.K, self.M), 1.0 / self.M)
        else:
            omega = _softmax_rows(b.reshape(self.K, self.M - 1))
        if self.method.beta_transformed:
            alpha, beta = np.exp(la), np.exp(lb)
        else:
            alpha = beta = np.ones(1)
        return EnsembleParams(self.method, theta, alpha, beta, omega)

    def pack(self, params: EnsembleParams) -> np.ndarray:
        if params.K != self.K or params.M != self.M:
            raise ValueError("parameter shapes do not match this parameterization")
        parts = [_logits(params.theta)]
        if not self.method.equal_weight:
            parts.append(_logits(params.omega).ravel())
        if self.method.beta_transformed:
            parts += [np.log(params.alpha), np.log(params.beta)]
        return np.concatenate(parts)

    def bounds(self):
        return [(None, None)] * (self.n_theta + self.n_omega) + [(-LOG_SHAPE_BOUND, LOG_SHAPE_BOUND)] * (2 * self.n_shape)

    def random(self, rng: np.random.Generator) -> np.ndarray:
        """Dirichlet(1) weights and log-uniform(0.5, 2) beta shapes."""
        theta = rng.dirichlet(np.ones(self.K))
        omega = rng.dirichlet(np.ones(self.M), size=self.K)
        if self.method.equal_weight:
            omega = np.full((self.K, self.M), 1.0 / self.M)
        if self.method.beta_transformed:
            alpha = np.exp(rng.uniform(math.log(0.5), math.log(2.0), self.K))
            beta = np.exp(rng.uniform(math.log(0.5), math.log(2.0), self.K))
        else:
            alpha = beta = np.ones(1)
        return self.pack(EnsembleParams(self.method, theta, alpha, beta, omega))


def _beta_density(alpha, beta, z):
    """Beta densities with shapes (K,) against z (N, K); zero where z sits on 0 or 1."""
    inner = (z > 0.0) & (z < 1.0)
    zz = np.where(inner, z, 0.5)
    lb = log_beta(alpha, beta)
    out = np.exp((alpha - 1.0) * np.log(zz) + (beta - 1.0) * np.log1p(-zz) - lb)
    return np.where(inner, out, 0.0)


def _inner(ts: TrainingSet, omega: np.ndarray, lower, upper):
    zl = np.clip(lower @ omega.T, 0.0, 1.0)
    zu = np.clip(upper @ omega.T, 0.0, 1.0)
    zl[ts.bottom] = 0.0
    zu[ts.top] = 1.0
    return zl, zu


def pointwise_loglik(params: EnsembleParams, ts: TrainingSet, raw: bool = False) -> np.ndarray:
    """Log ensemble mass of each observed bin (``-inf`` where the mass is zero)."""
    lower, upper = (ts.raw_lower, ts.raw_upper) if raw else (ts.lower, ts.upper)
    zl, zu = _inner(ts, params.omega, lower, upper)
    if params.method.beta_transformed:
        d = betainc(params.alpha, params.beta, zu) - betainc(params.alpha, params.beta, zl)
    else:
        d = zu - zl
    p = np.maximum(d, 0.0) @ params.theta
    with np.errstate(divide="ignore"):
        return np.log(p)


def mean_loglik(params: EnsembleParams, ts: TrainingSet, raw: bool = False) -> float:
    """Mean binned log-likelihood over a training set (``-inf`` if any mass is zero)."""
    return float(np.mean(pointwise_loglik(params, ts, raw)))


def _softmax_grad(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the free logits (all but the last) of rows ``p`` given gradient ``g`` w.r.t. ``p``."""
    inner = (p * g).sum(axis=-1, keepdims=True)
    return (p * (g - inner))[..., :-1]


def objective(x: np.ndarray, ts: TrainingSet, par: Parameterization) -> tuple[float, np.ndarray]:
    """Negative mean log-likelihood and its gradient in the unconstrained coordinates.

    Weight gradients are analytic; the beta-shape gradients use central
    differences of the incomplete beta in log-shape space.
    """
    params = par.unpack(x)
    theta, omega, alpha, beta = params.theta, params.omega, params.alpha, params.beta
    zl, zu = _inner(ts, omega, ts.lower, ts.upper)
    bt = par.method.beta_transformed
    if bt:
        # one vectorized call for the value and the central differences in log alpha and log beta
        up, dn = math.exp(_FD_STEP), math.exp(-_FD_STEP)
        a_set = np.stack([alpha, alpha * up, alpha * dn, alpha, alpha])[:, None, None, :]
        b_set = np.stack([beta, beta, beta, beta * up, beta * dn])[:, None, None, :]
        cdf = betainc(a_set, b_set, np.stack([zu, zl])[None])
        diffs = cdf[:, 0] - cdf[:, 1]
        d = np.maximum(diffs[0], 0.0)
    else:
        d = np.maximum(zu - zl, 0.0)
    p = np.maximum(d @ theta, _TINY_MASS)
    n = ts.n_obs
    value = float(np.mean(np.log(p)))
    w = 1.0 / (p * n)

    grads = []
    if par.n_theta:
        g_theta = d.T @ w
        grads.append(_softmax_grad(theta, g_theta))
    if par.n_omega:
        if bt:
            du, dl = _beta_density(alpha, beta, zu), _beta_density(alpha, beta, zl)
        else:
            du = dl = np.ones_like(zu)
        du = np.where(ts.top[:, None], 0.0, du)
        dl = np.where(ts.bottom[:, None], 0.0, dl)
        # (K, M): sum_n w_n theta_k (b(zu_nk) U_nm - b(zl_nk) L_nm)
        g_omega = theta[:, None] * ((du * w[:, None]).T @ ts.upper - (dl * w[:, None]).T @ ts.lower)
        grads.append(_softmax_grad(omega, g_omega).ravel())
    if par.n_shape:
        for hi, lo in ((1, 2), (3, 4)):
            dd = (diffs[hi] - diffs[lo]) / (2 * _FD_STEP)
            grads.append(theta * (dd.T @ w))
    grad = np.concatenate(grads) if grads else np.zeros(0)
    return -value, -grad


@dataclass(frozen=True, eq=False)
class FitResult:
    params: EnsembleParams
    train_mean_logscore: float
    converged: bool
    restarts_used: int
    objective_trace: tuple[float, ...]
    objective: float = float("nan")
    n_obs: int = 0
    best_restart: int = 0

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "train_mean_logscore": self.train_mean_logscore,
            "objective": self.objective,
            "converged": self.converged,
            "restarts_used": self.restarts_used,
            "best_restart": self.best_restart,
            "n_obs": self.n_obs,
            "objective_trace": list(self.objective_trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> FitResult:
        return cls(EnsembleParams.from_dict(d["params"]), d["train_mean_logscore"], d["converged"],
                   d["restarts_used"], tuple(d["objective_trace"]), d.get("objective", float("nan")),
                   d.get("n_obs", 0), d.get("best_restart", 0))


def nests_in(source: EnsembleParams, method: Method, k: int) -> bool:
    """Whether ``source`` is a point of the ``method`` family with ``k`` components."""
    sm = source.method
    if method.equal_weight and not sm.equal_weight:
        return False
    if sm.beta_transformed and not method.beta_transformed:
        return False
    if source.K > 1 and not (method.mixture and source.K == k):
        return False
    return True


def embed(source: EnsembleParams, method: Method, k: int) -> EnsembleParams:
    """Express a nested fit as parameters of a larger family, duplicating its beta components."""
    method = Method(method)
    k = k if method.mixture else 1
    if not nests_in(source, method, k):
        raise ValueError(f"{source.method} does not nest in {method}")
    if source.K == k:
        theta, alpha, beta, omega = source.theta, source.alpha, source.beta, source.omega
    else:
        theta = np.full(k, 1.0 / k)
        alpha = np.repeat(source.alpha, k)
        beta = np.repeat(source.beta, k)
        omega = np.repeat(source.omega, k, axis=0)
    if method.equal_weight:
        omega = np.full((k, source.M), 1.0 / source.M)
    return EnsembleParams(method, theta, alpha, beta, omega)


def _run(x0, ts, par, config):
    trace = [-objective(x0, ts, par)[0]]

    def record(intermediate_result):
        trace.append(-float(intermediate_result.fun))

    res = minimize(
        objective, x0, args=(ts, par), jac=True, method="L-BFGS-B", bounds=par.bounds(), callback=record,
        options={"maxiter": config.max_iter, "ftol": config.rel_tol, "gtol": 1e-12, "maxcor": 20},
    )
    value = -float(res.fun)
    # the last accepted iterate is what the trace must end on
    if trace[-1] != value:
        trace.append(value)
    return value, res.x, bool(res.success) and res.nit < config.max_iter, trace


def fit(
    method: Method | str,
    k: int,
    training: TrainingSet,
    config: FitConfig = FitConfig(),
    warm_starts: Sequence[EnsembleParams] = (),
) -> FitResult:
    """Maximize the mean binned log-likelihood for one method.

    Starts from the equal-weight, identity-transform point, then
    ``config.restarts - 1`` random points, then any ``warm_starts`` (fits of
    nested families, embedded into this one). For mixtures each warm start
    is used once as-is and once with jitter to break the symmetry between
    duplicated components. The best start wins; ties go to the earliest.
    """
    method = Method(method)
    par = Parameterization(method, k, training.n_models)
    if par.size == 0:
        params = par.unpack(np.zeros(0))
        value = mean_loglik(params, training)
        return FitResult(params, mean_loglik(params, training, raw=True), True, 1, (value,), value,
                         training.n_obs, 0)

    rng = np.random.default_rng(config.seed)
    starts = [par.pack(EnsembleParams.default(method, training.n_models, par.K))]
    starts += [par.random(rng) for _ in range(max(config.restarts, 1) - 1)]
    for ws in warm_starts:
        if not nests_in(ws, method, par.K):
            log.debug("skipping warm start %s for %s", ws.method, method)
            continue
        x = par.pack(embed(ws, method, par.K))
        starts.append(x)
        if par.K > 1 and ws.K == 1:
            starts.append(x + rng.normal(0.0, config.jitter, x.size))

    best = None
    for i, x0 in enumerate(starts):
        x0 = np.clip(x0, [b[0] if b[0] is not None else -np.inf for b in par.bounds()],
                     [b[1] if b[1] is not None else np.inf for b in par.bounds()])
        value, x, ok, trace = _run(x0, training, par, config)
        if best is None or value > best[0]:
            best = (value, x, ok, trace, i)
    value, x, ok, trace, idx = best
    params = par.unpack(x)
    if not ok:
        log.warning("%s fit did not converge (best start %d)", method, idx)
    return FitResult(params, mean_loglik(params, training, raw=True), ok, len(starts), tuple(trace), value,
                     training.n_obs, idx)


def fit_warm(method: Method | str, k: int, training: TrainingSet, config: FitConfig = FitConfig()) -> FitResult:
    """Fit ``method``; a mixture is also started from its fitted single-component counterpart."""
    method = Method(method)
    warm = []
    if method.mixture:
        single = Method.EW_BLP if method.equal_weight else Method.BLP
        warm.append(fit(single, 1, training, config).params)
    return fit(method, k, training, config, warm)


FIT_ORDER = (Method.EW_LP, Method.LP, Method.EW_BLP, Method.BLP, Method.EW_BMC, Method.BMC)


def fit_methods(
    training: TrainingSet,
    methods: Iterable[Method | str] = FIT_ORDER,
    k: int | dict = 2,
    config: FitConfig = FitConfig(),
    skip_failures: bool = False,
) -> dict[Method, FitResult]:
    """Fit several methods, smallest family first, warm-starting each from the nested fits already done.

    ``k`` is the mixture size for BMC/EW-BMC, either one int or a per-method dict.
    With ``skip_failures`` a method whose fit raises is logged and left out.
    """
    wanted = {Method(m) for m in methods}
    out: dict[Method, FitResult] = {}
    for method in FIT_ORDER:
        if method not in wanted:
            continue
        km = (k.get(method, k.get(method.value, 2)) if isinstance(k, dict) else k) if method.mixture else 1
        warm = [r.params for r in out.values() if nests_in(r.params, method, km)]
        try:
            out[method] = fit(method, km, training, config, warm)
        except (ValueError, ArithmeticError) as exc:
            if not skip_failures:
                raise
            log.warning("%s fit failed: %s", method, exc)
    return out


def fit_all_targets(
    method: Method | str,
    k: int,
    data: Dataset,
    test_season: str,
    config: FitConfig = FitConfig(),
    targets: Iterable[int] = (1, 2, 3, 4),
) -> dict[int, FitResult]:
    """One fit per target horizon on every season before ``test_season``.

    Targets with no usable training data are logged and left out of the result.
    """
    out = {}
    for target in targets:
        records = data.records(target=target, seasons=data.training_seasons(test_season))
        if not records:
            log.warning("no training data for target %s before %s", target, test_season)
            continue
        try:
            ts = TrainingSet.from_records(records, config.floor)
            out[target] = fit_warm(method, k, ts, config)
        except (ValueError, ArithmeticError) as exc:
            log.warning("fit failed for target %s, test season %s: %s", target, test_season, exc)
    return out
