"""Linear pool, beta-transformed linear pool and finite beta mixture combination on bins.

All three are instances of one CDF transform evaluated at the bin edges::

    F(edge) = sum_k theta_k * I(sum_m omega_km * F_m(edge); alpha_k, beta_k)

and an ensemble bin mass is the difference of that CDF across the bin.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .binned import BinnedDistribution, check_same_structure
from .special import betainc

SIMPLEX_TOL = 1e-9


class Method(str, enum.Enum):
    LP = "LP"
    EW_LP = "EW-LP"
    BLP = "BLP"
    EW_BLP = "EW-BLP"
    BMC = "BMC"
    EW_BMC = "EW-BMC"

    @property
    def equal_weight(self) -> bool:
        return self.value.startswith("EW-")

    @property
    def beta_transformed(self) -> bool:
        return self not in (Method.LP, Method.EW_LP)

    @property
    def mixture(self) -> bool:
        return self in (Method.BMC, Method.EW_BMC)

    @property
    def weighted(self) -> Method:
        return Method(self.value[3:]) if self.equal_weight else self

    @property
    def equal_weighted(self) -> Method:
        return self if self.equal_weight else Method("EW-" + self.value)

    def label(self, k: int | None = None) -> str:
        return f"{self.value}{k}" if self.mixture and k is not None else self.value

    def __str__(self):
        return self.value


class InvalidParamsError(ValueError):
    pass


def _simplex(v: np.ndarray, what: str) -> None:
    if np.any(v < 0) or np.any(np.abs(v.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise InvalidParamsError(f"{what} must lie on the probability simplex")


@dataclass(frozen=True, eq=False)
class EnsembleParams:
    """Parameters of one combination.

    ``theta`` has shape (K,), ``alpha`` and ``beta`` (K,), ``omega`` (K, M);
    each row of ``omega`` holds the model weights of one beta component.
    """

    method: Method
    theta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        method = Method(self.method)
        theta = np.atleast_1d(np.array(self.theta, dtype=float))
        alpha = np.atleast_1d(np.array(self.alpha, dtype=float))
        beta = np.atleast_1d(np.array(self.beta, dtype=float))
        omega = np.atleast_2d(np.array(self.omega, dtype=float))
        k = theta.size
        if alpha.shape != (k,) or beta.shape != (k,) or omega.shape[0] != k or omega.ndim != 2:
            raise InvalidParamsError("theta, alpha, beta and omega disagree on K")
        if omega.shape[1] < 1:
            raise InvalidParamsError("need at least one model weight")
        _simplex(theta, "theta")
        _simplex(omega, "each omega row")
        if not (np.all(alpha > 0) and np.all(beta > 0) and np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise InvalidParamsError("beta parameters must be positive and finite")
        m = omega.shape[1]
        if method.equal_weight and np.any(omega != 1.0 / m):
            raise InvalidParamsError(f"{method} requires every model weight to equal 1/M")
        if not method.mixture and k != 1:
            raise InvalidParamsError(f"{method} has a single beta component")
        if not method.beta_transformed and (alpha[0] != 1.0 or beta[0] != 1.0):
            raise InvalidParamsError(f"{method} fixes alpha = beta = 1")
        for name, arr in (("theta", theta), ("alpha", alpha), ("beta", beta), ("omega", omega)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "method", method)

    @property
    def K(self) -> int:
        return self.theta.size

    @property
    def M(self) -> int:
        return self.omega.shape[1]

    # constructors for each family

    @classmethod
    def linear_pool(cls, weights) -> EnsembleParams:
        return cls(Method.LP, [1.0], [1.0], [1.0], [weights])

    @classmethod
    def equal_weight_linear_pool(cls, n_models: int) -> EnsembleParams:
        return cls(Method.EW_LP, [1.0], [1.0], [1.0], np.full((1, n_models), 1.0 / n_models))

    @classmethod
    def beta_linear_pool(cls, weights, alpha: float, beta: float) -> EnsembleParams:
        return cls(Method.BLP, [1.0], [alpha], [beta], [weights])

    @classmethod
    def equal_weight_beta_linear_pool(cls, n_models: int, alpha: float, beta: float) -> EnsembleParams:
        return cls(Method.EW_BLP, [1.0], [alpha], [beta], np.full((1, n_models), 1.0 / n_models))

    @classmethod
    def beta_mixture(cls, theta, alpha, beta, omega) -> EnsembleParams:
        return cls(Method.BMC, theta, alpha, beta, omega)

    @classmethod
    def equal_weight_beta_mixture(cls, theta, alpha, beta, n_models: int) -> EnsembleParams:
        k = np.atleast_1d(theta).size
        return cls(Method.EW_BMC, theta, alpha, beta, np.full((k, n_models), 1.0 / n_models))

    @classmethod
    def default(cls, method: Method | str, n_models: int, k: int = 1) -> EnsembleParams:
        """Equal weights and the identity transform: the EW-LP point of any family."""
        method = Method(method)
        k = k if method.mixture else 1
        return cls(method, np.full(k, 1.0 / k), np.ones(k), np.ones(k), np.full((k, n_models), 1.0 / n_models))

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "K": self.K,
            "M": self.M,
            "theta": self.theta.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "omega": self.omega.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EnsembleParams:
        return cls(Method(d["method"]), d["theta"], d["alpha"], d["beta"], d["omega"])

    def __eq__(self, other):
        if not isinstance(other, EnsembleParams):
            return NotImplemented
        return self.method == other.method and all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in ("theta", "alpha", "beta", "omega")
        )

    __hash__ = None


def transform_cdf(cum: np.ndarray, params: EnsembleParams) -> np.ndarray:
    """Ensemble CDF from component CDF values.

    Args:
        cum: component CDF values with models on the first axis, shape (M, ...).
        params: combination parameters.

    Returns:
        Array of shape ``cum.shape[1:]``.
    """
    cum = np.asarray(cum, dtype=float)
    if cum.shape[0] != params.M:
        raise InvalidParamsError(f"params expect {params.M} models, got {cum.shape[0]}")
    inner = np.tensordot(params.omega, cum, axes=(1, 0))
    np.clip(inner, 0.0, 1.0, out=inner)
    if not params.method.beta_transformed:
        return inner[0]
    tail = (1,) * (inner.ndim - 1)
    b = betainc(params.alpha.reshape((-1,) + tail), params.beta.reshape((-1,) + tail), inner)
    return np.tensordot(params.theta, b, axes=(0, 0))


def _component_cdfs(components: Sequence[BinnedDistribution]) -> np.ndarray:
    check_same_structure(components)
    return np.stack([c.cumulative() for c in components])


def ensemble_cdf(components: Sequence[BinnedDistribution], params: EnsembleParams) -> np.ndarray:
    """Ensemble CDF at all ``I + 1`` bin edges, pinned to 0 and 1 at the ends."""
    cdf = transform_cdf(_component_cdfs(components), params)
    cdf[0] = 0.0
    cdf[-1] = 1.0
    return cdf


def ensemble_cdf_at(components: Sequence[BinnedDistribution], params: EnsembleParams, edge_index: int) -> float:
    structure = check_same_structure(components)
    if not 0 <= edge_index <= structure.n_bins:
        raise IndexError(f"edge index {edge_index} outside 0..{structure.n_bins}")
    if edge_index == 0:
        return 0.0
    if edge_index == structure.n_bins:
        return 1.0
    cum = np.array([[c.cumulative()[edge_index]] for c in components])
    return float(transform_cdf(cum, params)[0])


def _masses_from_cdf(cdf: np.ndarray) -> np.ndarray:
    probs = np.diff(cdf)
    if np.any(probs < -1e-9):
        raise ArithmeticError("ensemble CDF decreased between bin edges")
    # cancellation noise in adjacent CDF values
    probs = np.maximum(probs, 0.0)
    total = probs.sum()
    return probs / total if total != 1.0 else probs


def combine_lp(components: Sequence[BinnedDistribution], weights) -> BinnedDistribution:
    """Linear pool: bin ``j`` receives ``sum_m w_m P_mj``."""
    structure = check_same_structure(components)
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != len(components):
        raise InvalidParamsError(f"{len(components)} components but {w.size} weights")
    _simplex(w, "weights")
    probs = w @ np.stack([c.probs for c in components])
    probs = np.maximum(probs, 0.0)
    return BinnedDistribution(structure, probs / probs.sum())


def combine_bmc(components: Sequence[BinnedDistribution], params: EnsembleParams) -> BinnedDistribution:
    """Beta mixture combination (BLP when K = 1) as bin masses on the components' grid."""
    structure = check_same_structure(components)
    return BinnedDistribution(structure, _masses_from_cdf(ensemble_cdf(components, params)))


def combine(components: Sequence[BinnedDistribution], params: EnsembleParams) -> BinnedDistribution:
    if params.method.beta_transformed:
        return combine_bmc(components, params)
    return combine_lp(components, params.omega[0])
