"""Beta distribution CDF and density.

The CDF is the regularized incomplete beta function ``I_x(a, b)``, evaluated
with the modified Lentz continued fraction. For ``x`` above the mean-ish
switch point ``(a + 1) / (a + b + 2)`` the complementary form
``1 - I_{1-x}(b, a)`` is used so the fraction converges quickly.
Everything is vectorized over ``x`` (and broadcasts over ``a``, ``b``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 2000


class BoundaryDensityWarning(RuntimeWarning):
    """Density requested at 0 or 1 where it diverges; a capped value was returned."""


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0) or not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError(f"beta parameters must be positive, got ({self.alpha}, {self.beta})")


def _check_params(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~(a > 0)) or np.any(~(b > 0)) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("beta parameters must be positive and finite")
    return a, b


_lgamma = np.frompyfunc(math.lgamma, 1, 1)


def log_beta(a, b):
    """``log B(a, b)`` via ``lgamma``."""
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        a, b = float(a), float(b)
        return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return (_lgamma(a) + _lgamma(b) - _lgamma(a + b)).astype(float)


def _betacf(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Continued fraction for the incomplete beta; inputs are flat arrays of equal size."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _MAX_ITER + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        aa_, bb_, xx = a[idx], b[idx], x[idx]
        cc, dd = c[idx], d[idx]
        m2 = 2.0 * m
        num = m * (bb_ - m) * xx / ((qam[idx] + m2) * (aa_ + m2))
        dd = 1.0 + num * dd
        dd = np.where(np.abs(dd) < _TINY, _TINY, dd)
        cc = 1.0 + num / cc
        cc = np.where(np.abs(cc) < _TINY, _TINY, cc)
        dd = 1.0 / dd
        hh = h[idx] * dd * cc
        num = -(aa_ + m) * (qab[idx] + m) * xx / ((aa_ + m2) * (qap[idx] + m2))
        dd = 1.0 + num * dd
        dd = np.where(np.abs(dd) < _TINY, _TINY, dd)
        cc = 1.0 + num / cc
        cc = np.where(np.abs(cc) < _TINY, _TINY, cc)
        dd = 1.0 / dd
        delta = dd * cc
        hh = hh * delta
        c[idx], d[idx], h[idx] = cc, dd, hh
        active[idx] = np.abs(delta - 1.0) >= _EPS
    else:
        if np.any(active):
            warnings.warn("incomplete beta continued fraction did not converge", RuntimeWarning, stacklevel=3)
    return h


def betainc(a, b, x):
    """Regularized incomplete beta ``I_x(a, b)`` for ``0 <= x <= 1``.

    ``a`` and ``b`` broadcast against ``x``. Returns a float for scalar input.
    """
    a, b = _check_params(a, b)
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise ValueError("x must lie in [0, 1]")
    scalar = x.ndim == 0 and a.ndim == 0 and b.ndim == 0
    # the normalizer only depends on the shapes, usually far fewer than the x values
    lb = log_beta(a, b)
    a, b, lb, x = np.broadcast_arrays(a, b, lb, x)
    shape = x.shape
    a, b, lb, x = (v.ravel().astype(float) for v in (a, b, lb, x))
    out = np.where(x >= 1.0, 1.0, 0.0)
    inner = (x > 0.0) & (x < 1.0)
    if np.any(inner):
        ai, bi, xi = a[inner], b[inner], x[inner]
        log_front = ai * np.log(xi) + bi * np.log1p(-xi) - lb[inner]
        front = np.exp(log_front)
        direct = xi < (ai + 1.0) / (ai + bi + 2.0)
        res = np.empty_like(xi)
        if np.any(direct):
            j = direct
            res[j] = front[j] * _betacf(ai[j], bi[j], xi[j]) / ai[j]
        if np.any(~direct):
            j = ~direct
            res[j] = 1.0 - front[j] * _betacf(bi[j], ai[j], 1.0 - xi[j]) / bi[j]
        out[inner] = np.clip(res, 0.0, 1.0)
    out = out.reshape(shape)
    return float(out) if scalar else out


def beta_cdf(params: BetaParams, x):
    """CDF of Beta(alpha, beta) at ``x`` in [0, 1]."""
    return betainc(params.alpha, params.beta, x)


def beta_pdf(params: BetaParams, x):
    """Density of Beta(alpha, beta).

    At the endpoints the density is returned as its limit; where that limit
    is infinite (``alpha < 1`` at 0, ``beta < 1`` at 1) the largest finite
    float is returned and a :class:`BoundaryDensityWarning` is issued.
    """
    a, b = float(params.alpha), float(params.beta)
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise ValueError("x must lie in [0, 1]")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    inner = (x > 0) & (x < 1)
    lb = log_beta(a, b)
    xi = x[inner]
    out[inner] = np.exp((a - 1.0) * np.log(xi) + (b - 1.0) * np.log1p(-xi) - lb)
    capped = False
    for edge, shape_at_edge, other in ((0.0, a, b), (1.0, b, a)):
        at = x == edge
        if not np.any(at):
            continue
        if shape_at_edge > 1.0:
            val = 0.0
        elif shape_at_edge == 1.0:
            val = math.exp(-lb)
        else:
            val = np.finfo(float).max
            capped = True
        out[at] = val
    if capped:
        warnings.warn("beta density is unbounded at the boundary; value capped", BoundaryDensityWarning, stacklevel=2)
    return float(out[0]) if scalar else out
