"""Rank correlation, Box-Cox transformation and multiple-testing correction."""

from __future__ import annotations

import decimal
from dataclasses import dataclass
from decimal import Decimal

import numpy as np
from scipy import stats as sps

__all__ = [
    "CorrResult",
    "BoxCoxResult",
    "InsufficientDataError",
    "UndefinedCorrelationError",
    "DegenerateInputError",
    "spearman",
    "boxcox",
    "boxcox_llf",
    "boxcox_transform",
    "bh_adjust",
    "kruskal_wallis",
    "BOXCOX_GRID",
]

Z95 = 1.96
BOXCOX_GRID = np.round(np.arange(-200, 201) * 0.01, 2)


class InsufficientDataError(ValueError):
    pass


class UndefinedCorrelationError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class CorrResult:
    r: float
    n: int
    ci95: tuple[float, float]
    stat_fisher_z: float
    stat_t: float
    p: float


def spearman(x, y) -> CorrResult:
    """Spearman correlation with average ranks for ties.

    Reports both the Fisher-z statistic ``atanh(r) * sqrt(n - 3)`` and the
    t statistic ``r * sqrt((n - 2) / (1 - r^2))``; ``p`` is two-sided from t
    with ``n - 2`` degrees of freedom. The 95% interval is Fisher-z based.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d sequences of equal length")
    n = len(x)
    if n < 4:
        raise InsufficientDataError(f"need at least 4 pairs, got {n}")
    # doubled centred average ranks are integers, so the moments are exact
    rx = (2.0 * sps.rankdata(x) - (n + 1)).astype(np.int64)
    ry = (2.0 * sps.rankdata(y) - (n + 1)).astype(np.int64)
    sxx = int(rx @ rx)
    syy = int(ry @ ry)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("zero rank variance")
    with decimal.localcontext() as ctx:
        ctx.prec = 50
        r = float(Decimal(int(rx @ ry)) / Decimal(sxx * syy).sqrt())
    with np.errstate(divide="ignore"):
        fz = np.arctanh(r)
        half = Z95 / np.sqrt(n - 3)
        ci = (float(np.tanh(fz - half)), float(np.tanh(fz + half)))
        stat_z = float(fz * np.sqrt(n - 3))
        t = float(r * np.sqrt((n - 2) / (1.0 - r * r))) if abs(r) < 1 else float(np.copysign(np.inf, r))
    p = float(2.0 * sps.t.sf(abs(t), n - 2))
    return CorrResult(r, n, ci, stat_z, t, p)


@dataclass(frozen=True)
class BoxCoxResult:
    lmbda: float
    shift: float
    values: np.ndarray


def boxcox_transform(y, lmbda: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if lmbda == 0:
        return np.log(y)
    return np.expm1(lmbda * np.log(y)) / lmbda


def boxcox_llf(lmbdas, y) -> np.ndarray:
    """Profile log-likelihood of the Box-Cox exponent, one value per ``lmbdas``."""
    y = np.asarray(y, dtype=float)
    logy = np.log(y)
    n = len(y)
    lmbdas = np.atleast_1d(np.asarray(lmbdas, dtype=float))
    out = np.empty(len(lmbdas))
    for i, lam in enumerate(lmbdas):
        z = boxcox_transform(y, lam)
        var = np.mean((z - z.mean()) ** 2)
        out[i] = (lam - 1.0) * logy.sum() - 0.5 * n * np.log(var)
    return out


def boxcox(y, grid=BOXCOX_GRID, lmbda: float | None = None) -> BoxCoxResult:
    """Box-Cox transform with the exponent maximising the profile likelihood.

    Non-positive data are shifted by ``1 - min(y)`` first. The exponent is
    searched over ``grid`` (default -2..2 step 0.01) unless ``lmbda`` is given.
    """
    y = np.asarray(y, dtype=float)
    if len(y) < 2 or np.ptp(y) == 0:
        raise DegenerateInputError("Box-Cox needs at least two distinct values")
    shift = 0.0
    if y.min() <= 0:
        shift = 1.0 - float(y.min())
        y = y + shift
    if lmbda is None:
        llf = boxcox_llf(grid, y)
        lmbda = float(grid[int(np.argmax(llf))])
    return BoxCoxResult(float(lmbda), shift, boxcox_transform(y, lmbda))


def bh_adjust(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("p must be one-dimensional")
    if np.any(~((p >= 0) & (p <= 1))):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    rank = np.arange(1, m + 1)
    scaled = np.minimum(1.0, p[order] * m / rank)
    q_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = q_sorted
    return out


def kruskal_wallis(*groups) -> tuple[float, float]:
    """Tie-corrected Kruskal-Wallis H and its chi-square p-value.

    Empty groups are ignored; fewer than two non-empty groups, or all values
    tied, gives ``(nan, nan)``.
    """
    groups = [np.asarray(g, dtype=float) for g in groups]
    groups = [g[~np.isnan(g)] for g in groups]
    groups = [g for g in groups if len(g)]
    if len(groups) < 2:
        return np.nan, np.nan
    allv = np.concatenate(groups)
    if np.ptp(allv) == 0:
        return np.nan, np.nan
    h, p = sps.kruskal(*groups)
    return float(h), float(p)
