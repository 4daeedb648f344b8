"""Random-intercept linear mixed models fitted by profiled REML.

The response is modelled as ``y = X beta + Z_p u + Z_s v + e`` with
independent intercepts per participant (``u``) and, for three-level models,
per site (``v``), participants nested in sites. ``beta`` and the residual
variance are profiled out; the REML criterion is minimised over the variance
ratios ``theta = (var_participant, var_site) / var_residual`` in log space.
Everything is computed from per-participant sufficient statistics, so the
cost of one criterion evaluation does not depend on the number of rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, optimize
from scipy import stats as sps

from . import kernels
from .cohort import EDUCATION_LEVELS, INCOME_LEVELS
from .stats import DegenerateInputError, InsufficientDataError, boxcox

__all__ = [
    "ModelSpec",
    "ModelFit",
    "Design",
    "RankDeficientError",
    "build_design",
    "fit_lmm",
    "THETA_BOUNDS",
    "DEFAULT_COVARIATES",
]

logger = logging.getLogger("sleepphq")

THETA_BOUNDS = (1e-10, 1e6)
DEFAULT_COVARIATES = ("age", "gender", "education", "income")
PREDICTORS = ("phq8_total", "sleep_subscore")
GROUPINGS = ("two_level", "three_level")

# canonical level order; the first entry is the reference level
CATEGORICAL_LEVELS = {
    "education": EDUCATION_LEVELS,
    "income": INCOME_LEVELS,
    "gender": None,  # order of appearance
}

_LOG_2PI = np.log(2.0 * np.pi)


class RankDeficientError(ValueError):
    """Design matrix is not of full column rank."""

    def __init__(self, columns: Sequence[str]):
        self.columns = tuple(columns)
        super().__init__(f"rank-deficient design; collinear columns: {', '.join(self.columns)}")


@dataclass(frozen=True)
class ModelSpec:
    """What to fit.

    ``box_cox`` is ``"off"``, ``"auto"`` (transform when the ordinary
    least-squares residual skewness exceeds ``skew_threshold`` in absolute
    value) or a fixed exponent. ``fixed_theta`` skips the variance search.
    """

    response: str
    predictor: str = "phq8_total"
    covariates: tuple[str, ...] = DEFAULT_COVARIATES
    grouping: str = "three_level"
    box_cox: str | float = "off"
    reference_levels: Mapping[str, str] = field(default_factory=dict)
    skew_threshold: float = 1.0
    fixed_theta: tuple[float, ...] | None = None
    max_iter: int = 4000
    tol: float = 1e-10

    def __post_init__(self):
        if self.grouping not in GROUPINGS:
            raise ValueError(f"grouping must be one of {GROUPINGS}, got {self.grouping!r}")
        if isinstance(self.box_cox, str) and self.box_cox not in ("off", "auto"):
            raise ValueError(f"box_cox must be 'off', 'auto' or a number, got {self.box_cox!r}")


@dataclass
class Design:
    y: np.ndarray
    X: np.ndarray
    columns: tuple[str, ...]
    group: np.ndarray  # participant-within-site code per row
    group_site: np.ndarray  # site code per group
    site_labels: tuple[str, ...]
    n_dropped: int
    notes: list[str]


def _levels_for(name, values, reference_levels):
    present = list(dict.fromkeys(v for v in values))
    canonical = CATEGORICAL_LEVELS.get(name)
    if canonical is not None:
        order = [lv for lv in canonical if lv in present] + sorted(
            lv for lv in present if lv not in canonical
        )
    else:
        order = present
    ref = reference_levels.get(name)
    notes = []
    if ref is None:
        ref = order[0]
        if canonical is not None and ref != canonical[0]:
            notes.append(f"{name}: reference level {canonical[0]!r} absent, using {ref!r}")
    elif ref not in order:
        notes.append(f"{name}: reference level {ref!r} absent, using {order[0]!r}")
        ref = order[0]
    return ref, [lv for lv in order if lv != ref], notes


def build_design(table: pd.DataFrame, spec: ModelSpec) -> Design:
    """Listwise-complete design matrix for ``spec``.

    Categorical covariates are dummy coded against their reference level
    (education ``below-degree``, income ``<15k``, gender first level seen);
    levels absent from ``table`` get no column.
    """
    needed = [spec.response, spec.predictor, *spec.covariates, "participant_id", "site"]
    missing = [c for c in needed if c not in table.columns]
    if missing:
        raise KeyError(f"table lacks columns: {missing}")
    frame = table[needed]
    ok = frame.notna().all(axis=1)
    frame = frame[ok]
    n_dropped = int((~ok).sum())
    if len(frame) == 0:
        raise InsufficientDataError(f"no complete rows for response {spec.response!r}")

    columns = ["(Intercept)", spec.predictor]
    blocks = [np.ones(len(frame)), frame[spec.predictor].to_numpy(float)]
    notes: list[str] = []
    for cov in spec.covariates:
        if cov in CATEGORICAL_LEVELS:
            values = frame[cov].astype(str).to_numpy()
            ref, others, extra = _levels_for(cov, values, spec.reference_levels)
            notes.extend(extra)
            for lv in others:
                columns.append(f"{cov}[{lv}]")
                blocks.append((values == lv).astype(float))
        else:
            columns.append(cov)
            blocks.append(frame[cov].to_numpy(float))
    X = np.column_stack(blocks)

    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        kept: list[int] = []
        bad = []
        for j in range(X.shape[1]):
            if np.linalg.matrix_rank(X[:, kept + [j]]) > len(kept):
                kept.append(j)
            else:
                bad.append(columns[j])
        raise RankDeficientError(bad)

    site_codes, site_labels = pd.factorize(frame["site"].astype(str), sort=True)
    pair = frame["site"].astype(str) + "\x00" + frame["participant_id"].astype(str)
    group, pair_labels = pd.factorize(pair, sort=True)
    group_site = np.zeros(len(pair_labels), dtype=np.int64)
    group_site[group] = site_codes
    return Design(
        y=frame[spec.response].to_numpy(float),
        X=X,
        columns=tuple(columns),
        group=group.astype(np.int64),
        group_site=group_site,
        site_labels=tuple(site_labels),
        n_dropped=n_dropped,
        notes=notes,
    )


class _Reml:
    """Profiled REML criterion for one design."""

    def __init__(self, X, y, group, group_site, n_sites):
        self.n, self.p = X.shape
        W = np.column_stack([X, y])
        n_groups = int(group.max()) + 1
        sizes = np.bincount(group, minlength=n_groups).astype(float)
        sums = np.zeros((n_groups, W.shape[1]))
        np.add.at(sums, group, W)
        means = sums / sizes[:, None]
        dev = W - means[group]
        self.sizes = sizes
        self.means = means
        self.within = dev.T @ dev
        self.group_site = group_site
        self.n_sites = n_sites
        self.n_evals = 0

    def solve(self, theta1, theta2):
        M, logdet_v = kernels.reml_normal_equations(
            self.sizes, self.means, self.group_site, self.n_sites, self.within, theta1, theta2
        )
        p = self.p
        xtvx = M[:p, :p]
        xtvy = M[:p, p]
        chol = linalg.cho_factor(xtvx, lower=True)
        beta = linalg.cho_solve(chol, xtvy)
        rss = M[p, p] - xtvy @ beta
        logdet_x = 2.0 * np.log(np.diag(chol[0])).sum()
        return beta, rss, logdet_v, logdet_x, chol

    def __call__(self, theta1, theta2=0.0) -> float:
        """-2 x restricted log-likelihood at the given variance ratios."""
        self.n_evals += 1
        try:
            _, rss, logdet_v, logdet_x, _ = self.solve(theta1, theta2)
        except linalg.LinAlgError:
            return np.inf
        if not rss > 0:
            return np.inf
        dof = self.n - self.p
        return float(
            logdet_v + logdet_x + dof * np.log(rss / dof) + dof * (1.0 + _LOG_2PI)
        )


@dataclass
class ModelFit:
    """Fitted mixed model.

    ``beta``, ``se``, ``z``, ``p`` and ``ci95`` align with ``columns``.
    ``variance_components`` holds ``site`` (three-level only), ``participant``
    and ``residual`` variances on the (possibly transformed) response scale.
    """

    spec: ModelSpec
    columns: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    ci95: np.ndarray
    variance_components: dict
    theta: tuple[float, ...]
    grouping: str
    lmbda: float | None
    shift: float
    reml_loglik: float
    n_rows: int
    n_participants: int
    n_sites: int
    n_dropped: int
    converged: bool
    n_evals: int
    warnings: tuple[str, ...] = ()
    criterion: Callable | None = field(default=None, repr=False, compare=False)

    def coef(self, name: str | None = None) -> dict:
        """Row of the coefficient table; defaults to the predictor of interest."""
        i = self.columns.index(name or self.spec.predictor)
        return {
            "coeff": float(self.beta[i]),
            "ci_low": float(self.ci95[i, 0]),
            "ci_high": float(self.ci95[i, 1]),
            "se": float(self.se[i]),
            "z": float(self.z[i]),
            "p": float(self.p[i]),
        }

    def summary(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "coeff": self.beta,
                "se": self.se,
                "ci_low": self.ci95[:, 0],
                "ci_high": self.ci95[:, 1],
                "z": self.z,
                "p": self.p,
            },
            index=list(self.columns),
        )


def _minimize(criterion, n_free, spec):
    lo, hi = np.log(THETA_BOUNDS[0]), np.log(THETA_BOUNDS[1])

    if n_free == 1:
        def f1(phi):
            return criterion(np.exp(phi))

        grid = np.linspace(lo, hi, 33)
        values = np.array([f1(g) for g in grid])
        k = int(np.argmin(values))
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        res = optimize.minimize_scalar(
            f1, bounds=(a, b), method="bounded",
            options={"xatol": 1e-9, "maxiter": spec.max_iter},
        )
        x = np.array([res.x])
        fx = float(res.fun)
        if values[k] < fx:
            x, fx = np.array([grid[k]]), float(values[k])
        converged = bool(res.success)
        objective = lambda v: f1(v[0])  # noqa: E731
    else:
        def f2(phi):
            return criterion(np.exp(phi[0]), np.exp(phi[1]))

        axis = np.linspace(lo, hi, 13)
        best = None
        for a in axis:
            for b in axis:
                val = f2((a, b))
                if best is None or val < best[0]:
                    best = (val, np.array([a, b]))
        x0 = best[1]
        fatol = spec.tol * max(1.0, abs(best[0]))
        simplex = np.array([x0, x0 + [1.5, 0.0], x0 + [0.0, 1.5]])
        simplex = np.clip(simplex, lo, hi)
        if np.allclose(simplex[1], simplex[0]):
            simplex[1] = x0 - [1.5, 0.0]
        if np.allclose(simplex[2], simplex[0]):
            simplex[2] = x0 - [0.0, 1.5]
        res = optimize.minimize(
            f2, x0, method="Nelder-Mead", bounds=[(lo, hi), (lo, hi)],
            options={
                "xatol": 1e-8, "fatol": fatol, "maxiter": spec.max_iter,
                "maxfev": 4 * spec.max_iter, "initial_simplex": simplex,
            },
        )
        x, fx = np.asarray(res.x, float), float(res.fun)
        if best[0] < fx:
            x, fx = best[1], float(best[0])
        converged = bool(res.success)
        objective = f2

    # a flat criterion near zero variance leaves the search short of the bound
    for i in range(len(x)):
        cand = x.copy()
        cand[i] = lo
        val = objective(cand)
        if val <= fx:
            x, fx = cand, val
    theta = np.exp(x)
    theta[x <= lo] = THETA_BOUNDS[0]
    return theta, fx, converged


def fit_lmm(table: pd.DataFrame, spec: ModelSpec) -> ModelFit:
    """Fit ``spec`` to ``table`` by profiled REML.

    Rows with a missing response, predictor or covariate are dropped
    listwise. A grouping level with a single unit has its variance pinned at
    zero, which turns a single-site three-level request into a two-level fit.
    Raises :class:`RankDeficientError`, :class:`InsufficientDataError` or
    :class:`~sleepphq.stats.DegenerateInputError` when no fit is possible.
    """
    design = build_design(table, spec)
    y, X = design.y, design.X
    n, p = X.shape
    if n <= p:
        raise InsufficientDataError(f"{n} rows for {p} fixed effects")
    if np.ptp(y) == 0:
        raise DegenerateInputError(f"response {spec.response!r} is constant")
    notes = list(design.notes)

    lmbda = None
    shift = 0.0
    if spec.box_cox == "auto":
        resid = y - X @ np.linalg.lstsq(X, y, rcond=None)[0]
        skew = float(sps.skew(resid))
        if abs(skew) > spec.skew_threshold:
            bc = boxcox(y)
            y, lmbda, shift = bc.values, bc.lmbda, bc.shift
            notes.append(f"Box-Cox applied (residual skewness {skew:.3g}, lambda {lmbda:g})")
    elif spec.box_cox != "off":
        bc = boxcox(y, lmbda=float(spec.box_cox))
        y, lmbda, shift = bc.values, bc.lmbda, bc.shift
    if lmbda is not None and np.ptp(y) == 0:
        raise DegenerateInputError(f"response {spec.response!r} is constant after Box-Cox")

    n_groups = int(design.group.max()) + 1
    n_sites = len(design.site_labels)
    grouping = spec.grouping
    if grouping == "three_level" and n_sites < 2:
        notes.append("single site: site variance pinned to 0, fitted as two-level")
        grouping = "two_level"
    if grouping == "three_level":
        reml = _Reml(X, y, design.group, design.group_site, n_sites)
    else:
        reml = _Reml(X, y, design.group, np.zeros(n_groups, dtype=np.int64), 1)
    pin_participant = n_groups < 2
    if pin_participant:
        notes.append("single participant: participant variance pinned to 0")

    n_free = (0 if pin_participant else 1) + (1 if grouping == "three_level" else 0)

    def criterion(*free):
        theta1 = 0.0 if pin_participant else free[0]
        theta2 = free[-1] if grouping == "three_level" else 0.0
        return reml(theta1, theta2)

    if spec.fixed_theta is not None:
        theta_free = np.asarray(spec.fixed_theta, dtype=float)[:n_free]
        fval = criterion(*theta_free)
        converged = True
    elif n_free == 0:
        theta_free = np.zeros(0)
        fval = criterion()
        converged = True
    else:
        theta_free, fval, converged = _minimize(criterion, n_free, spec)
        if not converged:
            notes.append("variance search did not converge within the iteration cap")

    theta1 = 0.0 if pin_participant else float(theta_free[0])
    theta2 = float(theta_free[-1]) if grouping == "three_level" else 0.0
    beta, rss, _, _, chol = reml.solve(theta1, theta2)
    sigma2 = rss / (n - p)
    cov = sigma2 * linalg.cho_solve(chol, np.eye(p))
    se = np.sqrt(np.diag(cov))
    z = beta / se
    pval = 2.0 * sps.norm.sf(np.abs(z))
    ci = np.column_stack([beta - 1.96 * se, beta + 1.96 * se])

    components = {"participant": theta1 * sigma2, "residual": sigma2}
    if grouping == "three_level":
        components = {"site": theta2 * sigma2, **components}

    for note in notes:
        level = logging.INFO if note.startswith("Box-Cox") else logging.WARNING
        logger.log(level, "%s: %s", spec.response, note)
    theta = (theta1, theta2) if grouping == "three_level" else (theta1,)
    return ModelFit(
        spec=spec,
        columns=design.columns,
        beta=beta,
        se=se,
        z=z,
        p=pval,
        ci95=ci,
        variance_components=components,
        theta=theta,
        grouping=grouping,
        lmbda=lmbda,
        shift=shift,
        reml_loglik=-0.5 * fval,
        n_rows=n,
        n_participants=n_groups,
        n_sites=n_sites,
        n_dropped=design.n_dropped,
        converged=converged,
        n_evals=reml.n_evals,
        warnings=tuple(notes),
        criterion=criterion,
    )
