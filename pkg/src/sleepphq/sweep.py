"""Per-feature mixed-model sweeps with Benjamini-Hochberg correction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .features import FEATURE_NAMES
from .lmm import DEFAULT_COVARIATES, ModelSpec, fit_lmm
from .stats import bh_adjust

__all__ = ["REPORT_COLUMNS", "AssociationRow", "AssociationReport", "association_sweep"]

REPORT_COLUMNS = (
    "feature", "coeff", "ci_low", "ci_high", "z", "p", "p_bh", "significant",
    "n_rows", "n_participants", "lambda", "status",
)
BH_FAMILY = "features of this sweep (one predictor, one scope)"


@dataclass
class AssociationRow:
    feature: str
    coeff: float = math.nan
    ci_low: float = math.nan
    ci_high: float = math.nan
    z: float = math.nan
    p: float = math.nan
    p_bh: float = math.nan
    significant: bool = False
    n_rows: int = 0
    n_participants: int = 0
    lmbda: float = math.nan
    status: str = "ok"

    @property
    def failed(self) -> bool:
        return self.status.startswith("error")


@dataclass
class AssociationReport:
    predictor: str
    grouping: str
    scope: str
    bh_level: float
    rows: list[AssociationRow] = field(default_factory=list)
    status: str = "ok"
    warnings: list[str] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[getattr(r, "lmbda" if c == "lambda" else c) for c in REPORT_COLUMNS] for r in self.rows],
            columns=list(REPORT_COLUMNS),
        )

    @property
    def significant_features(self) -> list[str]:
        return [r.feature for r in self.rows if r.significant]

    def to_tsv(self, header: Sequence[str] = ()) -> str:
        """Report text; ``header`` lines are emitted as ``# `` comments first."""
        lines = [f"# {h}" for h in header]
        lines += [
            f"# scope = {self.scope}",
            f"# model_predictor = {self.predictor}",
            f"# model_grouping = {self.grouping}",
            f"# bh_family = {BH_FAMILY}",
            f"# report_status = {self.status}",
        ]
        lines += [f"# warning = {w}" for w in self.warnings]
        lines.append("\t".join(REPORT_COLUMNS))
        for r in self.rows:
            lines.append("\t".join([
                r.feature, _num(r.coeff), _num(r.ci_low), _num(r.ci_high), _num(r.z),
                _num(r.p), _num(r.p_bh), "true" if r.significant else "false",
                str(r.n_rows), str(r.n_participants), _num(r.lmbda), r.status,
            ]))
        return "\n".join(lines) + "\n"


def _num(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.6g}"


def _clean(msg: str) -> str:
    return " ".join(str(msg).split())


def association_sweep(
    table: pd.DataFrame,
    predictor: str = "phq8_total",
    grouping: str = "three_level",
    site: str | None = None,
    features: Sequence[str] = FEATURE_NAMES,
    covariates: Sequence[str] = DEFAULT_COVARIATES,
    box_cox: str | float = "auto",
    skew_threshold: float = 1.0,
    bh_level: float = 0.05,
) -> AssociationReport:
    """Fit one mixed model per feature and correct the predictor p-values.

    With ``site`` set, rows are restricted to that site and a two-level
    (participant) model is used. A feature whose fit fails gets an
    ``error: ...`` status and is left out of the correction family.
    """
    if site is not None:
        table = table[table["site"].astype(str) == str(site)]
        grouping = "two_level"
        scope = f"site:{site}"
    else:
        scope = "pooled"
    report = AssociationReport(predictor, grouping, scope, bh_level)
    if len(table) == 0:
        report.status = f"empty: no rows for {scope}"
        return report

    warnings: list[str] = []
    for name in features:
        spec = ModelSpec(
            response=name,
            predictor=predictor,
            covariates=tuple(covariates),
            grouping=grouping,
            box_cox=box_cox,
            skew_threshold=skew_threshold,
        )
        row = AssociationRow(name)
        try:
            fit = fit_lmm(table, spec)
        except (ValueError, KeyError, np.linalg.LinAlgError) as exc:
            row.status = f"error: {_clean(exc)}"
            row.n_rows = int(table[name].notna().sum()) if name in table else 0
            report.rows.append(row)
            continue
        c = fit.coef()
        row.coeff, row.ci_low, row.ci_high, row.z, row.p = (
            c["coeff"], c["ci_low"], c["ci_high"], c["z"], c["p"]
        )
        row.n_rows = fit.n_rows
        row.n_participants = fit.n_participants
        if fit.lmbda is not None:
            row.lmbda = fit.lmbda
        status = ["ok"]
        if fit.grouping != grouping:
            status.append("downgraded to two-level")
        if not fit.converged:
            status.append("not converged")
        row.status = "; ".join(status)
        for w in fit.warnings:
            if not w.startswith("Box-Cox") and w not in warnings:
                warnings.append(w)
        report.rows.append(row)

    ok = [r for r in report.rows if not r.failed]
    if ok:
        adjusted = bh_adjust([r.p for r in ok])
        for r, q in zip(ok, adjusted):
            r.p_bh = float(q)
            r.significant = bool(q <= bh_level)
    else:
        report.status = "failed: no feature could be fitted"
    report.warnings = [_clean(w) for w in warnings]
    for w in report.warnings:
        logging.getLogger("sleepphq").info("%s/%s: %s", scope, predictor, w)
    return report
