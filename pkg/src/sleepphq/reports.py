"""Correlation, cohort-summary and plot-data reports over an analysis table."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import pandas as pd

from .cohort import EDUCATION_LEVELS, INCOME_LEVELS, format_instant
from .features import FEATURE_NAMES
from .stats import InsufficientDataError, UndefinedCorrelationError, kruskal_wallis, spearman

__all__ = [
    "CORRELATION_COLUMNS",
    "correlation_report",
    "cohort_summary",
    "phq8_histogram",
    "feature_correlation",
    "trajectories",
    "to_delimited",
]

CORRELATION_COLUMNS = (
    "scope", "n", "r", "ci_low", "ci_high", "z_fisher", "t", "p", "status",
)
PHQ8_CUTOFF = 10


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if math.isnan(x):
            return ""
        return f"{float(x):.6g}"
    return " ".join(str(x).split())


def to_delimited(frame: pd.DataFrame, sep: str = "\t", header: Sequence[str] = ()) -> str:
    """Render ``frame`` with 6-significant-digit floats; ``header`` lines become ``# `` comments."""
    lines = [f"# {h}" for h in header]
    lines.append(sep.join(frame.columns))
    for rec in frame.itertuples(index=False):
        lines.append(sep.join(_fmt(v) for v in rec))
    return "\n".join(lines) + "\n"


def _sites(table: pd.DataFrame) -> list[str]:
    return sorted(table["site"].dropna().astype(str).unique())


def correlation_report(table: pd.DataFrame) -> pd.DataFrame:
    """Spearman correlation of PHQ-8 total with the sleep subscore, per site and pooled."""
    scopes = [(s, table[table["site"].astype(str) == s]) for s in _sites(table)]
    scopes.append(("Total", table))
    rows = []
    for scope, sub in scopes:
        pair = sub[["phq8_total", "sleep_subscore"]].dropna()
        row = {"scope": scope, "n": len(pair)}
        try:
            res = spearman(pair["phq8_total"], pair["sleep_subscore"])
        except (InsufficientDataError, UndefinedCorrelationError) as exc:
            rows.append({**row, "status": f"error: {exc}"})
            continue
        rows.append({
            **row, "r": res.r, "ci_low": res.ci95[0], "ci_high": res.ci95[1],
            "z_fisher": res.stat_fisher_z, "t": res.stat_t, "p": res.p, "status": "ok",
        })
    return pd.DataFrame(rows, columns=list(CORRELATION_COLUMNS))


def _median_iqr(x) -> str:
    x = np.asarray(x, dtype=float)
    x = x[~np.isnan(x)]
    if len(x) == 0:
        return ""
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return f"{med:.6g} ({q1:.6g}, {q3:.6g})"


def _count_pct(mask) -> str:
    mask = np.asarray(mask, dtype=bool)
    if len(mask) == 0:
        return "0 (0%)"
    return f"{int(mask.sum())} ({100.0 * mask.mean():.2f}%)"


def cohort_summary(table: pd.DataFrame) -> pd.DataFrame:
    """Per-site participant and questionnaire characteristics.

    The last column is the Kruskal-Wallis p-value across sites; categorical
    characteristics are tested on their ordinal codes (income
    ``not-mentioned`` excluded from the test).
    """
    sites = _sites(table)
    by_site = {s: table[table["site"].astype(str) == s] for s in sites}
    people = {s: t.drop_duplicates("participant_id") for s, t in by_site.items()}
    rows = []

    def add(label, per_site, groups=None):
        row = {"characteristic": label}
        row.update({s: per_site(s) for s in sites})
        row["kruskal_wallis_p"] = kruskal_wallis(*groups)[1] if groups is not None else math.nan
        rows.append(row)

    add("Participants, n", lambda s: str(len(people[s])))
    add("PHQ-8 records, n", lambda s: str(len(by_site[s])))
    add("PHQ-8 score, median (Q1, Q3)", lambda s: _median_iqr(by_site[s]["phq8_total"]),
        [by_site[s]["phq8_total"] for s in sites])
    add(f"PHQ-8 score >= {PHQ8_CUTOFF}, n (%)",
        lambda s: _count_pct(by_site[s]["phq8_total"] >= PHQ8_CUTOFF),
        [(by_site[s]["phq8_total"] >= PHQ8_CUTOFF).astype(float) for s in sites])
    add("Age at baseline, median (Q1, Q3)", lambda s: _median_iqr(people[s]["age"]),
        [people[s]["age"] for s in sites])

    genders = list(dict.fromkeys(table["gender"].dropna().astype(str)))
    gcode = {g: i for i, g in enumerate(genders)}
    add("Gender, n (%)", lambda s: "",
        [people[s]["gender"].map(gcode).astype(float) for s in sites])
    for g in genders:
        add(f"  {g}", lambda s, g=g: _count_pct(people[s]["gender"].astype(str) == g))

    ecode = {lv: i for i, lv in enumerate(EDUCATION_LEVELS)}
    add("Education, n (%)", lambda s: "",
        [people[s]["education"].map(ecode).astype(float) for s in sites])
    for lv in reversed(EDUCATION_LEVELS):
        add(f"  {lv}", lambda s, lv=lv: _count_pct(people[s]["education"] == lv))

    icode = {lv: i for i, lv in enumerate(INCOME_LEVELS[:3])}
    add("Annual income, n (%)", lambda s: "",
        [people[s]["income"].map(icode).astype(float) for s in sites])
    for lv in INCOME_LEVELS:
        add(f"  {lv}", lambda s, lv=lv: _count_pct(people[s]["income"] == lv))

    return pd.DataFrame(rows, columns=["characteristic", *sites, "kruskal_wallis_p"])


def phq8_histogram(table: pd.DataFrame) -> pd.DataFrame:
    """Long-format PHQ-8 score counts per site and pooled."""
    scopes = [(s, table[table["site"].astype(str) == s]) for s in _sites(table)]
    scopes.append(("Total", table))
    rows = []
    for scope, sub in scopes:
        counts = np.bincount(sub["phq8_total"].dropna().astype(int), minlength=25)[:25]
        rows += [{"scope": scope, "score": k, "count": int(c)} for k, c in enumerate(counts)]
    return pd.DataFrame(rows, columns=["scope", "score", "count"])


def feature_correlation(table: pd.DataFrame, features: Sequence[str] = FEATURE_NAMES) -> pd.DataFrame:
    """Pairwise-complete Spearman correlations between features, long format."""
    rows = []
    for a in features:
        for b in features:
            pair = table[[a, b]].dropna() if a != b else table[[a]].dropna()
            try:
                r = spearman(pair[a], pair[b]).r
            except (InsufficientDataError, UndefinedCorrelationError):
                r = math.nan
            rows.append({"feature_a": a, "feature_b": b, "r": r, "n": len(pair)})
    return pd.DataFrame(rows, columns=["feature_a", "feature_b", "r", "n"])


def trajectories(table: pd.DataFrame, features: Sequence[str] = FEATURE_NAMES) -> pd.DataFrame:
    """Per-participant series of PHQ-8, subscore and features in long format."""
    cols = ["phq8_total", "sleep_subscore", *features]
    ordered = table.sort_values(["participant_id", "completed_at_utc"], kind="stable")
    long = ordered.melt(
        id_vars=["participant_id", "site", "completed_at_utc"], value_vars=cols,
        var_name="variable", value_name="value",
    )
    long = long.sort_values(
        ["participant_id", "completed_at_utc", "variable"], kind="stable"
    ).reset_index(drop=True)
    long["completed_at_utc"] = [format_instant(t) for t in long["completed_at_utc"]]
    return long
