"""Markdown rendering of an analysis output directory."""

from __future__ import annotations

import io
import math
from pathlib import Path

import pandas as pd

__all__ = ["read_report", "render_markdown", "format_p"]


def read_report(path) -> tuple[list[str], pd.DataFrame]:
    """Split a report file into its ``# `` comment lines and its table."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        k += 1
    comments = [ln[2:] if ln.startswith("# ") else ln[1:] for ln in lines[:k]]
    body = "\n".join(lines[k:])
    sep = "," if str(path).endswith(".csv") else "\t"
    frame = pd.read_csv(io.StringIO(body), sep=sep, keep_default_na=False, na_values=[""], dtype=str)
    return comments, frame


def format_p(p: float) -> str:
    """Journal-style p-value: ``<.001`` below a thousandth, else three decimals."""
    if p is None or math.isnan(p):
        return ""
    if p < 0.001:
        return "<.001"
    return f"{p:.3f}".lstrip("0")


def _f(x, digits=3) -> str:
    try:
        v = float(x)
    except (TypeError, ValueError):
        return "" if x is None or (isinstance(x, float) and math.isnan(x)) else str(x)
    return "" if math.isnan(v) else f"{v:.{digits}f}"


def _md_table(header: list[str], rows: list[list[str]]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


def _assoc_section(path: Path) -> list[str]:
    comments, frame = read_report(path)
    meta = dict(c.split(" = ", 1) for c in comments if " = " in c)
    title = f"{meta.get('scope', '?')}, predictor {meta.get('model_predictor', '?')}"
    out = [f"### {title}", ""]
    out.append(f"Grouping: {meta.get('model_grouping', '?')}. Status: {meta.get('report_status', '?')}.")
    out += [f"- warning: {c.split(' = ', 1)[1]}" for c in comments if c.startswith("warning = ")]
    out.append("")
    rows = []
    for r in frame.fillna("").itertuples(index=False):
        d = r._asdict()
        ci = f"{_f(d['ci_low'])}, {_f(d['ci_high'])}" if d["ci_low"] else ""
        p = float(d["p"]) if d["p"] else math.nan
        q = float(d["p_bh"]) if d["p_bh"] else math.nan
        mark = " *" if d["significant"] == "true" else ""
        rows.append([d["feature"], _f(d["coeff"]), ci, _f(d["z"], 2), format_p(p), format_p(q) + mark,
                     d["n_rows"], d["status"]])
    out += _md_table(["Feature", "Coeff.", "95% CI", "z", "P", "P (BH)", "n", "Status"], rows)
    return out + [""]


def render_markdown(directory) -> str:
    """Collect correlation, cohort summary and association reports into Markdown."""
    directory = Path(directory)
    out = ["# Sleep features and depressive symptoms", ""]
    corr = directory / "correlation.tsv"
    if corr.is_file():
        comments, frame = read_report(corr)
        out += ["## Run settings", "", "```"] + comments + ["```", ""]
        out += ["## PHQ-8 total vs sleep subscore (Spearman)", ""]
        rows = [
            [r.scope, r.n, _f(r.r), f"{_f(r.ci_low)}, {_f(r.ci_high)}" if r.ci_low else "",
             format_p(float(r.p)) if r.p else "", r.status]
            for r in frame.fillna("").itertuples(index=False)
        ]
        out += _md_table(["Scope", "n", "r", "95% CI", "P", "Status"], rows) + [""]
    summary = directory / "cohort_summary.tsv"
    if summary.is_file():
        _, frame = read_report(summary)
        frame = frame.fillna("")
        if "kruskal_wallis_p" in frame:
            frame["kruskal_wallis_p"] = [format_p(float(v)) if v else "" for v in frame["kruskal_wallis_p"]]
        out += ["## Cohort characteristics", ""]
        out += _md_table(list(frame.columns), frame.astype(str).values.tolist()) + [""]
    assoc = sorted(directory.glob("assoc_*.tsv"))
    if assoc:
        out += ["## Associations (one mixed model per feature)", ""]
        out += ["`*` marks features significant after Benjamini-Hochberg correction.", ""]
        for path in assoc:
            out += _assoc_section(path)
    return "\n".join(out).rstrip("\n") + "\n"
