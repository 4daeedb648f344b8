"""Batch command-line front end.

Exit codes: 0 ok, 2 input (missing file, bad usage), 3 schema, 4 config,
5 statistical failure.
"""

from __future__ import annotations

import functools
import logging
import re
import sys
from pathlib import Path

import click
import pandas as pd

from . import __version__
from .cohort import CohortError, SchemaError, ingest_cohort
from .config import RunConfig, read_kv_file
from .features import apply_inclusion, extract_features, read_table, write_table
from .reports import (
    cohort_summary,
    correlation_report,
    feature_correlation,
    phq8_histogram,
    to_delimited,
    trajectories,
)
from .render import render_markdown
from .sweep import association_sweep
from .synth import ConfigError, SynthConfig, simulate_cohort

EXIT_INPUT, EXIT_SCHEMA, EXIT_CONFIG, EXIT_STATS = 2, 3, 4, 5

TABLE_FILE = "analysis_table.csv"
PREDICTOR_TAG = {"phq8_total": "phq8", "sleep_subscore": "subscore"}


class _Fail(click.ClickException):
    def __init__(self, message, code):
        super().__init__(message)
        self.exit_code = code


def _guard(func):
    """Map library exceptions to the documented exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except FileNotFoundError as exc:
            raise _Fail(str(exc), EXIT_INPUT) from None
        except ConfigError as exc:
            raise _Fail(f"config error: {exc}", EXIT_CONFIG) from None
        except (SchemaError, CohortError) as exc:
            raise _Fail(f"schema error: {exc}", EXIT_SCHEMA) from None

    return wrapper


def _load_config(config_path, **overrides) -> RunConfig:
    base = RunConfig.from_mapping(read_kv_file(config_path)) if config_path else RunConfig()
    return base.updated(**overrides)


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


@click.group()
@click.version_option(__version__, prog_name="sleepphq")
def main():
    """Sleep features and PHQ-8 association analysis."""
    logging.getLogger("sleepphq").setLevel(logging.ERROR)


@main.command()
@click.option("--config", "config_path", type=click.Path(), help="Generator key = value file.")
@click.option("--seed", type=int, help="Random seed (overrides the config file).")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE",
              help="Override one generator setting; repeatable.")
@_guard
def simulate(config_path, seed, out_dir, assignments):
    """Write a synthetic cohort (three CSV files and truth.json)."""
    mapping = read_kv_file(config_path) if config_path else {}
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    if seed is not None:
        mapping["seed"] = seed
    config = SynthConfig.from_mapping(mapping)
    config.validate()
    cohort = simulate_cohort(config, out_dir)
    n_rec = sum(len(v) for v in cohort.dataset.phq8.values())
    click.echo(f"wrote {len(cohort.dataset.profiles)} participants, {n_rec} PHQ-8 records to {out_dir}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), help="Run key = value file.")
@click.option("--episodes", type=click.Path())
@click.option("--phq8", type=click.Path())
@click.option("--demographics", type=click.Path())
@click.option("--out", "out_dir", type=click.Path())
@click.option("--window-days", type=int)
@click.option("--min-days", type=int)
@click.option("--min-records", type=int)
@_guard
def extract(config_path, episodes, phq8, demographics, out_dir, window_days, min_days, min_records):
    """Build the analysis table and the inclusion report."""
    cfg = _load_config(
        config_path, episodes=episodes, phq8=phq8, demographics=demographics, out_dir=out_dir,
        window_days=window_days, min_days=min_days, min_records=min_records,
    )
    for name in ("episodes", "phq8", "demographics"):
        if not getattr(cfg, name):
            raise _Fail(f"missing --{name}", EXIT_INPUT)
    dataset = ingest_cohort(cfg.episodes, cfg.phq8, cfg.demographics)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for diag in dataset.diagnostics:
        click.echo(f"warning: rejected row {diag}", err=True)
    if dataset.diagnostics:
        frame = pd.DataFrame(
            [(d.path, d.line, d.kind, d.message) for d in dataset.diagnostics],
            columns=["path", "line", "kind", "message"],
        )
        _write(out / "diagnostics.tsv", to_delimited(frame))

    features = extract_features(
        dataset, cfg.window_days, 60.0 * cfg.gap_threshold_min, 60.0 * cfg.nap_threshold_min
    )
    result = apply_inclusion(features, cfg.window_days, cfg.min_days, cfg.min_records)
    write_table(result.table, out / TABLE_FILE)
    report = pd.DataFrame(list(result.report.items()), columns=["item", "value"])
    _write(out / "inclusion_report.tsv", to_delimited(report, header=cfg.header_lines()))
    click.echo(
        f"{result.report['rows_out']} of {result.report['rows_in']} PHQ-8 records kept "
        f"({result.report['participants_out']} participants); table: {out / TABLE_FILE}"
    )


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


@main.command()
@click.option("--config", "config_path", type=click.Path(), help="Run key = value file.")
@click.option("--table", type=click.Path(), help="Analysis table from `extract`.")
@click.option("--out", "out_dir", type=click.Path())
@click.option("--predictor", type=click.Choice(["phq8", "subscore", "both"]))
@click.option("--grouping", type=click.Choice(["pooled", "per-site", "both"]))
@click.option("--per-site", is_flag=True, default=False, help="Only per-site two-level sweeps.")
@click.option("--bh-level", type=float)
@click.option("--box-cox", type=str, help="off, auto or a fixed exponent.")
@_guard
def analyze(config_path, table, out_dir, predictor, grouping, per_site, bh_level, box_cox):
    """Correlation, association sweeps, cohort summary and plot data."""
    cfg = _load_config(
        config_path, table=table, out_dir=out_dir, predictor=predictor,
        grouping="per-site" if per_site else grouping, bh_level=bh_level, box_cox=box_cox,
    )
    if not cfg.table:
        raise _Fail("missing --table", EXIT_INPUT)
    frame = read_table(cfg.table)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = cfg.header_lines()

    _write(out / "correlation.tsv", to_delimited(correlation_report(frame), header=header))
    _write(out / "cohort_summary.tsv", to_delimited(cohort_summary(frame), header=header))
    _write(out / "fig_phq8_histogram.csv", to_delimited(phq8_histogram(frame), sep=","))
    _write(out / "fig_feature_correlation.csv", to_delimited(feature_correlation(frame), sep=","))
    _write(out / "fig_trajectories.csv", to_delimited(trajectories(frame), sep=","))

    sweeps = []
    sites = sorted(frame["site"].dropna().astype(str).unique())
    for pred in cfg.predictors:
        tag = PREDICTOR_TAG[pred]
        if cfg.grouping in ("pooled", "both"):
            sweeps.append((f"assoc_pooled_{tag}.tsv", pred, None))
        if cfg.grouping in ("per-site", "both"):
            sweeps += [(f"assoc_site_{_safe(s)}_{tag}.tsv", pred, s) for s in sites]

    failed = []
    for filename, pred, site in sweeps:
        rep = association_sweep(
            frame, predictor=pred, site=site, box_cox=cfg.box_cox_mode,
            skew_threshold=cfg.skew_threshold, bh_level=cfg.bh_level,
        )
        for w in rep.warnings:
            click.echo(f"warning: {rep.scope}/{PREDICTOR_TAG[pred]}: {w}", err=True)
        if rep.status.startswith("failed"):
            failed.append(filename)
        _write(out / filename, rep.to_tsv(header))
        sig = ", ".join(rep.significant_features) or "none"
        click.echo(f"{filename}: significant after BH: {sig}")

    if "md" in cfg.formats:
        _write(out / "report.md", render_markdown(out))
    if failed:
        raise _Fail(f"no feature could be fitted in: {', '.join(failed)}", EXIT_STATS)


@main.command()
@click.argument("analysis_dir", type=click.Path())
@click.option("--out", "out_path", type=click.Path(), help="Write here instead of stdout.")
@_guard
def report(analysis_dir, out_path):
    """Render the TSV outputs of `analyze` as a Markdown report."""
    if not Path(analysis_dir).is_dir():
        raise FileNotFoundError(f"analysis directory not found: {analysis_dir}")
    text = render_markdown(Path(analysis_dir))
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
