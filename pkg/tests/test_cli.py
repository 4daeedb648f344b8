import filecmp

import pytest
from click.testing import CliRunner

from sleepphq.cli import main
from sleepphq.config import RunConfig, parse_kv_lines, read_kv_file, read_report_config
from sleepphq.features import read_table, write_table
from sleepphq.render import format_p, read_report
from sleepphq.synth import ConfigError

SMALL = ("--set", "participants_per_site=6", "--set", "records_per_participant=5")


def run(*args, ok=True):
    res = CliRunner().invoke(main, [str(a) for a in args])
    if ok:
        assert res.exit_code == 0, res.output
    return res


def cohort_args(d):
    return ("--episodes", d / "episodes.csv", "--phq8", d / "phq8.csv",
            "--demographics", d / "demographics.csv")


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run("simulate", "--seed", 3, "--out", root / "raw", *SMALL)
    run("extract", *cohort_args(root / "raw"), "--out", root / "ext")
    cfg = root / "run.cfg"
    cfg.write_text("# analysis settings\nreport_formats = tsv,md\nbox_cox = off\n")
    run("analyze", "--config", cfg, "--table", root / "ext/analysis_table.csv", "--out", root / "ana")
    return root


def test_simulate_writes_cohort(pipeline):
    names = {p.name for p in (pipeline / "raw").iterdir()}
    assert names == {"episodes.csv", "phq8.csv", "demographics.csv", "truth.json"}


def test_extract_outputs(pipeline):
    ext = pipeline / "ext"
    assert not (ext / "diagnostics.tsv").exists()
    comments, rep = read_report(ext / "inclusion_report.tsv")
    assert "min_days = 12" in comments and "window_days = 14" in comments
    items = dict(zip(rep["item"], rep["value"]))
    assert int(items["rows_out"]) == len(read_table(ext / "analysis_table.csv"))


def test_analyze_outputs(pipeline):
    names = {p.name for p in (pipeline / "ana").iterdir()}
    assert {"correlation.tsv", "cohort_summary.tsv", "fig_phq8_histogram.csv",
            "fig_feature_correlation.csv", "fig_trajectories.csv", "report.md",
            "assoc_pooled_phq8.tsv", "assoc_pooled_subscore.tsv",
            "assoc_site_KCL_phq8.tsv", "assoc_site_VUmc_subscore.tsv"} <= names
    md = (pipeline / "ana/report.md").read_text()
    assert "| feature |" in md or "| Feature |" in md


def test_report_header_round_trips(pipeline):
    cfg = read_report_config(pipeline / "ana/assoc_pooled_phq8.tsv")
    assert cfg.box_cox == "off" and cfg.formats == ("tsv", "md")
    assert cfg.table.endswith("analysis_table.csv")
    rerun = pipeline / "rerun"
    lines = [ln for ln in cfg.header_lines()]
    (pipeline / "rerun.cfg").write_text("\n".join(lines) + "\n")
    run("analyze", "--config", pipeline / "rerun.cfg", "--out", rerun)
    for name in ("assoc_pooled_phq8.tsv", "correlation.tsv", "cohort_summary.tsv", "report.md"):
        assert filecmp.cmp(pipeline / "ana" / name, rerun / name, shallow=False), name


def test_report_command_renders(pipeline):
    res = run("report", pipeline / "ana")
    assert res.output == (pipeline / "ana/report.md").read_text()


def test_simulate_is_deterministic(tmp_path):
    run("simulate", "--seed", 5, "--out", tmp_path / "a", *SMALL)
    run("simulate", "--seed", 5, "--out", tmp_path / "b", *SMALL)
    for name in ("episodes.csv", "phq8.csv", "demographics.csv", "truth.json"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


def test_infeasible_simulate_exits_4_without_files(tmp_path):
    res = run("simulate", "--out", tmp_path / "x", "--set", "coupling.Awake_pct=5", ok=False)
    assert res.exit_code == 4 and "infeasible" in res.output
    assert not (tmp_path / "x").exists()


def test_missing_input_exits_2(tmp_path):
    res = run("extract", "--episodes", tmp_path / "nope.csv", "--phq8", tmp_path / "p.csv",
              "--demographics", tmp_path / "d.csv", "--out", tmp_path, ok=False)
    assert res.exit_code == 2 and "nope.csv" in res.output


def test_bad_table_header_exits_3(tmp_path):
    (tmp_path / "t.csv").write_text("a,b\n1,2\n")
    res = run("analyze", "--table", tmp_path / "t.csv", "--out", tmp_path / "o", ok=False)
    assert res.exit_code == 3


def test_bad_run_config_exits_4(tmp_path):
    (tmp_path / "c.cfg").write_text("bh_level = 2\n")
    res = run("analyze", "--config", tmp_path / "c.cfg", "--table", tmp_path / "t.csv", ok=False)
    assert res.exit_code == 4


def test_min_days_zero_drops_nothing_for_days(pipeline, tmp_path):
    run("extract", *cohort_args(pipeline / "raw"), "--out", tmp_path, "--min-days", 0)
    _, rep = read_report(tmp_path / "inclusion_report.tsv")
    assert dict(zip(rep["item"], rep["value"]))["dropped_insufficient_days"] == "0"


def test_per_site_flag_and_single_site_downgrade(pipeline, tmp_path):
    table = read_table(pipeline / "ext/analysis_table.csv")
    one = table[table["site"] == "KCL"].reset_index(drop=True)
    write_table(one, tmp_path / "one.csv")
    res = CliRunner().invoke(main, ["analyze", "--table", str(tmp_path / "one.csv"),
                                    "--out", str(tmp_path / "o"), "--predictor", "phq8"])
    assert res.exit_code == 0, res.output
    assert "warning: pooled/phq8: single site" in res.stderr
    assert "downgraded to two-level" in (tmp_path / "o/assoc_pooled_phq8.tsv").read_text()

    run("analyze", "--table", pipeline / "ext/analysis_table.csv", "--out", tmp_path / "ps",
        "--per-site", "--predictor", "phq8")
    names = {p.name for p in (tmp_path / "ps").glob("assoc_*")}
    assert names == {"assoc_site_KCL_phq8.tsv", "assoc_site_CIBER_phq8.tsv", "assoc_site_VUmc_phq8.tsv"}


def test_all_fits_failing_exits_5(pipeline, tmp_path):
    table = read_table(pipeline / "ext/analysis_table.csv")
    for col in table.columns[table.columns.get_loc("n_nights") + 1:]:
        table[col] = 1.0
    write_table(table, tmp_path / "flat.csv")
    res = run("analyze", "--table", tmp_path / "flat.csv", "--out", tmp_path / "o",
              "--grouping", "pooled", "--predictor", "phq8", ok=False)
    assert res.exit_code == 5


def test_kv_parsing(tmp_path):
    assert parse_kv_lines(["# c", "", " a = 1 ", "b=x=y"]) == {"a": "1", "b": "x=y"}
    with pytest.raises(ConfigError):
        parse_kv_lines(["novalue"])
    with pytest.raises(FileNotFoundError):
        read_kv_file(tmp_path / "missing.cfg")


def test_run_config_defaults_and_validation():
    cfg = RunConfig()
    assert (cfg.window_days, cfg.min_days, cfg.min_records, cfg.bh_level) == (14, 12, 3, 0.05)
    assert cfg.predictors == ["phq8_total", "sleep_subscore"]
    assert cfg.updated(predictor="subscore").predictors == ["sleep_subscore"]
    assert cfg.updated(box_cox="0.5").box_cox_mode == 0.5
    for bad in ({"predictor": "x"}, {"grouping": "x"}, {"box_cox": "maybe"},
                {"report_formats": "pdf"}, {"window_days": "0"}, {"min_days": "two"}, {"nope": "1"}):
        with pytest.raises(ConfigError):
            RunConfig.from_mapping(bad)
    assert not any(line.startswith("out_dir") for line in cfg.header_lines())


def test_format_p():
    assert format_p(0.0004) == "<.001"
    assert format_p(0.0123) == ".012"
    assert format_p(float("nan")) == ""
