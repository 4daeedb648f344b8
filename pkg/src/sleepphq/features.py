"""Per-night sleep metrics, 14-day windowed features and inclusion filtering.

Units: hours for durations and their standard deviations, minutes for REM
latency, percent for stage proportions and percentage-of-days features,
noon-axis hours for onset/offset. NaN marks an absent value.
"""

from __future__ import annotations

import csv
import datetime as dt
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import kernels
from .cohort import (
    CohortDataset,
    NightRecord,
    Phq8Record,
    SchemaError,
    assemble_nights,
    format_instant,
    parse_instant,
)

__all__ = [
    "FEATURE_NAMES",
    "FEATURE_CATEGORIES",
    "ID_COLUMNS",
    "COVARIATE_COLUMNS",
    "TABLE_COLUMNS",
    "NightMetrics",
    "FeatureVector",
    "InclusionResult",
    "night_metrics",
    "night_metrics_arrays",
    "window_features",
    "extract_features",
    "apply_inclusion",
    "write_table",
    "read_table",
]

FEATURE_CATEGORIES = {
    "architecture": (
        "Sleep_dur", "Time_bed", "Deep_pct", "Light_pct", "REM_pct", "NREM_pct",
        "Awake_pct", "REM_L",
    ),
    "stability": ("Std_dur", "Std_onset", "Std_offset"),
    "quality": ("Efficiency", "Awake_5", "WKD_diff"),
    "insomnia": ("Av_onset", "After_12", "After_1", "After_2", "M_insomnia", "Av_offset"),
    "hypersomnia": ("Dur_10",),
}
FEATURE_NAMES = tuple(name for names in FEATURE_CATEGORIES.values() for name in names)

ID_COLUMNS = ("participant_id", "site", "completed_at_utc", "tz_offset_min")
COVARIATE_COLUMNS = ("age", "gender", "education", "income")
TABLE_COLUMNS = (
    ID_COLUMNS + COVARIATE_COLUMNS + ("phq8_total", "sleep_subscore", "n_nights") + FEATURE_NAMES
)

AWAKENING_MIN_S = 300.0
PROLONGED_WAKE_S = 1800.0
SHORT_SLEEP_H = 6.0
LONG_SLEEP_H = 10.0
# 00:00, 01:00 and 02:00 on the noon axis
LATE_ONSET_H = (12.0, 13.0, 14.0)
SATURDAY = 5


@dataclass(frozen=True)
class NightMetrics:
    participant_id: str
    night_key: dt.date
    sleep_duration_h: float
    time_in_bed_h: float
    pct_deep: float
    pct_light: float
    pct_rem: float
    pct_nrem: float
    pct_awake: float
    rem_latency_min: float
    efficiency: float
    onset_h: float
    offset_h: float
    awakenings_gt5: int
    is_weekend_night: bool
    middle_insomnia: bool
    dur_gt10: bool
    onset_after_00: bool
    onset_after_01: bool
    onset_after_02: bool


def _pack(nights: Sequence[NightRecord]):
    sizes = [len(n.episodes) for n in nights]
    ptr = np.zeros(len(nights) + 1, dtype=np.int64)
    np.cumsum(sizes, out=ptr[1:])
    stages = np.fromiter((ep.stage for n in nights for ep in n.episodes), np.int64, ptr[-1])
    durations = np.fromiter(
        (ep.duration for n in nights for ep in n.episodes), np.float64, ptr[-1]
    )
    return stages, durations, ptr


def night_metrics_arrays(nights: Sequence[NightRecord]) -> dict[str, np.ndarray]:
    """Column arrays of every :class:`NightMetrics` field for ``nights``.

    Also carries ``offset_utc`` for window selection.
    """
    n = len(nights)
    if n:
        raw = kernels.night_stage_totals(*_pack(nights), AWAKENING_MIN_S)
    else:
        raw = np.zeros((0, kernels.N_NIGHT_COLS))
    awake = raw[:, kernels.COL_AWAKE]
    light = raw[:, kernels.COL_LIGHT]
    deep = raw[:, kernels.COL_DEEP]
    rem = raw[:, kernels.COL_REM]
    sleep = light + deep + rem
    tib = sleep + awake
    sleep_h = sleep / 3600.0
    onset = np.array([night.onset for night in nights], dtype=float)
    offset = np.array([night.offset for night in nights], dtype=float)
    weekday = np.array([night.offset_weekday for night in nights], dtype=int)
    return {
        "sleep_duration_h": sleep_h,
        "time_in_bed_h": tib / 3600.0,
        "pct_deep": 100.0 * deep / tib,
        "pct_light": 100.0 * light / tib,
        "pct_rem": 100.0 * rem / tib,
        "pct_nrem": 100.0 * (deep + light) / tib,
        "pct_awake": 100.0 * awake / tib,
        "rem_latency_min": (raw[:, kernels.COL_FIRST_REM] - raw[:, kernels.COL_ONSET]) / 60.0,
        "efficiency": sleep / tib,
        "onset_h": onset,
        "offset_h": offset,
        "awakenings_gt5": raw[:, kernels.COL_AWAKENINGS].astype(int),
        "is_weekend_night": weekday >= SATURDAY,
        "middle_insomnia": (sleep_h < SHORT_SLEEP_H)
        & (raw[:, kernels.COL_MAX_WAKE] >= PROLONGED_WAKE_S),
        "dur_gt10": sleep_h > LONG_SLEEP_H,
        "onset_after_00": onset > LATE_ONSET_H[0],
        "onset_after_01": onset > LATE_ONSET_H[1],
        "onset_after_02": onset > LATE_ONSET_H[2],
        "offset_utc": np.array([night.offset_utc for night in nights], dtype=float),
    }


def night_metrics(night: NightRecord) -> NightMetrics:
    """Derived quantities of one night. REM latency is NaN for a REM-free night."""
    cols = night_metrics_arrays([night])
    values = {}
    for name, f in NightMetrics.__dataclass_fields__.items():
        if name in ("participant_id", "night_key"):
            continue
        v = cols[name][0]
        values[name] = v.item() if isinstance(v, np.generic) else v
    return NightMetrics(night.participant_id, night.night_key, **values)


@dataclass(frozen=True)
class FeatureVector:
    """The 21 windowed features anchored at one questionnaire."""

    participant_id: str
    completed_at: float
    n_nights: int
    values: Mapping[str, float] = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.values[name]


def _mean(x):
    return float(np.mean(x)) if len(x) else np.nan


def _window_values(cols, anchor_utc: float, window_days: float) -> tuple[dict, int]:
    lo = anchor_utc - window_days * 86400.0
    off = cols["offset_utc"]
    sel = (off > lo) & (off <= anchor_utc)
    n = int(sel.sum())
    if n == 0:
        return {name: np.nan for name in FEATURE_NAMES}, 0

    def pick(key):
        return cols[key][sel]

    sleep = pick("sleep_duration_h")
    onset = pick("onset_h")
    offset = pick("offset_h")
    rem_l = pick("rem_latency_min")
    rem_l = rem_l[~np.isnan(rem_l)]
    weekend = pick("is_weekend_night")

    def pct_days(key):
        return 100.0 * np.count_nonzero(pick(key)) / n

    def std(x):
        return float(np.std(x, ddof=1)) if n >= 2 else np.nan

    if weekend.any() and (~weekend).any():
        wkd_diff = float(np.mean(sleep[weekend]) - np.mean(sleep[~weekend]))
    else:
        wkd_diff = np.nan

    values = {
        "Sleep_dur": _mean(sleep),
        "Time_bed": _mean(pick("time_in_bed_h")),
        "Deep_pct": _mean(pick("pct_deep")),
        "Light_pct": _mean(pick("pct_light")),
        "REM_pct": _mean(pick("pct_rem")),
        "NREM_pct": _mean(pick("pct_nrem")),
        "Awake_pct": _mean(pick("pct_awake")),
        "REM_L": _mean(rem_l),
        "Std_dur": std(sleep),
        "Std_onset": std(onset),
        "Std_offset": std(offset),
        "Efficiency": _mean(pick("efficiency")),
        "Awake_5": _mean(pick("awakenings_gt5")),
        "WKD_diff": wkd_diff,
        "Av_onset": _mean(onset),
        "After_12": pct_days("onset_after_00"),
        "After_1": pct_days("onset_after_01"),
        "After_2": pct_days("onset_after_02"),
        "M_insomnia": pct_days("middle_insomnia"),
        "Av_offset": _mean(offset),
        "Dur_10": pct_days("dur_gt10"),
    }
    return values, n


def window_features(
    nights: Sequence[NightRecord], anchor: Phq8Record, window_days: float = 14
) -> FeatureVector:
    """Aggregate nights whose offset falls in ``(anchor - window_days, anchor]``.

    Nights are put in time order first, so the result does not depend on
    the input order down to the last bit.
    """
    ordered = sorted(nights, key=lambda night: night.start)
    values, n = _window_values(night_metrics_arrays(ordered), anchor.completed_at, window_days)
    return FeatureVector(anchor.participant_id, anchor.completed_at, n, values)


def extract_features(
    dataset: CohortDataset,
    window_days: float = 14,
    gap_threshold_s: float = 3600.0,
    nap_threshold_s: float = 3600.0,
) -> pd.DataFrame:
    """One row per questionnaire (complete or not) with covariates and features.

    Incomplete questionnaires carry NaN ``phq8_total``. Columns follow
    :data:`TABLE_COLUMNS`; ``completed_at_utc`` is epoch seconds.
    """
    rows = []
    for pid in dataset.participants:
        records = dataset.phq8.get(pid, ())
        if not records:
            continue
        nights = assemble_nights(
            dataset.episodes.get(pid, ()), pid, gap_threshold_s, nap_threshold_s
        )
        cols = night_metrics_arrays(nights)
        prof = dataset.profiles.get(pid)
        for rec in records:
            values, n = _window_values(cols, rec.completed_at, window_days)
            total = rec.total
            sub = rec.sleep_subscore
            rows.append({
                "participant_id": pid,
                "site": prof.site if prof else None,
                "completed_at_utc": rec.completed_at,
                "tz_offset_min": rec.tz_offset_min,
                "age": prof.age if prof and prof.age is not None else np.nan,
                "gender": prof.gender if prof else None,
                "education": prof.education if prof else None,
                "income": prof.income if prof else None,
                "phq8_total": np.nan if total is None else float(total),
                "sleep_subscore": np.nan if sub is None else float(sub),
                "n_nights": n,
                **values,
            })
    frame = pd.DataFrame(rows, columns=list(TABLE_COLUMNS))
    frame["n_nights"] = frame["n_nights"].astype(int)
    return frame


@dataclass
class InclusionResult:
    table: pd.DataFrame
    report: dict

    def format_report(self) -> str:
        return "".join(f"{key}\t{value}\n" for key, value in self.report.items())


def apply_inclusion(
    data: CohortDataset | pd.DataFrame,
    window_days: float = 14,
    min_days: int = 12,
    min_records: int = 3,
) -> InclusionResult:
    """Apply the three inclusion criteria in order.

    (1) complete questionnaire, (2) at least ``min_days`` nights in the
    window, (3) at least ``min_records`` surviving questionnaires per
    participant. ``data`` is a dataset (features are extracted first) or a
    table from :func:`extract_features`; re-applying to the output is a no-op.
    """
    if isinstance(data, CohortDataset):
        frame = extract_features(data, window_days)
    else:
        frame = data
    n_input = len(frame)
    complete = frame["phq8_total"].notna()
    step1 = frame[complete]
    step2 = step1[step1["n_nights"] >= min_days]
    counts = step2.groupby("participant_id", sort=False)["participant_id"].transform("size")
    step3 = step2[counts >= min_records]
    table = step3.reset_index(drop=True)
    report = {
        "window_days": window_days,
        "min_days": min_days,
        "min_records": min_records,
        "rows_in": n_input,
        "dropped_incomplete_phq8": n_input - len(step1),
        "dropped_insufficient_days": len(step1) - len(step2),
        "dropped_few_records": len(step2) - len(step3),
        "rows_out": len(table),
        "participants_in": int(frame["participant_id"].nunique()),
        "participants_out": int(table["participant_id"].nunique()),
    }
    return InclusionResult(table, report)


def write_table(table: pd.DataFrame, path) -> None:
    """Write an analysis table as CSV; absent values become empty cells."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for rec in table[list(TABLE_COLUMNS)].itertuples(index=False):
            row = []
            for name, value in zip(TABLE_COLUMNS, rec):
                if name == "completed_at_utc":
                    row.append(format_instant(value))
                else:
                    row.append(_cell(value))
            w.writerow(row)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return ""
        value = float(value)
        return str(int(value)) if value.is_integer() else repr(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def read_table(path) -> pd.DataFrame:
    """Read an analysis table written by :func:`write_table`.

    Raises :class:`~sleepphq.cohort.SchemaError` when the header differs.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != TABLE_COLUMNS:
            raise SchemaError(f"{path}: analysis table header does not match the schema")
        rows = list(reader)
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(TABLE_COLUMNS):
            raise SchemaError(f"{path}:{lineno}: expected {len(TABLE_COLUMNS)} columns, got {len(r)}")
    text_cols = {"participant_id", "site", "gender", "education", "income"}
    data = {}
    for i, name in enumerate(TABLE_COLUMNS):
        cells = [r[i] for r in rows]
        try:
            if name in text_cols:
                data[name] = [c if c else None for c in cells]
            elif name == "completed_at_utc":
                data[name] = [parse_instant(c) for c in cells]
            elif name in ("tz_offset_min", "n_nights"):
                data[name] = [int(c) for c in cells]
            else:
                data[name] = [float(c) if c else np.nan for c in cells]
        except ValueError as exc:
            raise SchemaError(f"{path}: column {name}: {exc}") from None
    frame = pd.DataFrame(data, columns=list(TABLE_COLUMNS))
    frame["n_nights"] = frame["n_nights"].astype(int)
    frame["tz_offset_min"] = frame["tz_offset_min"].astype(int)
    return frame
