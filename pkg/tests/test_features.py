import dataclasses
import datetime as dt
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepphq.cohort import Phq8Record, SleepEpisode, SleepStage, assemble_nights
from sleepphq.features import (
    FEATURE_NAMES,
    TABLE_COLUMNS,
    apply_inclusion,
    night_metrics,
    read_table,
    window_features,
    write_table,
)
from sleepphq.cohort import SchemaError

from _helpers import episodes_from_clock, local_instant, night_from_clock, random_night_episodes
from _oracles import brute_night

DAY = dt.date(2020, 3, 4)  # Wednesday


def anchor_after(day, hhmm="18:00", pid="P1"):
    t = local_instant(day, hhmm)
    return Phq8Record(pid, t, 0, (1,) * 8)


def test_worked_night():
    night = night_from_clock(DAY, [
        ("light", "23:00", "23:30"), ("deep", "23:30", "00:30"), ("awake", "00:30", "00:40"),
        ("rem", "00:40", "01:10"), ("light", "01:10", "07:00"),
    ])
    m = night_metrics(night)
    assert m.sleep_duration_h == pytest.approx(7 + 50 / 60, rel=1e-12)
    assert m.time_in_bed_h == 8.0
    assert m.pct_awake == pytest.approx(100 * 10 / 480, rel=1e-12)
    assert round(m.pct_awake, 3) == 2.083
    assert round(m.efficiency, 4) == 0.9792
    assert m.rem_latency_min == 100.0
    assert m.awakenings_gt5 == 1
    assert not m.middle_insomnia
    assert m.pct_nrem == pytest.approx(m.pct_deep + m.pct_light)


def test_single_stage_night():
    m = night_metrics(night_from_clock(DAY, [("light", "22:00", "06:00")]))
    assert m.efficiency == 1.0 and m.pct_light == 100.0
    assert m.awakenings_gt5 == 0
    assert math.isnan(m.rem_latency_min)


def test_short_night_with_long_wake_and_strict_onset_thresholds():
    m = night_metrics(night_from_clock(DAY, [
        ("light", "01:00", "04:00"), ("awake", "04:00", "04:40"), ("light", "04:40", "06:00"),
    ]))
    assert m.sleep_duration_h == pytest.approx(4 + 1 / 3)
    assert m.middle_insomnia
    assert m.onset_h == 13.0
    # onset exactly at 01:00 is not after 01:00
    assert (m.onset_after_00, m.onset_after_01, m.onset_after_02) == (True, False, False)


@pytest.mark.parametrize("minutes,count", [(5, 0), (5 + 1 / 60, 1), (30, 1)])
def test_awakening_threshold_is_strict(minutes, count):
    t = local_instant(DAY, "23:00")
    w = int(round(minutes * 60))
    eps = [SleepEpisode(SleepStage.LIGHT, t, 3600.0), SleepEpisode(SleepStage.AWAKE, t + 3600, w),
           SleepEpisode(SleepStage.DEEP, t + 3600 + w, 3600.0)]
    assert night_metrics(assemble_nights(eps, "P")[0]).awakenings_gt5 == count


def test_adjacent_awake_episodes_are_merged_and_edges_ignored():
    night = night_from_clock(DAY, [
        ("awake", "22:00", "23:00"), ("light", "23:00", "01:00"), ("awake", "01:00", "01:03"),
        ("awake", "01:03", "01:06"), ("deep", "01:06", "03:00"), ("awake", "03:00", "05:00"),
    ])
    m = night_metrics(night)
    # two 3-minute records form one 6-minute awakening; edge wake is outside onset..offset
    assert m.awakenings_gt5 == 1
    assert not m.middle_insomnia


def test_prolonged_wake_boundary():
    def night(wake_min):
        t = local_instant(DAY, "23:00")
        w = wake_min * 60
        eps = [SleepEpisode(SleepStage.LIGHT, t, 7200.0), SleepEpisode(SleepStage.AWAKE, t + 7200, w),
               SleepEpisode(SleepStage.REM, t + 7200 + w, 3600.0)]
        return night_metrics(assemble_nights(eps, "P")[0])

    assert night(30).middle_insomnia
    assert not night(29).middle_insomnia


def test_hypersomnia_threshold_is_strict():
    assert not night_metrics(night_from_clock(DAY, [("light", "21:00", "07:00")])).dur_gt10
    assert night_metrics(night_from_clock(DAY, [("light", "21:00", "07:01")])).dur_gt10


def test_rem_latency_includes_wake():
    m = night_metrics(night_from_clock(DAY, [
        ("light", "23:00", "23:20"), ("awake", "23:20", "23:50"), ("rem", "23:50", "06:00"),
    ]))
    assert m.rem_latency_min == 50.0


def test_weekend_is_keyed_by_offset_day():
    fri = dt.date(2020, 3, 6)
    assert night_metrics(night_from_clock(fri, [("light", "23:00", "07:00")])).is_weekend_night
    sun = dt.date(2020, 3, 8)
    assert not night_metrics(night_from_clock(sun, [("light", "23:00", "07:00")])).is_weekend_night
    # Saturday afternoon into Saturday evening, no midnight crossing
    sat = dt.date(2020, 3, 7)
    assert night_metrics(night_from_clock(sat, [("light", "13:00", "16:00")])).is_weekend_night


def test_random_nights_match_grid_oracle():
    rng = np.random.default_rng(11)
    for i in range(60):
        day = DAY + dt.timedelta(days=int(rng.integers(0, 400)))
        tz = int(rng.choice([-300, 0, 60, 330]))
        eps, tuples = random_night_episodes(rng, day, tz)
        (night,) = assemble_nights(eps, "P")
        got = dataclasses.asdict(night_metrics(night))
        want = brute_night(tuples, tz)
        assert got["night_key"] == want["night_key"]
        for k, v in want.items():
            if k in ("night_key", "offset_utc"):
                continue
            if isinstance(v, float) and math.isnan(v):
                assert math.isnan(got[k]), k
            else:
                assert got[k] == pytest.approx(v, rel=1e-9, abs=1e-12), k


# --- properties -----------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(-20, 20))
def test_week_shift_changes_only_night_key(seed, weeks):
    rng = np.random.default_rng(seed)
    eps, _ = random_night_episodes(rng, DAY, 60)
    shift = weeks * 7 * 86400.0
    moved = [dataclasses.replace(e, start=e.start + shift) for e in eps]
    a = dataclasses.asdict(night_metrics(assemble_nights(eps, "P")[0]))
    b = dataclasses.asdict(night_metrics(assemble_nights(moved, "P")[0]))
    assert b.pop("night_key") == a.pop("night_key") + dt.timedelta(days=7 * weeks)
    for k in a:
        if isinstance(a[k], float) and math.isnan(a[k]):
            assert math.isnan(b[k])
        else:
            assert a[k] == b[k], k


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7200), st.integers(0, 100))
def test_inserted_wake_never_helps(seed, wake_s, pos):
    rng = np.random.default_rng(seed)
    eps, _ = random_night_episodes(rng, DAY, 0)
    k = pos % (len(eps) + 1)
    t = eps[k - 1].end if k else eps[0].start
    extra = SleepEpisode(SleepStage.AWAKE, t, float(wake_s), 0)
    later = [dataclasses.replace(e, start=e.start + wake_s) for e in eps[k:]]
    a = night_metrics(assemble_nights(eps, "P")[0])
    b = night_metrics(assemble_nights(eps[:k] + [extra] + later, "P")[0])
    assert b.efficiency <= a.efficiency
    assert b.pct_awake >= a.pct_awake


def _nights(n, hours, start=DAY):
    out = []
    for d in range(n):
        day = start + dt.timedelta(days=d)
        end = f"{(23 + hours[d]) % 24:02d}:00"
        out += episodes_from_clock(day, [("light", "23:00", end)])
    return assemble_nights(out, "P1")


def test_constant_window():
    nights = _nights(14, [8] * 14)
    fv = window_features(nights, anchor_after(DAY + dt.timedelta(days=14), "12:00"))
    assert fv.n_nights == 14
    assert fv["Sleep_dur"] == 8.0 and fv["Std_dur"] == 0.0
    assert fv["Dur_10"] == 0.0 and fv["WKD_diff"] == 0.0


def test_two_long_nights():
    nights = _nights(14, [8] * 12 + [11] * 2)
    fv = window_features(nights, anchor_after(DAY + dt.timedelta(days=14), "12:00"))
    assert fv["Dur_10"] == pytest.approx(100 * 2 / 14)
    assert round(fv["Dur_10"], 3) == 14.286


def test_empty_window_is_all_absent():
    fv = window_features([], anchor_after(DAY))
    assert fv.n_nights == 0
    assert all(math.isnan(fv[name]) for name in FEATURE_NAMES)


def test_window_is_half_open_on_offset():
    nights = _nights(20, [8] * 20)
    last = nights[13]
    anchor = Phq8Record("P1", last.offset_utc, 0, (0,) * 8)
    fv = window_features(nights, anchor)
    assert fv.n_nights == 14
    # a night ending exactly 14 days before the anchor is outside
    assert nights[0].offset_utc == anchor.completed_at - 13 * 86400
    anchor = Phq8Record("P1", last.offset_utc - 1e-3, 0, (0,) * 8)
    assert window_features(nights, anchor).n_nights == 13


def test_single_night_window_has_no_spread():
    fv = window_features(_nights(1, [8]), anchor_after(DAY + dt.timedelta(days=1)))
    assert fv.n_nights == 1
    assert all(math.isnan(fv[k]) for k in ("Std_dur", "Std_onset", "Std_offset"))
    assert fv["Sleep_dur"] == 8.0


def test_weekend_only_window_has_no_weekend_difference():
    sat = dt.date(2020, 3, 6)  # Friday night, wakes Saturday
    nights = _nights(2, [8, 9], start=sat)
    fv = window_features(nights, anchor_after(sat + dt.timedelta(days=2)))
    assert fv.n_nights == 2 and math.isnan(fv["WKD_diff"])


def test_rem_free_window_has_no_rem_latency():
    fv = window_features(_nights(5, [8] * 5), anchor_after(DAY + dt.timedelta(days=5)))
    assert math.isnan(fv["REM_L"]) and fv["REM_pct"] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_window_ignores_night_order(rnd):
    nights = _nights(14, [6, 7, 8, 9, 10, 11, 5, 6, 7, 8, 9, 10, 11, 12])
    shuffled = list(nights)
    rnd.shuffle(shuffled)
    anchor = anchor_after(DAY + dt.timedelta(days=13))
    a = window_features(nights, anchor).values
    b = window_features(shuffled, anchor).values
    for k in FEATURE_NAMES:
        assert a[k] == b[k] or (math.isnan(a[k]) and math.isnan(b[k]))


# --- inclusion ------------------------------------------------------------

def _frame(rows):
    return pd.DataFrame(rows, columns=["participant_id", "phq8_total", "n_nights"])


def test_inclusion_keeps_three_good_records():
    res = apply_inclusion(_frame([("A", 5.0, 12)] * 3))
    assert len(res.table) == 3 and res.report["rows_out"] == 3


def test_inclusion_drops_participant_below_three():
    rows = [("A", 5.0, 14), ("A", 5.0, 12), ("A", 5.0, 11), ("A", 5.0, 3), ("A", 5.0, 0)]
    res = apply_inclusion(_frame(rows))
    assert len(res.table) == 0
    assert res.report["dropped_insufficient_days"] == 3
    assert res.report["dropped_few_records"] == 2


def test_incomplete_record_dropped_first():
    rows = [("A", np.nan, 14)] + [("A", 5.0, 14)] * 3
    res = apply_inclusion(_frame(rows))
    assert res.report["dropped_incomplete_phq8"] == 1 and len(res.table) == 3


def test_min_days_zero_disables_criterion_two():
    rows = [("A", 5.0, 0)] * 3
    assert apply_inclusion(_frame(rows), min_days=0).report["dropped_insufficient_days"] == 0


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("ABCD"), st.one_of(st.just(np.nan), st.floats(0, 24)),
                          st.integers(0, 14)), max_size=40),
       st.integers(0, 14), st.integers(0, 5))
def test_inclusion_is_idempotent(rows, min_days, min_records):
    once = apply_inclusion(_frame(rows), min_days=min_days, min_records=min_records).table
    twice = apply_inclusion(once, min_days=min_days, min_records=min_records).table
    pd.testing.assert_frame_equal(once, twice)


# --- table I/O ------------------------------------------------------------

def _table():
    row = {c: np.nan for c in TABLE_COLUMNS}
    row.update(participant_id="A", site="KCL", completed_at_utc=1583431200.0, tz_offset_min=60,
               age=40.0, gender="female", education="below-degree", income="<15k",
               phq8_total=7.0, sleep_subscore=1.0, n_nights=13, Sleep_dur=7.123456789012345,
               Awake_5=2.0)
    return pd.DataFrame([row], columns=list(TABLE_COLUMNS))


def test_table_round_trip(tmp_path):
    table = _table()
    write_table(table, tmp_path / "t.csv")
    back = read_table(tmp_path / "t.csv")
    pd.testing.assert_frame_equal(back, table, check_dtype=False)
    text = (tmp_path / "t.csv").read_text().splitlines()
    assert text[0] == ",".join(TABLE_COLUMNS)
    assert "2020-03-05T18:00:00Z" in text[1] and ",7.123456789012345," in text[1]


def test_read_table_rejects_other_schema(tmp_path):
    (tmp_path / "t.csv").write_text("a,b\n1,2\n")
    with pytest.raises(SchemaError):
        read_table(tmp_path / "t.csv")
    with pytest.raises(FileNotFoundError):
        read_table(tmp_path / "missing.csv")
