"""Fixture builders shared by the test modules."""

import datetime as dt

import numpy as np

from sleepphq.cohort import SleepEpisode, SleepStage, assemble_nights

UTC = dt.timezone.utc
STAGES = {"awake": SleepStage.AWAKE, "light": SleepStage.LIGHT,
          "deep": SleepStage.DEEP, "rem": SleepStage.REM}


def local_instant(day, hhmm, tz_min=0):
    """UTC epoch of local clock ``hhmm`` in the noon-to-noon day of ``day``.

    Times before noon belong to the following calendar date.
    """
    h, m = (int(v) for v in hhmm.split(":"))
    date = day if h >= 12 else day + dt.timedelta(days=1)
    local = dt.datetime(date.year, date.month, date.day, h, m, tzinfo=UTC).timestamp()
    return local - 60 * tz_min


def episodes_from_clock(day, segments, tz_min=0):
    """``segments`` = [(stage, "HH:MM", "HH:MM"), ...] in local clock time."""
    out = []
    for label, a, b in segments:
        start = local_instant(day, a, tz_min)
        end = local_instant(day, b, tz_min)
        if end <= start:
            end += 86400
        out.append(SleepEpisode(STAGES[label], start, end - start, tz_min))
    return out


def night_from_clock(day, segments, tz_min=0, pid="P1"):
    nights = assemble_nights(episodes_from_clock(day, segments, tz_min), pid)
    assert len(nights) == 1
    return nights[0]


def random_night_episodes(rng, day, tz_min):
    """Random contiguous integer-second night with at least one sleep episode.

    Returns ``(SleepEpisode list, oracle tuples)``.
    """
    start_local_h = rng.uniform(18.0, 28.0)  # 18:00 to 04:00
    noon = dt.datetime(day.year, day.month, day.day, 12, tzinfo=UTC).timestamp()
    t = int(noon + (start_local_h - 12.0) * 3600.0) - 60 * tz_min
    n = int(rng.integers(1, 40))
    budget = int(rng.integers(3600, 14 * 3600))
    weights = rng.dirichlet(np.ones(n))
    durations = np.maximum(1, np.round(weights * budget)).astype(int)
    # short awake runs cluster around the 5 and 30 minute thresholds
    stages = rng.choice(4, size=n, p=[0.35, 0.3, 0.15, 0.2])
    for i in np.flatnonzero(stages == 0):
        if rng.random() < 0.5:
            durations[i] = int(rng.choice([299, 300, 301, 1799, 1800, 1801, 60, 150]))
    if durations.sum() < 3600:
        durations[-1] += 3600 - durations.sum()
    if not (stages != 0).any():
        stages[int(rng.integers(n))] = int(rng.integers(1, 4))
    eps, tuples = [], []
    for s, d in zip(stages, durations):
        eps.append(SleepEpisode(SleepStage(int(s)), float(t), float(d), tz_min))
        tuples.append((int(s), t, int(d)))
        t += int(d)
    return eps, tuples
