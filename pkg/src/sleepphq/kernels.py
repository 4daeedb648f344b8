"""Hot numeric kernels, each in a numba loop form and a vectorised numpy form.

``night_stage_totals`` and ``reml_normal_equations`` are bound at import time
to the numba variant unless ``SLEEPPHQ_DISABLE_NUMBA`` is set (see
:mod:`sleepphq._accel`). Both variants are importable for testing and
benchmarking.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

AWAKE, LIGHT, DEEP, REM = 0, 1, 2, 3

# night kernel output columns
COL_AWAKE, COL_LIGHT, COL_DEEP, COL_REM = 0, 1, 2, 3
COL_ONSET, COL_OFFSET, COL_FIRST_REM = 4, 5, 6
COL_AWAKENINGS, COL_MAX_WAKE = 7, 8
N_NIGHT_COLS = 9


@njit
def _night_stage_totals_loop(stages, durations, ptr, awake_threshold):
    n_nights = ptr.shape[0] - 1
    out = np.zeros((n_nights, N_NIGHT_COLS))
    for i in range(n_nights):
        a = ptr[i]
        b = ptr[i + 1]
        t = 0.0
        onset = np.nan
        offset = np.nan
        first_rem = np.nan
        for e in range(a, b):
            s = stages[e]
            d = durations[e]
            out[i, s] += d
            if s != AWAKE:
                if np.isnan(onset):
                    onset = t
                offset = t + d
                if s == REM and np.isnan(first_rem):
                    first_rem = t
            t += d
        # merged interior wake runs
        run = 0.0
        count = 0.0
        longest = 0.0
        t = 0.0
        for e in range(a, b):
            s = stages[e]
            d = durations[e]
            if s == AWAKE:
                if t >= onset and t + d <= offset:
                    run += d
            elif run > 0.0:
                if run > awake_threshold:
                    count += 1.0
                if run > longest:
                    longest = run
                run = 0.0
            t += d
        out[i, COL_ONSET] = onset
        out[i, COL_OFFSET] = offset
        out[i, COL_FIRST_REM] = first_rem
        out[i, COL_AWAKENINGS] = count
        out[i, COL_MAX_WAKE] = longest
    return out


def _night_stage_totals_numpy(stages, durations, ptr, awake_threshold):
    stages = np.asarray(stages, dtype=np.int64)
    durations = np.asarray(durations, dtype=np.float64)
    ptr = np.asarray(ptr, dtype=np.int64)
    n_nights = ptr.shape[0] - 1
    out = np.zeros((n_nights, N_NIGHT_COLS))
    if n_nights == 0:
        return out
    counts = np.diff(ptr)
    night = np.repeat(np.arange(n_nights), counts)

    totals = np.bincount(night * 4 + stages, weights=durations, minlength=4 * n_nights)
    out[:, :4] = totals.reshape(n_nights, 4)

    # running clock restarted at each night
    ends = np.cumsum(durations)
    base = np.zeros(n_nights)
    nonempty = counts > 0
    base[nonempty] = (ends - durations)[ptr[:-1][nonempty]]
    start = (ends - durations) - base[night]
    end = start + durations

    asleep = stages != AWAKE
    onset = np.full(n_nights, np.inf)
    offset = np.full(n_nights, -np.inf)
    first_rem = np.full(n_nights, np.inf)
    np.minimum.at(onset, night[asleep], start[asleep])
    np.maximum.at(offset, night[asleep], end[asleep])
    is_rem = stages == REM
    np.minimum.at(first_rem, night[is_rem], start[is_rem])
    onset[np.isinf(onset)] = np.nan
    offset[np.isinf(offset)] = np.nan
    first_rem[np.isinf(first_rem)] = np.nan

    with np.errstate(invalid="ignore"):
        interior = (~asleep) & (start >= onset[night]) & (end <= offset[night])
    # a run opens on an interior wake episode not preceded by one in the same night
    prev_interior = np.concatenate(([False], interior[:-1]))
    new_night = np.zeros(len(stages), dtype=bool)
    new_night[ptr[:-1][nonempty]] = True
    opens = interior & (~prev_interior | new_night)
    run_id = np.cumsum(opens) - 1
    n_runs = int(opens.sum())
    if n_runs:
        run_len = np.bincount(run_id[interior], weights=durations[interior], minlength=n_runs)
        run_night = night[opens]
        out[:, COL_AWAKENINGS] = np.bincount(
            run_night, weights=(run_len > awake_threshold).astype(float), minlength=n_nights
        )
        longest = np.zeros(n_nights)
        np.maximum.at(longest, run_night, run_len)
        out[:, COL_MAX_WAKE] = longest
    out[:, COL_ONSET] = onset
    out[:, COL_OFFSET] = offset
    out[:, COL_FIRST_REM] = first_rem
    return out


@njit
def _reml_normal_equations_loop(sizes, means, site, n_sites, within, theta1, theta2):
    n_groups, q = means.shape
    weight = np.empty(n_groups)
    site_weight = np.zeros(n_sites)
    site_mean = np.zeros((n_sites, q))
    logdet = 0.0
    for j in range(n_groups):
        w = sizes[j] / (1.0 + theta1 * sizes[j])
        weight[j] = w
        logdet += np.log1p(theta1 * sizes[j])
        k = site[j]
        site_weight[k] += w
        for c in range(q):
            site_mean[k, c] += w * means[j, c]
    for k in range(n_sites):
        if site_weight[k] > 0.0:
            for c in range(q):
                site_mean[k, c] /= site_weight[k]
    out = within.copy()
    dev = np.empty(q)
    for j in range(n_groups):
        k = site[j]
        for c in range(q):
            dev[c] = means[j, c] - site_mean[k, c]
        w = weight[j]
        for a in range(q):
            for b in range(q):
                out[a, b] += w * dev[a] * dev[b]
    for k in range(n_sites):
        d = site_weight[k]
        logdet += np.log1p(theta2 * d)
        g = d / (1.0 + theta2 * d)
        for a in range(q):
            for b in range(q):
                out[a, b] += g * site_mean[k, a] * site_mean[k, b]
    return out, logdet


def _reml_normal_equations_numpy(sizes, means, site, n_sites, within, theta1, theta2):
    weight = sizes / (1.0 + theta1 * sizes)
    site_weight = np.bincount(site, weights=weight, minlength=n_sites)
    site_mean = np.zeros((n_sites, means.shape[1]))
    np.add.at(site_mean, site, weight[:, None] * means)
    nz = site_weight > 0
    site_mean[nz] /= site_weight[nz, None]
    dev = means - site_mean[site]
    out = within + (dev * weight[:, None]).T @ dev
    g = site_weight / (1.0 + theta2 * site_weight)
    out = out + (site_mean * g[:, None]).T @ site_mean
    logdet = np.log1p(theta1 * sizes).sum() + np.log1p(theta2 * site_weight).sum()
    return out, float(logdet)


def night_stage_totals_numba(stages, durations, ptr, awake_threshold):
    return _night_stage_totals_loop(
        np.ascontiguousarray(stages, dtype=np.int64),
        np.ascontiguousarray(durations, dtype=np.float64),
        np.ascontiguousarray(ptr, dtype=np.int64),
        float(awake_threshold),
    )


def reml_normal_equations_numba(sizes, means, site, n_sites, within, theta1, theta2):
    return _reml_normal_equations_loop(
        np.ascontiguousarray(sizes, dtype=np.float64),
        np.ascontiguousarray(means, dtype=np.float64),
        np.ascontiguousarray(site, dtype=np.int64),
        int(n_sites),
        np.ascontiguousarray(within, dtype=np.float64),
        float(theta1),
        float(theta2),
    )


night_stage_totals_numpy = _night_stage_totals_numpy
reml_normal_equations_numpy = _reml_normal_equations_numpy

if USE_NUMBA:
    night_stage_totals = night_stage_totals_numba
    reml_normal_equations = reml_normal_equations_numba
else:
    night_stage_totals = night_stage_totals_numpy
    reml_normal_equations = reml_normal_equations_numpy

night_stage_totals.__doc__ = """Per-night stage totals and timing from a CSR-packed episode stream.

Parameters
----------
stages : array of int
    Stage codes (0 awake, 1 light, 2 deep, 3 REM), nights concatenated.
durations : array of float
    Episode durations in seconds; episodes of a night must abut.
ptr : array of int
    Night boundaries; night ``i`` owns ``stages[ptr[i]:ptr[i + 1]]``.
awake_threshold : float
    Interior wake runs strictly longer than this (seconds) are counted.

Returns
-------
ndarray, shape (n_nights, 9)
    Columns: awake, light, deep, REM seconds; onset and offset seconds from
    session start; first REM start (NaN if none); awakening count; longest
    interior wake run.
"""

reml_normal_equations.__doc__ = """Weighted cross-product ``W' V^-1 W`` and ``log|V|`` for nested random intercepts.

``V = I + theta1 * Z_p Z_p' + theta2 * Z_s Z_s'`` with participants nested in
sites. Inputs are the per-participant sufficient statistics: row counts,
column means of ``W = [X y]``, site index, and the pooled within-participant
scatter of ``W``.
"""
