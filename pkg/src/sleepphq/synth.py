"""Synthetic multi-site cohorts with known sleep/PHQ-8 coupling.

Each targetable night quantity follows the three-level model

    value = baseline + site intercept + participant intercept
            + beta * PHQ-8 total + record residual + night noise

with the night noise centred within each questionnaire's block of nights, so
that the window mean realises the record-level target when no night is
dropped. Episode lists are built backwards from the per-night targets.
"""

from __future__ import annotations

import copy
import dataclasses
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .cohort import (
    INCOME_LEVELS,
    CohortDataset,
    ParticipantProfile,
    Phq8Record,
    SleepEpisode,
    SleepStage,
    write_cohort,
)

__all__ = [
    "ConfigError",
    "FeatureProcess",
    "SynthConfig",
    "SynthCohort",
    "TARGETABLE",
    "simulate_cohort",
    "simulate_analysis_table",
]

TARGETABLE = ("Sleep_dur", "Awake_pct", "Deep_pct", "REM_pct", "Av_onset")
BOUNDS = {
    "Sleep_dur": (1.5, 14.0),
    "Awake_pct": (0.5, 45.0),
    "Deep_pct": (1.0, 40.0),
    "REM_pct": (1.0, 40.0),
    "Av_onset": (4.0, 20.0),
}
MAX_STAGE_PCT = 90.0  # awake + deep + REM share of time in bed
MAX_TIB_H = 16.0
MAX_SESSION_END_H = 23.75
MIN_SESSION_START_H = 1.0
DEFAULT_SITES = ("KCL", "CIBER", "VUmc")
DEFAULT_TZ = {"KCL": 0, "CIBER": 60, "VUmc": 60}


class ConfigError(ValueError):
    pass


@dataclass
class FeatureProcess:
    baseline: float
    beta: float = 0.0
    var_site: float = 0.0
    var_participant: float = 0.0
    var_residual: float = 0.0
    var_night: float = 0.0

    @property
    def var_total(self) -> float:
        return self.var_site + self.var_participant + self.var_residual + self.var_night


def _default_processes():
    return {
        "Sleep_dur": FeatureProcess(7.2, 0.0, 0.04, 0.36, 0.09, 0.64),
        "Awake_pct": FeatureProcess(10.0, 0.0, 0.25, 2.25, 0.5, 2.0),
        "Deep_pct": FeatureProcess(14.0, 0.0, 0.25, 4.0, 1.0, 4.0),
        "REM_pct": FeatureProcess(20.0, 0.0, 0.25, 4.0, 1.0, 4.0),
        "Av_onset": FeatureProcess(11.25, 0.0, 0.09, 0.5, 0.1, 0.36),
    }


@dataclass
class SynthConfig:
    """Generator settings. ``seed`` determines the output completely.

    ``coupling`` maps a targetable feature to its true PHQ-8 slope and
    overrides ``processes[feature].beta``.
    """

    seed: int = 0
    n_sites: int = 3
    participants_per_site: int = 20
    records_per_participant: int = 8
    record_spacing_days: int = 14
    start_date: str = "2019-01-07"
    site_names: tuple[str, ...] = ()
    site_tz_offset_min: tuple[int, ...] = ()
    phq8_mean: float = 9.0
    phq8_var_site: float = 4.0
    phq8_var_participant: float = 16.0
    phq8_var_residual: float = 9.0
    processes: dict = field(default_factory=_default_processes)
    coupling: dict = field(default_factory=dict)
    awakenings_mean: float = 3.0
    night_drop: float = 0.0
    phq8_drop: float = 0.0
    item_drop: float = 0.0
    age_mean: float = 45.0
    age_sd: float = 14.0
    p_female: float = 0.75
    p_degree: float = 0.45
    income_probs: tuple[float, ...] = (0.25, 0.45, 0.25, 0.05)

    def sites(self) -> tuple[str, ...]:
        if self.site_names:
            return tuple(self.site_names)
        if self.n_sites <= len(DEFAULT_SITES):
            return DEFAULT_SITES[: self.n_sites]
        return tuple(f"S{k + 1}" for k in range(self.n_sites))

    def site_tz(self) -> tuple[int, ...]:
        if self.site_tz_offset_min:
            return tuple(self.site_tz_offset_min)
        return tuple(DEFAULT_TZ.get(s, 0) for s in self.sites())

    def resolved_processes(self) -> dict[str, FeatureProcess]:
        procs = {k: copy.copy(v) for k, v in self.processes.items()}
        for name, beta in self.coupling.items():
            procs[name].beta = float(beta)
        return procs

    @property
    def phq8_sd(self) -> float:
        return math.sqrt(self.phq8_var_site + self.phq8_var_participant + self.phq8_var_residual)

    def validate(self) -> None:
        """Raise :class:`ConfigError` for an invalid or infeasible configuration."""
        for name in ("night_drop", "phq8_drop", "item_drop", "p_female", "p_degree"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("n_sites", "participants_per_site", "records_per_participant",
                     "record_spacing_days"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if len(self.sites()) != self.n_sites:
            raise ConfigError("site_names must have n_sites entries")
        if len(self.site_tz()) != self.n_sites:
            raise ConfigError("site_tz_offset_min must have n_sites entries")
        if len(self.income_probs) != len(INCOME_LEVELS) or any(p < 0 for p in self.income_probs) \
                or not math.isclose(sum(self.income_probs), 1.0, abs_tol=1e-9):
            raise ConfigError("income_probs must be 4 non-negative numbers summing to 1")
        if min(self.phq8_var_site, self.phq8_var_participant, self.phq8_var_residual) < 0:
            raise ConfigError("PHQ-8 variances must be >= 0")
        if self.awakenings_mean < 0:
            raise ConfigError("awakenings_mean must be >= 0")
        try:
            dt.date.fromisoformat(self.start_date)
        except ValueError as exc:
            raise ConfigError(f"start_date: {exc}") from None
        unknown = set(self.coupling) - set(TARGETABLE)
        if unknown:
            raise ConfigError(
                f"cannot couple {sorted(unknown)} directly; targetable features: {TARGETABLE}"
            )
        if set(self.processes) != set(TARGETABLE):
            raise ConfigError(f"processes must define exactly {TARGETABLE}")
        procs = self.resolved_processes()
        for name, proc in procs.items():
            if min(proc.var_site, proc.var_participant, proc.var_residual, proc.var_night) < 0:
                raise ConfigError(f"{name}: variances must be >= 0")
        ranges = self.target_ranges()
        for name, (lo, hi) in ranges.items():
            blo, bhi = BOUNDS[name]
            if lo < blo or hi > bhi:
                raise ConfigError(
                    f"infeasible {name}: targets span [{lo:.3g}, {hi:.3g}], "
                    f"outside feasible [{blo}, {bhi}]"
                )
        top = sum(ranges[n][1] for n in ("Awake_pct", "Deep_pct", "REM_pct"))
        if top > MAX_STAGE_PCT:
            raise ConfigError(
                f"infeasible stage proportions: awake + deep + REM can reach {top:.3g}% "
                f"of time in bed (limit {MAX_STAGE_PCT}%)"
            )

    def target_ranges(self) -> dict[str, tuple[float, float]]:
        """Plausible per-night span of each target: PHQ-8 and noise at +/- 3 SD."""
        phq_lo = max(0.0, self.phq8_mean - 3 * self.phq8_sd)
        phq_hi = min(24.0, self.phq8_mean + 3 * self.phq8_sd)
        out = {}
        for name, proc in self.resolved_processes().items():
            ends = (proc.beta * phq_lo, proc.beta * phq_hi)
            spread = 3 * math.sqrt(proc.var_total)
            out[name] = (proc.baseline + min(ends) - spread, proc.baseline + max(ends) + spread)
        return out

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["site_names"] = list(self.sites())
        d["site_tz_offset_min"] = list(self.site_tz())
        return d

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SynthConfig":
        """Build from flat keys; ``coupling.<feature>`` and ``<field>.<feature>``
        (``baseline``, ``var_site``, ...) address per-feature settings."""
        cfg = cls()
        scalar = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in mapping.items():
            if "." in key:
                group, feature = key.split(".", 1)
                if group == "coupling":
                    cfg.coupling[feature] = float(value)
                elif group in {f.name for f in dataclasses.fields(FeatureProcess)}:
                    if feature not in cfg.processes:
                        raise ConfigError(f"unknown feature {feature!r} in {key!r}")
                    setattr(cfg.processes[feature], group, float(value))
                else:
                    raise ConfigError(f"unknown key {key!r}")
            elif key in scalar and key not in ("processes", "coupling"):
                setattr(cfg, key, _coerce(scalar[key], value, key))
            else:
                raise ConfigError(f"unknown key {key!r}")
        return cfg


def _coerce(f, value, key):
    default = f.default if f.default is not dataclasses.MISSING else None
    try:
        if isinstance(default, bool):
            return str(value).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            items = value if isinstance(value, (list, tuple)) else str(value).split(",")
            items = [s.strip() if isinstance(s, str) else s for s in items if s != ""]
            if key == "income_probs":
                return tuple(float(s) for s in items)
            if key == "site_tz_offset_min":
                return tuple(int(s) for s in items)
            return tuple(str(s) for s in items)
        return str(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


@dataclass
class SynthCohort:
    dataset: CohortDataset
    truth: dict

    def write(self, directory) -> tuple[Path, ...]:
        paths = write_cohort(self.dataset, directory)
        truth_path = Path(directory) / "truth.json"
        truth_path.write_text(json.dumps(self.truth, indent=1, sort_keys=True) + "\n")
        return (*paths, truth_path)


def _split_int(total: int, weights) -> np.ndarray:
    """Integer parts of ``total`` proportional to ``weights`` (largest remainder)."""
    weights = np.asarray(weights, dtype=float)
    if total <= 0 or len(weights) == 0:
        return np.zeros(len(weights), dtype=np.int64)
    raw = total * weights / weights.sum()
    parts = np.floor(raw).astype(np.int64)
    short = int(total - parts.sum())
    if short:
        order = np.argsort(-(raw - parts), kind="stable")
        parts[order[:short]] += 1
    return parts


def _allocate_items(rng, total: int) -> list[int]:
    items = [0] * 8
    for _ in range(total):
        open_items = [i for i in range(8) if items[i] < 3]
        items[open_items[int(rng.integers(len(open_items)))]] += 1
    return items


_EPOCH = dt.date(1970, 1, 1)


def _local_noon(day: dt.date) -> int:
    return (day - _EPOCH).days * 86400 + 43200


def _night_episodes(rng, night_key, tz, targets, n_awakenings):
    """Episode list realising one night's targets to within a second."""
    sleep_h = targets["Sleep_dur"]
    awake_pct = targets["Awake_pct"]
    deep_pct = targets["Deep_pct"]
    rem_pct = targets["REM_pct"]
    onset_h = targets["Av_onset"]

    tib_s = int(round(sleep_h * 3600.0 / (1.0 - awake_pct / 100.0)))
    awake_s = int(round(awake_pct / 100.0 * tib_s))
    deep_s = int(round(deep_pct / 100.0 * tib_s))
    rem_s = int(round(rem_pct / 100.0 * tib_s))
    light_s = tib_s - awake_s - deep_s - rem_s

    k = n_awakenings
    wake = _split_int(awake_s, rng.dirichlet(np.ones(k + 2)))
    lead, trail, interior = int(wake[0]), int(wake[1]), wake[2:]
    bouts = rng.dirichlet(np.full(k + 1, 4.0))
    deep = _split_int(deep_s, bouts)
    rem = _split_int(rem_s, bouts)
    light = _split_int(light_s, bouts)

    onset_local = _local_noon(night_key) + int(round(onset_h * 3600.0))
    max_lead = onset_local - (_local_noon(night_key) + int(MIN_SESSION_START_H * 3600))
    if lead > max_lead:
        trail += lead - max(max_lead, 0)
        lead = max(max_lead, 0)

    segments = [(SleepStage.AWAKE, lead)]
    for b in range(k + 1):
        half = int(light[b]) // 2
        segments += [
            (SleepStage.LIGHT, half),
            (SleepStage.DEEP, int(deep[b])),
            (SleepStage.LIGHT, int(light[b]) - half),
            (SleepStage.REM, int(rem[b])),
        ]
        if b < k:
            segments.append((SleepStage.AWAKE, int(interior[b])))
    segments.append((SleepStage.AWAKE, trail))

    merged: list[list] = []
    for stage, dur in segments:
        if dur <= 0:
            continue
        if merged and merged[-1][0] is stage:
            merged[-1][1] += dur
        else:
            merged.append([stage, dur])

    t = onset_local - lead - 60 * tz
    episodes = []
    for stage, dur in merged:
        episodes.append(SleepEpisode(stage, float(t), float(dur), tz))
        t += dur
    return episodes


def _clip_night(values: dict) -> dict:
    v = {name: float(np.clip(values[name], *BOUNDS[name])) for name in TARGETABLE}
    stage_sum = v["Awake_pct"] + v["Deep_pct"] + v["REM_pct"]
    if stage_sum > MAX_STAGE_PCT:
        scale = (MAX_STAGE_PCT - v["Awake_pct"]) / (v["Deep_pct"] + v["REM_pct"])
        v["Deep_pct"] *= scale
        v["REM_pct"] *= scale
    tib = v["Sleep_dur"] / (1.0 - v["Awake_pct"] / 100.0)
    if tib > MAX_TIB_H:
        v["Sleep_dur"] = MAX_TIB_H * (1.0 - v["Awake_pct"] / 100.0)
        tib = MAX_TIB_H
    v["Av_onset"] = min(v["Av_onset"], MAX_SESSION_END_H - tib)
    return v


def _draw_site_effects(config):
    rng = np.random.default_rng([config.seed, 0])
    procs = config.resolved_processes()
    effects = []
    for _ in config.sites():
        eff = {"phq8": float(rng.normal(0.0, math.sqrt(config.phq8_var_site)))}
        for name in TARGETABLE:
            eff[name] = float(rng.normal(0.0, math.sqrt(procs[name].var_site)))
        effects.append(eff)
    return effects


def _draw_participant(config, rng, site, site_effect, pid, start):
    """Latent draws of one participant: profile, intercepts, questionnaires, targets."""
    procs = config.resolved_processes()
    age = int(np.clip(round(rng.normal(config.age_mean, config.age_sd)), 18, 90))
    gender = "female" if rng.random() < config.p_female else "male"
    education = "degree-or-above" if rng.random() < config.p_degree else "below-degree"
    income = INCOME_LEVELS[int(rng.choice(len(INCOME_LEVELS), p=config.income_probs))]
    profile = ParticipantProfile(pid, site, float(age), gender, education, income)

    start = start + dt.timedelta(days=int(rng.integers(0, 28)))
    intercepts = {"phq8": float(rng.normal(0.0, math.sqrt(config.phq8_var_participant)))}
    for name in TARGETABLE:
        intercepts[name] = float(rng.normal(0.0, math.sqrt(procs[name].var_participant)))
    rate = float(rng.gamma(4.0, config.awakenings_mean / 4.0)) if config.awakenings_mean > 0 else 0.0

    records = []
    for i in range(config.records_per_participant):
        latent = (config.phq8_mean + site_effect["phq8"] + intercepts["phq8"]
                  + rng.normal(0.0, math.sqrt(config.phq8_var_residual)))
        total = int(np.clip(round(latent), 0, 24))
        items = _allocate_items(rng, total)
        dropped_items = rng.random(8) < config.item_drop
        written = bool(rng.random() >= config.phq8_drop)
        day = start + dt.timedelta(days=config.record_spacing_days * (i + 1))
        seconds = int(rng.integers(13 * 3600, 21 * 3600))
        targets = {}
        for name in TARGETABLE:
            proc = procs[name]
            targets[name] = float(
                proc.baseline + site_effect[name] + intercepts[name] + proc.beta * total
                + rng.normal(0.0, math.sqrt(proc.var_residual))
            )
        records.append({
            "index": i,
            "day": day,
            "local_seconds": seconds,
            "phq8_total": total,
            "items": items,
            "item_mask": dropped_items,
            "written": written,
            "targets": targets,
        })
    return profile, start, intercepts, rate, records


def _iter_participants(config):
    config.validate()
    site_effects = _draw_site_effects(config)
    start0 = dt.date.fromisoformat(config.start_date)
    g = 0
    for k, site in enumerate(config.sites()):
        for j in range(config.participants_per_site):
            pid = f"{site}-{j + 1:04d}"
            rng = np.random.default_rng([config.seed, 1, g])
            latent = _draw_participant(config, rng, site, site_effects[k], pid, start0)
            yield k, site, pid, rng, latent
            g += 1


def simulate_analysis_table(config: SynthConfig) -> pd.DataFrame:
    """Record-level table straight from the generating model (no episodes).

    Columns: participant id, site, covariates, ``phq8_total``,
    ``sleep_subscore`` and one column per targetable feature holding its
    record-level target. Draws are identical to :func:`simulate_cohort` for
    the same seed.
    """
    rows = []
    for _, site, pid, _, (profile, _, _, _, records) in _iter_participants(config):
        for rec in records:
            rows.append({
                "participant_id": pid,
                "site": site,
                "age": profile.age,
                "gender": profile.gender,
                "education": profile.education,
                "income": profile.income,
                "phq8_total": float(rec["phq8_total"]),
                "sleep_subscore": float(rec["items"][2]),
                **rec["targets"],
            })
    return pd.DataFrame(rows)


def simulate_cohort(config: SynthConfig, out_dir=None) -> SynthCohort:
    """Generate a cohort; write the three CSV files and ``truth.json`` if ``out_dir``."""
    config.validate()
    procs = config.resolved_processes()
    tz_by_site = dict(zip(config.sites(), config.site_tz()))
    episodes: dict[str, tuple] = {}
    phq8: dict[str, tuple] = {}
    profiles: dict[str, ParticipantProfile] = {}
    truth_participants = {}
    truth_records = []
    window = config.record_spacing_days

    for _, site, pid, rng, latent in _iter_participants(config):
        profile, start, intercepts, rate, records = latent
        tz = tz_by_site[site]
        profiles[pid] = profile
        truth_participants[pid] = {"site": site, "intercepts": intercepts}
        p_episodes = []
        p_records = []
        for rec in records:
            block = [start + dt.timedelta(days=window * rec["index"] + d) for d in range(window)]
            noise = {}
            for name in TARGETABLE:
                eta = rng.normal(0.0, math.sqrt(procs[name].var_night), size=window)
                noise[name] = eta - eta.mean()
            anchor = _local_noon(rec["day"]) - 43200 + rec["local_seconds"] - 60 * tz
            kept = 0
            for d, night_key in enumerate(block):
                values = _clip_night({n: rec["targets"][n] + noise[n][d] for n in TARGETABLE})
                n_awk = int(rng.poisson(rate))
                night = _night_episodes(rng, night_key, tz, values, n_awk)
                if rng.random() < config.night_drop:
                    continue
                p_episodes.extend(night)
                offset_utc = max(ep.end for ep in night if ep.stage.asleep)
                if anchor - window * 86400 < offset_utc <= anchor:
                    kept += 1
            items = [None if m else v for v, m in zip(rec["items"], rec["item_mask"])]
            if rec["written"]:
                p_records.append(Phq8Record(pid, float(anchor), tz, tuple(items)))
            truth_records.append({
                "participant_id": pid,
                "index": rec["index"],
                "completed_at_utc": float(anchor),
                "written": rec["written"],
                "complete": rec["written"] and all(v is not None for v in items),
                "phq8_total": rec["phq8_total"],
                "n_nights": kept,
                "targets": rec["targets"],
            })
        episodes[pid] = tuple(p_episodes)
        phq8[pid] = tuple(p_records)

    site_effects = _draw_site_effects(config)
    truth = {
        "config": config.to_dict(),
        "features": {
            name: {**dataclasses.asdict(procs[name]), "beta_true": procs[name].beta}
            for name in TARGETABLE
        },
        "site_intercepts": dict(zip(config.sites(), site_effects)),
        "participants": truth_participants,
        "records": truth_records,
    }
    cohort = SynthCohort(CohortDataset(episodes, phq8, profiles), truth)
    if out_dir is not None:
        cohort.write(out_dir)
    return cohort
