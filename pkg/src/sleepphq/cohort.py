"""Cohort data model, CSV ingestion/export and night assembly."""

from __future__ import annotations

import csv
import datetime as dt
import enum
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

__all__ = [
    "SleepStage",
    "NON_AWAKE",
    "NREM",
    "SleepEpisode",
    "NightRecord",
    "Phq8Record",
    "ParticipantProfile",
    "CohortDataset",
    "Diagnostic",
    "CohortError",
    "SchemaError",
    "DuplicateEpisodeError",
    "UnknownStageError",
    "EPISODES_HEADER",
    "PHQ8_HEADER",
    "DEMOGRAPHICS_HEADER",
    "EDUCATION_LEVELS",
    "INCOME_LEVELS",
    "parse_instant",
    "format_instant",
    "ingest_cohort",
    "write_cohort",
    "assemble_nights",
]

EPISODES_HEADER = ("participant_id", "stage", "start_utc", "tz_offset_min", "duration_s")
PHQ8_HEADER = ("participant_id", "completed_at_utc", "tz_offset_min") + tuple(
    f"q{i}" for i in range(1, 9)
)
DEMOGRAPHICS_HEADER = ("participant_id", "site", "age", "gender", "education", "income")

EDUCATION_LEVELS = ("below-degree", "degree-or-above")
INCOME_LEVELS = ("<15k", "15k-40k", ">40k", "not-mentioned")

SLEEP_ITEM = 2  # zero-based position of item 3


class SleepStage(enum.IntEnum):
    AWAKE = 0
    LIGHT = 1
    DEEP = 2
    REM = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def asleep(self) -> bool:
        return self is not SleepStage.AWAKE

    @classmethod
    def from_label(cls, label: str) -> "SleepStage":
        return _STAGE_BY_LABEL[label]


_STAGE_BY_LABEL = {s.label: s for s in SleepStage}
NON_AWAKE = frozenset({SleepStage.LIGHT, SleepStage.DEEP, SleepStage.REM})
NREM = frozenset({SleepStage.LIGHT, SleepStage.DEEP})


class CohortError(Exception):
    """Base class for ingestion failures."""


class SchemaError(CohortError):
    """Wrong header, wrong column count or an unparseable cell."""


class DuplicateEpisodeError(CohortError):
    pass


class UnknownStageError(CohortError):
    pass


_ERROR_BY_KIND = {
    "schema": SchemaError,
    "duplicate": DuplicateEpisodeError,
    "unknown-stage": UnknownStageError,
    "overlap": SchemaError,
}


@dataclass(frozen=True)
class Diagnostic:
    """A rejected input row. ``line`` is the 1-based line number in ``path``."""

    path: str
    line: int
    kind: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}:{self.line}: {self.kind}: {self.message}"


def parse_instant(text: str) -> float:
    """Parse an ISO-8601 timestamp into UTC epoch seconds.

    A trailing ``Z`` is accepted; naive timestamps are read as UTC.
    """
    s = text.strip()
    if s.endswith("Z") or s.endswith("z"):
        s = s[:-1] + "+00:00"
    value = dt.datetime.fromisoformat(s)
    if value.tzinfo is None:
        value = value.replace(tzinfo=dt.timezone.utc)
    return value.timestamp()


def format_instant(epoch: float) -> str:
    value = dt.datetime.fromtimestamp(epoch, tz=dt.timezone.utc)
    if value.microsecond:
        return value.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return value.strftime("%Y-%m-%dT%H:%M:%SZ")


def _format_number(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


@dataclass(frozen=True)
class SleepEpisode:
    """One contiguous stage interval.

    ``start`` is UTC epoch seconds, ``duration`` seconds; ``tz_offset_min``
    converts to local clock time.
    """

    stage: SleepStage
    start: float
    duration: float
    tz_offset_min: int = 0

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def local_start(self) -> float:
        return self.start + 60.0 * self.tz_offset_min


@dataclass(frozen=True)
class NightRecord:
    """The main sleep session of one noon-to-noon local day.

    ``onset`` and ``offset`` are hours since 12:00 local time on ``night_key``.
    """

    participant_id: str
    night_key: dt.date
    episodes: tuple[SleepEpisode, ...]
    onset: float
    offset: float
    tz_offset_min: int = 0

    @property
    def start(self) -> float:
        return self.episodes[0].start

    @property
    def end(self) -> float:
        return self.episodes[-1].end

    @property
    def noon_utc(self) -> float:
        return _local_noon_epoch(self.night_key) - 60.0 * self.tz_offset_min

    @property
    def offset_utc(self) -> float:
        """UTC instant of sleep offset."""
        return self.noon_utc + 3600.0 * self.offset

    @property
    def offset_weekday(self) -> int:
        """Local weekday of sleep offset, Monday = 0."""
        local = _local_noon_epoch(self.night_key) + 3600.0 * self.offset
        return dt.datetime.fromtimestamp(local, tz=dt.timezone.utc).weekday()


@dataclass(frozen=True)
class Phq8Record:
    participant_id: str
    completed_at: float
    tz_offset_min: int
    items: tuple[int | None, ...]

    @property
    def complete(self) -> bool:
        return len(self.items) == 8 and all(v is not None for v in self.items)

    @property
    def total(self) -> int | None:
        return sum(self.items) if self.complete else None

    @property
    def sleep_subscore(self) -> int | None:
        return self.items[SLEEP_ITEM]


@dataclass(frozen=True)
class ParticipantProfile:
    participant_id: str
    site: str
    age: float | None
    gender: str | None
    education: str | None
    income: str | None


@dataclass(frozen=True)
class CohortDataset:
    """Ingested cohort keyed by participant id.

    Episode and questionnaire tuples are sorted by time. ``diagnostics``
    lists rejected rows and does not take part in equality.
    """

    episodes: Mapping[str, tuple[SleepEpisode, ...]]
    phq8: Mapping[str, tuple[Phq8Record, ...]]
    profiles: Mapping[str, ParticipantProfile]
    diagnostics: tuple[Diagnostic, ...] = field(default=(), compare=False)

    @property
    def participants(self) -> list[str]:
        ids = set(self.episodes) | set(self.phq8) | set(self.profiles)
        return sorted(ids)


def _local_noon_epoch(day: dt.date) -> float:
    return (day.toordinal() - _EPOCH_ORDINAL) * 86400.0 + 43200.0


_EPOCH_ORDINAL = dt.date(1970, 1, 1).toordinal()


class _Reader:
    """Row iterator that checks the header and collects diagnostics."""

    def __init__(self, path, header, strict):
        self.path = os.fspath(path)
        self.header = header
        self.strict = strict
        self.diagnostics: list[Diagnostic] = []

    def reject(self, line, kind, message):
        diag = Diagnostic(self.path, line, kind, message)
        if self.strict:
            raise _ERROR_BY_KIND.get(kind, SchemaError)(str(diag))
        self.diagnostics.append(diag)

    def rows(self):
        if not os.path.isfile(self.path):
            raise FileNotFoundError(f"input file not found: {self.path}")
        with open(self.path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaError(f"{self.path}: empty file, expected header") from None
            if tuple(header) != self.header:
                raise SchemaError(
                    f"{self.path}: header {','.join(header)!r} != {','.join(self.header)!r}"
                )
            for row in reader:
                line = reader.line_num
                if not row:
                    continue
                if len(row) != len(self.header):
                    self.reject(
                        line, "schema", f"expected {len(self.header)} columns, got {len(row)}"
                    )
                    continue
                yield line, row


def _parse_int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def _read_episodes(path, strict):
    reader = _Reader(path, EPISODES_HEADER, strict)
    by_pid: dict[str, list[tuple[int, SleepEpisode]]] = {}
    for line, (pid, stage, start, tz, duration) in reader.rows():
        if not pid:
            reader.reject(line, "schema", "empty participant_id")
            continue
        if stage not in _STAGE_BY_LABEL:
            if stage.strip().lower() in _STAGE_BY_LABEL:
                reader.reject(line, "schema", f"malformed stage label {stage!r}")
            else:
                reader.reject(line, "unknown-stage", f"unknown stage label {stage!r}")
            continue
        try:
            episode = SleepEpisode(
                SleepStage.from_label(stage), parse_instant(start), float(duration), _parse_int(tz)
            )
        except ValueError as exc:
            reader.reject(line, "schema", str(exc))
            continue
        if not episode.duration > 0 or not math.isfinite(episode.duration):
            reader.reject(line, "schema", f"duration must be > 0, got {duration!r}")
            continue
        by_pid.setdefault(pid, []).append((line, episode))

    episodes = {}
    for pid, items in by_pid.items():
        items.sort(key=lambda item: (item[1].start, item[0]))
        kept: list[SleepEpisode] = []
        for line, ep in items:
            if kept and ep.start == kept[-1].start:
                reader.reject(line, "duplicate", f"duplicate episode start for {pid!r}")
                continue
            if kept and ep.start < kept[-1].end:
                reader.reject(line, "overlap", f"episode overlaps previous one for {pid!r}")
                continue
            kept.append(ep)
        episodes[pid] = tuple(kept)
    return episodes, reader.diagnostics


def _read_phq8(path, strict):
    reader = _Reader(path, PHQ8_HEADER, strict)
    by_pid: dict[str, list[Phq8Record]] = {}
    for line, row in reader.rows():
        pid, completed, tz = row[:3]
        if not pid:
            reader.reject(line, "schema", "empty participant_id")
            continue
        try:
            items = tuple(None if not cell.strip() else _parse_int(cell) for cell in row[3:])
            record = Phq8Record(pid, parse_instant(completed), _parse_int(tz), items)
        except ValueError as exc:
            reader.reject(line, "schema", str(exc))
            continue
        if any(v is not None and not 0 <= v <= 3 for v in items):
            reader.reject(line, "schema", f"item scores must lie in [0, 3], got {items}")
            continue
        by_pid.setdefault(pid, []).append(record)
    phq8 = {}
    for pid, records in by_pid.items():
        records.sort(key=lambda r: r.completed_at)
        phq8[pid] = tuple(records)
    return phq8, reader.diagnostics


def _read_demographics(path, strict):
    reader = _Reader(path, DEMOGRAPHICS_HEADER, strict)
    profiles: dict[str, ParticipantProfile] = {}
    for line, (pid, site, age, gender, education, income) in reader.rows():
        if not pid or not site:
            reader.reject(line, "schema", "participant_id and site must be non-empty")
            continue
        if pid in profiles:
            reader.reject(line, "duplicate", f"duplicate participant {pid!r}")
            continue
        if education and education not in EDUCATION_LEVELS:
            reader.reject(line, "schema", f"education {education!r} not in {EDUCATION_LEVELS}")
            continue
        if income and income not in INCOME_LEVELS:
            reader.reject(line, "schema", f"income {income!r} not in {INCOME_LEVELS}")
            continue
        try:
            age_value = float(age) if age.strip() else None
        except ValueError as exc:
            reader.reject(line, "schema", str(exc))
            continue
        profiles[pid] = ParticipantProfile(
            pid, site, age_value, gender or None, education or None, income or None
        )
    return profiles, reader.diagnostics


def ingest_cohort(episodes_path, phq8_path, demographics_path, strict: bool = False) -> CohortDataset:
    """Load the three cohort CSV files.

    Malformed rows are skipped and reported in ``CohortDataset.diagnostics``
    (or raised immediately with ``strict=True``). A wrong header raises
    :class:`SchemaError`; a missing file raises :class:`FileNotFoundError`.
    Questionnaires with blank items are kept; see :attr:`Phq8Record.complete`.
    """
    episodes, d1 = _read_episodes(episodes_path, strict)
    phq8, d2 = _read_phq8(phq8_path, strict)
    profiles, d3 = _read_demographics(demographics_path, strict)
    return CohortDataset(episodes, phq8, profiles, tuple(d1 + d2 + d3))


def write_cohort(dataset: CohortDataset, directory, names: Sequence[str] = (
    "episodes.csv", "phq8.csv", "demographics.csv"
)) -> tuple[Path, Path, Path]:
    """Write ``dataset`` as the three CSV files; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ep_path, phq_path, demo_path = (directory / n for n in names)

    with open(ep_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODES_HEADER)
        for pid, eps in dataset.episodes.items():
            for ep in eps:
                w.writerow([
                    pid, ep.stage.label, format_instant(ep.start), ep.tz_offset_min,
                    _format_number(ep.duration),
                ])
    with open(phq_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PHQ8_HEADER)
        for pid, records in dataset.phq8.items():
            for rec in records:
                w.writerow(
                    [pid, format_instant(rec.completed_at), rec.tz_offset_min]
                    + ["" if v is None else v for v in rec.items]
                )
    with open(demo_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DEMOGRAPHICS_HEADER)
        for pid, prof in dataset.profiles.items():
            w.writerow([
                pid, prof.site, _format_number(prof.age), prof.gender or "",
                prof.education or "", prof.income or "",
            ])
    return ep_path, phq_path, demo_path


def assemble_nights(
    episodes: Iterable[SleepEpisode],
    participant_id: str = "",
    gap_threshold_s: float = 3600.0,
    nap_threshold_s: float = 3600.0,
) -> list[NightRecord]:
    """Group an episode stream into one main-sleep :class:`NightRecord` per night.

    Consecutive episodes separated by more than ``gap_threshold_s`` start a
    new session; shorter gaps are filled with a synthetic awake episode.
    Sessions under ``nap_threshold_s`` or without any sleep stage are
    dropped, and each noon-to-noon local day keeps its longest session.
    Local time follows the first episode of the session.
    """
    ordered = sorted(episodes, key=lambda ep: ep.start)
    sessions: list[list[SleepEpisode]] = []
    for ep in ordered:
        if sessions:
            current = sessions[-1]
            gap = ep.start - current[-1].end
            if gap < 0:
                raise ValueError(
                    f"overlapping episodes at {format_instant(ep.start)} for {participant_id!r}"
                )
            if gap <= gap_threshold_s:
                if gap > 0:
                    current.append(
                        SleepEpisode(
                            SleepStage.AWAKE, current[-1].end, gap, current[-1].tz_offset_min
                        )
                    )
                current.append(ep)
                continue
        sessions.append([ep])

    best: dict[dt.date, list[SleepEpisode]] = {}
    for session in sessions:
        span = session[-1].end - session[0].start
        if span < nap_threshold_s or not any(ep.stage.asleep for ep in session):
            continue
        key = _night_key(session[0])
        held = best.get(key)
        if held is None or span > held[-1].end - held[0].start:
            best[key] = session

    nights = []
    for key in sorted(best):
        session = best[key]
        tz = session[0].tz_offset_min
        noon = _local_noon_epoch(key) - 60.0 * tz
        asleep = [ep for ep in session if ep.stage.asleep]
        nights.append(
            NightRecord(
                participant_id=participant_id,
                night_key=key,
                episodes=tuple(session),
                onset=(asleep[0].start - noon) / 3600.0,
                offset=(asleep[-1].end - noon) / 3600.0,
                tz_offset_min=tz,
            )
        )
    return nights


def _night_key(first: SleepEpisode) -> dt.date:
    local = first.local_start - 43200.0
    return dt.date.fromordinal(_EPOCH_ORDINAL + int(local // 86400))
