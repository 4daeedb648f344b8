"""Run configuration: flat ``key = value`` files and report headers."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .synth import ConfigError

__all__ = ["RunConfig", "read_kv_file", "parse_kv_lines", "read_report_config"]

PREDICTOR_CHOICES = {"phq8": "phq8_total", "subscore": "sleep_subscore"}


@dataclass
class RunConfig:
    """Pipeline settings. Defaults reproduce the published analysis settings."""

    episodes: str = ""
    phq8: str = ""
    demographics: str = ""
    table: str = ""
    out_dir: str = "."
    window_days: int = 14
    min_days: int = 12
    min_records: int = 3
    predictor: str = "both"
    grouping: str = "both"
    bh_level: float = 0.05
    box_cox: str = "auto"
    skew_threshold: float = 1.0
    gap_threshold_min: float = 60.0
    nap_threshold_min: float = 60.0
    report_formats: str = "tsv"

    # out_dir is where results go, not how they are computed
    HEADER_EXCLUDE = ("out_dir",)

    def validate(self) -> None:
        if self.predictor not in ("phq8", "subscore", "both"):
            raise ConfigError(f"predictor must be phq8, subscore or both, got {self.predictor!r}")
        if self.grouping not in ("pooled", "per-site", "both"):
            raise ConfigError(f"grouping must be pooled, per-site or both, got {self.grouping!r}")
        if not 0 < self.bh_level < 1:
            raise ConfigError(f"bh_level must lie in (0, 1), got {self.bh_level}")
        if self.window_days <= 0 or self.min_days < 0 or self.min_records < 0:
            raise ConfigError("window_days must be > 0; min_days and min_records >= 0")
        if self.box_cox not in ("off", "auto"):
            try:
                float(self.box_cox)
            except ValueError:
                raise ConfigError(f"box_cox must be off, auto or a number, got {self.box_cox!r}") from None
        for fmt in self.formats:
            if fmt not in ("tsv", "md"):
                raise ConfigError(f"unknown report format {fmt!r}")

    @property
    def formats(self) -> tuple[str, ...]:
        return tuple(f.strip() for f in self.report_formats.split(",") if f.strip())

    @property
    def predictors(self) -> list[str]:
        if self.predictor == "both":
            return list(PREDICTOR_CHOICES.values())
        return [PREDICTOR_CHOICES[self.predictor]]

    @property
    def box_cox_mode(self) -> str | float:
        return self.box_cox if self.box_cox in ("off", "auto") else float(self.box_cox)

    def header_lines(self) -> list[str]:
        return [
            f"{f.name} = {getattr(self, f.name)}"
            for f in dataclasses.fields(self)
            if f.name not in self.HEADER_EXCLUDE
        ]

    def updated(self, **overrides) -> "RunConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        return self.from_mapping(clean, base=self)

    @classmethod
    def from_mapping(cls, mapping: dict, base: "RunConfig | None" = None) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = dataclasses.asdict(base) if base is not None else {}
        for key, raw in mapping.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kind = type(fields[key].default)
            try:
                values[key] = kind(raw) if kind is not str else str(raw)
            except ValueError:
                raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None
        cfg = cls(**values)
        cfg.validate()
        return cfg


def parse_kv_lines(lines) -> dict[str, str]:
    """``key = value`` pairs; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {text!r}")
        key, value = text.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_kv_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_kv_lines(path.read_text(encoding="utf-8").splitlines())


def read_report_config(path) -> RunConfig:
    """Recover the :class:`RunConfig` recorded in a report's comment header."""
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    mapping = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.startswith("# "):
            break
        body = line[2:]
        if "=" in body:
            key, value = (s.strip() for s in body.split("=", 1))
            if key in fields:
                mapping[key] = value
    return RunConfig.from_mapping(mapping)
