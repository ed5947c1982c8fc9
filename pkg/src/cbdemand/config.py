"""Run configuration for the batch pipeline."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import pandas as pd
import yaml

from .evaluation import DEFAULT_QUANTILES

__all__ = ["ConfigError", "DataError", "RunConfig", "MODES"]

#: ablation modes: (lagged-target features, residual correction)
MODES = {
    "a": (False, True),
    "b": (True, False),
    "c": (True, True),
}


class ConfigError(ValueError):
    """Invalid run configuration."""


class DataError(ValueError):
    """Input data missing, malformed or empty after filtering."""


@dataclass
class RunConfig:
    """Everything a run depends on besides the input files themselves."""

    data_dir: str | None = None
    calendar_file: str = "calendar.csv"
    sales_file: str = "sales_train_evaluation.csv"
    prices_file: str = "sell_prices.csv"
    item_pattern: str | None = r"^FOODS_3_5\d\d$"
    stores: list[str] | None = None
    start_date: str = "2013-01-01"
    end_date: str = "2016-05-22"
    split_date: str = "2016-01-01"
    lag: int = 2
    residual_alpha: float = 0.15
    residual_clamp: tuple[float, float] = (0.05, 20.0)
    mode: str = "a"
    mean: dict = field(default_factory=lambda: {"max_cycles": 50, "convergence_tolerance": 1e-4,
                                                 "prior_weight": 10.0, "learning_damping": 1.0})
    width: dict = field(default_factory=lambda: {"max_cycles": 20, "nll_tolerance": 1e-5,
                                                  "prior_weight": 10.0})
    pit_bins: int = 100
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES
    seed: int = 0
    out: str = "out"
    predict_start: str | None = None
    predict_end: str | None = None
    decision: dict | None = None  # {"b": underage cost, "h": overage cost}
    figures: bool = True

    def __post_init__(self):
        self.residual_clamp = tuple(float(x) for x in self.residual_clamp)
        self.quantiles = tuple(float(q) for q in self.quantiles)
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {sorted(MODES)}, got {self.mode!r}")
        if int(self.lag) != self.lag or self.lag < 1:
            raise ConfigError("lag must be an integer >= 1")
        if not 0 < self.residual_alpha <= 1:
            raise ConfigError("residual_alpha must lie in (0, 1]")
        try:
            start, end, split = (pd.Timestamp(x) for x in (self.start_date, self.end_date, self.split_date))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad date: {exc}") from exc
        if not start < split <= end:
            raise ConfigError("split_date must lie inside (start_date, end_date]")
        q = list(self.quantiles)
        if not q or any(not 0 < x < 1 for x in q) or any(b <= a for a, b in zip(q, q[1:])):
            raise ConfigError("quantiles must be strictly increasing in (0, 1)")
        if self.pit_bins < 2:
            raise ConfigError("pit_bins must be >= 2")
        if self.decision is not None:
            b, h = self.decision.get("b"), self.decision.get("h")
            if not (isinstance(b, (int, float)) and isinstance(h, (int, float)) and b > 0 and h > 0):
                raise ConfigError("decision needs positive costs b and h")

    @property
    def lagged_target_features(self) -> bool:
        return MODES[self.mode][0]

    @property
    def residual_correction(self) -> bool:
        return MODES[self.mode][1]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["residual_clamp"] = list(self.residual_clamp)
        d["quantiles"] = list(self.quantiles)
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                doc = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(doc)

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig.from_dict(d)
