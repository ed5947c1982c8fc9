"""End-to-end training, forecasting and evaluation on a sample table."""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .cb_mean import MeanModel, MeanTrainConfig, explain_mean, fit_mean, predict_mean
from .cb_width import WidthModel, WidthTrainConfig, explain_width, fit_width, predict_inv_dispersion
from .config import ConfigError, DataError, RunConfig
from .decision import CostFunction, decisions
from .distributions import NegBinArray, nbd_quantile_array
from .evaluation import calibration_report, profile_histogram, write_calibration_csv, write_profile_csv
from .features import (
    BinLayout,
    FeatureSpec,
    apply_bins,
    build_calendar_features,
    build_event_windows,
    build_price_features,
    fit_bins,
    resolve_provenance,
)
from .m5 import calendar_events
from .residual_correction import correction_factors, grouped_lagged_ewma

__all__ = [
    "ARTIFACT_VERSION",
    "ForecastModel",
    "build_raw_features",
    "mean_feature_specs",
    "width_feature_specs",
    "train",
    "predict",
    "evaluate",
    "run_experiment",
    "StageError",
]

_logger = logging.getLogger(__name__)

ARTIFACT_VERSION = "cbdemand-model/1"
FORECAST_VERSION = "1"
SERIES = ["item_id", "store_id"]

# lagged-target features: (name, alpha, lag in days, grouped by weekday too)
EWMA_FEATURES = (
    ("ewma_sales_short", 0.25, 2, False),
    ("ewma_sales_weekday", 0.05, 7, True),
)


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# --------------------------------------------------------------------------
# features


def _event_columns(events) -> list[str]:
    return list(build_event_windows(pd.DatetimeIndex([]), events).columns)


def build_raw_features(table: pd.DataFrame, events, with_lagged_target: bool) -> pd.DataFrame:
    """Raw (unbinned) feature columns for every row of a sample table.

    Calendar and event columns are computed once per date and broadcast.
    ``table`` must be sorted by (item, store, date).
    """
    dates = pd.DatetimeIndex(table["date"].unique())
    per_day = pd.concat([build_calendar_features(dates), build_event_windows(dates, events)], axis=1)
    per_day.index = dates
    pos = per_day.index.get_indexer(pd.DatetimeIndex(table["date"]))
    raw = per_day.iloc[pos].reset_index(drop=True)
    raw["item_id"] = table["item_id"].to_numpy()
    raw["store_id"] = table["store_id"].to_numpy()
    raw["event_type"] = table["event_type_1"].to_numpy(dtype=object)
    raw["snap"] = table["snap"].to_numpy()
    prices = build_price_features(table["sell_price"].to_numpy(), table["list_price"].to_numpy())
    raw["promo_flag"] = prices["promo_flag"].to_numpy()
    raw["price_ratio"] = prices["price_ratio"].to_numpy()
    if with_lagged_target:
        sales = table["sales"].to_numpy(dtype=float)
        keys = table.loc[:, SERIES].reset_index(drop=True)
        dow = raw["day_of_week"].to_numpy()
        for name, alpha, lag, by_weekday in EWMA_FEATURES:
            if by_weekday:
                g = keys.assign(dow=dow)
                raw[name] = grouped_lagged_ewma(sales, alpha, lag // 7, g)
            else:
                raw[name] = grouped_lagged_ewma(sales, alpha, lag, keys)
    return raw


def _base_specs(events) -> list[FeatureSpec]:
    specs = [
        FeatureSpec.categorical("store_id"),
        FeatureSpec.categorical("item_id"),
        FeatureSpec.continuous("days_since_epoch", bin_count=12),
        FeatureSpec.categorical("day_of_week"),
        FeatureSpec.continuous("day_of_year", bin_count=48),
        FeatureSpec.categorical("month"),
        FeatureSpec.categorical("week_of_month"),
    ]
    specs += [FeatureSpec.categorical(c) for c in _event_columns(events)]
    specs += [
        FeatureSpec.categorical("event_type"),
        FeatureSpec.categorical("snap"),
        FeatureSpec.categorical("promo_flag"),
        FeatureSpec.continuous("price_ratio", bin_count=10),
    ]
    return specs


def mean_feature_specs(events, with_lagged_target: bool) -> list[FeatureSpec]:
    specs = _base_specs(events)
    specs += [
        FeatureSpec.interaction("item_id", "store_id"),
        FeatureSpec.interaction("store_id", "day_of_week"),
        FeatureSpec.interaction("item_id", "day_of_week"),
        FeatureSpec.interaction("store_id", "month"),
        FeatureSpec.interaction("item_id", "month"),
        FeatureSpec.interaction("item_id", "event_type"),
        FeatureSpec.interaction("store_id", "event_type"),
        FeatureSpec.interaction("item_id", "promo_flag"),
        FeatureSpec.interaction("item_id", "snap"),
    ]
    if with_lagged_target:
        specs += [FeatureSpec.continuous(name, provenance="target") for name, *_ in EWMA_FEATURES]
    return specs


def width_feature_specs(events, with_lagged_target: bool) -> list[FeatureSpec]:
    specs = _base_specs(events)
    specs += [
        FeatureSpec.interaction("item_id", "store_id"),
        FeatureSpec.interaction("store_id", "day_of_week"),
        FeatureSpec.interaction("item_id", "event_type"),
        FeatureSpec.continuous("mean_prediction", bin_count=20),
    ]
    if with_lagged_target:
        specs += [FeatureSpec.continuous(name, provenance="target") for name, *_ in EWMA_FEATURES]
    return specs


# --------------------------------------------------------------------------
# model artifact


@dataclass
class ForecastModel:
    """Trained mean and width models plus everything needed to apply them."""

    config: RunConfig
    events: list
    mean_specs: list[FeatureSpec]
    width_specs: list[FeatureSpec]
    mean_layout: BinLayout
    width_layout: BinLayout
    mean_model: MeanModel
    width_model: WidthModel

    def provenance(self) -> dict:
        return {"mean": resolve_provenance(self.mean_specs), "width": resolve_provenance(self.width_specs)}

    def to_dict(self) -> dict:
        return {
            "version": ARTIFACT_VERSION,
            "code_version": __version__,
            "config": self.config.to_dict(),
            "events": [[pd.Timestamp(d).strftime("%Y-%m-%d"), n, t] for d, n, t in self.events],
            "mean_specs": [s.to_dict() for s in self.mean_specs],
            "width_specs": [s.to_dict() for s in self.width_specs],
            "mean_layout": self.mean_layout.to_dict(),
            "width_layout": self.width_layout.to_dict(),
            "mean_model": self.mean_model.to_dict(),
            "width_model": self.width_model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastModel":
        if d.get("version") != ARTIFACT_VERSION:
            raise DataError(f"unsupported model artifact version {d.get('version')!r}")
        return cls(
            config=RunConfig.from_dict(d["config"]),
            events=[(pd.Timestamp(x), n, t) for x, n, t in d["events"]],
            mean_specs=[FeatureSpec.from_dict(s) for s in d["mean_specs"]],
            width_specs=[FeatureSpec.from_dict(s) for s in d["width_specs"]],
            mean_layout=BinLayout.from_dict(d["mean_layout"]),
            width_layout=BinLayout.from_dict(d["width_layout"]),
            mean_model=MeanModel.from_dict(d["mean_model"]),
            width_model=WidthModel.from_dict(d["width_model"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(_dump_json(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ForecastModel":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read model artifact {path}: {exc}") from exc
        return cls.from_dict(doc)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True, default=_json_default) + "\n"


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, pd.Timestamp):
        return v.strftime("%Y-%m-%d")
    raise TypeError(f"not serializable: {type(v).__name__}")


# --------------------------------------------------------------------------
# stages


def _mean_features_and_ml(model: ForecastModel, raw: pd.DataFrame):
    fm = apply_bins(raw, model.mean_layout, model.mean_specs)
    return fm, predict_mean(model.mean_model, fm)


def _final_means(cfg: RunConfig, table: pd.DataFrame, mu_ml: np.ndarray) -> np.ndarray:
    if not cfg.residual_correction:
        return np.ones_like(mu_ml)
    y = table["sales"].to_numpy(dtype=float)
    keys = table.loc[:, SERIES].reset_index(drop=True)
    return correction_factors(mu_ml, y, cfg.residual_alpha, cfg.lag, keys, cfg.residual_clamp)


def train(table: pd.DataFrame, cfg: RunConfig) -> ForecastModel:
    """Fit bins, the mean model and the width model on rows before the split date."""
    events = calendar_events(table)
    raw = build_raw_features(table, events, cfg.lagged_target_features)
    is_train = (table["date"] < pd.Timestamp(cfg.split_date)).to_numpy()
    if not is_train.any():
        raise DataError("no training rows before the split date")
    y = table["sales"].to_numpy(dtype=float)

    mean_specs = mean_feature_specs(events, cfg.lagged_target_features)
    mean_layout = fit_bins(raw[is_train], mean_specs)
    fm = apply_bins(raw, mean_layout, mean_specs)
    mean_model = fit_mean(y[is_train], fm.take(is_train), MeanTrainConfig(**cfg.mean))
    mean_model.labels = [mean_layout[n].labels for n in mean_model.names]
    _logger.info("mean model: %d cycles", len(mean_model.history) - 1)

    # in-sample final means over the full history feed the width model
    mu_ml = predict_mean(mean_model, fm)
    mu = mu_ml * _final_means(cfg, table, mu_ml)
    raw["mean_prediction"] = mu
    width_specs = width_feature_specs(events, cfg.lagged_target_features)
    width_layout = fit_bins(raw[is_train], width_specs)
    fw = apply_bins(raw[is_train], width_layout, width_specs)
    width_model = fit_width(y[is_train].astype(np.int64), mu[is_train], fw, WidthTrainConfig(**cfg.width))
    width_model.labels = [width_layout[n].labels for n in width_model.names]
    _logger.info("width model: %d cycles", len(width_model.history) - 1)
    return ForecastModel(cfg, events, mean_specs, width_specs, mean_layout, width_layout, mean_model, width_model)


def predict(model: ForecastModel, table: pd.DataFrame, start=None, end=None, quantiles=None,
            explain: bool = False):
    """Forecast records for the rows of ``table`` dated in ``[start, end]``.

    ``table`` holds the history as well: the residual correction and any
    lagged-target features look back through it.  Sales that are not known
    yet may be NaN.  Returns the forecast frame and, with ``explain``, a list
    of explanation payloads (one per forecast row).
    """
    cfg = model.config
    quantiles = tuple(cfg.quantiles if quantiles is None else quantiles)
    if len(table) == 0:
        return _empty_forecasts(quantiles, cfg), ([] if explain else None)
    raw = build_raw_features(table, model.events, cfg.lagged_target_features)
    fm, mu_ml = _mean_features_and_ml(model, raw)
    factor = _final_means(cfg, table, mu_ml)
    mu = factor * mu_ml

    dates = pd.DatetimeIndex(table["date"])
    sel = np.ones(len(table), dtype=bool)
    if start is not None:
        sel &= dates >= pd.Timestamp(start)
    if end is not None:
        sel &= dates <= pd.Timestamp(end)
    if not sel.any():
        return _empty_forecasts(quantiles, cfg), ([] if explain else None)

    raw_sel = raw[sel].reset_index(drop=True)
    raw_sel["mean_prediction"] = mu[sel]
    fw = apply_bins(raw_sel, model.width_layout, model.width_specs)
    inv_r = predict_inv_dispersion(model.width_model, fw)
    out = pd.DataFrame({
        "item_id": table["item_id"].to_numpy()[sel],
        "store_id": table["store_id"].to_numpy()[sel],
        "date": dates[sel].strftime("%Y-%m-%d"),
        "mu_ml": mu_ml[sel],
        "correction_factor": factor[sel],
        "mu": mu[sel],
        "inv_r": inv_r,
    })
    for q in quantiles:
        out[_qcol(q)] = nbd_quantile_array(q, out["mu"].to_numpy(), inv_r)
    if cfg.decision is not None:
        cost = CostFunction.linear_asymmetric(cfg.decision["b"], cfg.decision["h"])
        out["decision"] = decisions(NegBinArray(out["mu"].to_numpy(), inv_r), cost)
    out["sales"] = table["sales"].to_numpy(dtype=float)[sel]

    payload = None
    if explain:
        payload = []
        codes_m = fm.codes[sel]
        for i in range(len(out)):
            em = explain_mean(model.mean_model, codes_m[i])
            ew = explain_width(model.width_model, fw.codes[i])
            payload.append({
                "item_id": out["item_id"].iat[i], "store_id": out["store_id"].iat[i], "date": out["date"].iat[i],
                "mean": {"baseline": em.baseline, "mu_ml": em.prediction,
                         "factors": [[c.feature, c.label, c.factor] for c in em]},
                "correction_factor": float(out["correction_factor"].iat[i]),
                "width": {"factor_product": ew.prediction,
                          "factors": [[c.feature, c.label, c.factor] for c in ew]},
            })
    return out, payload


def _qcol(q: float) -> str:
    return f"q{q:g}"


def _empty_forecasts(quantiles, cfg):
    cols = ["item_id", "store_id", "date", "mu_ml", "correction_factor", "mu", "inv_r"]
    cols += [_qcol(q) for q in quantiles]
    if cfg.decision is not None:
        cols.append("decision")
    return pd.DataFrame(columns=cols + ["sales"])


def write_forecasts(path, frame: pd.DataFrame) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# cbdemand forecasts v{FORECAST_VERSION}\n")
        frame.to_csv(fh, index=False, lineterminator="\n", float_format="%.12g")


def read_forecasts(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read forecasts {path}: {exc}") from exc


def evaluate(forecasts: pd.DataFrame, cfg: RunConfig, out_dir, extra: dict | None = None) -> dict:
    """Calibration of the NBD forecasts against a Poisson model with the same means.

    Writes ``calibration.csv``, ``report.json``, profile tables and figures
    to ``out_dir`` and returns the report document.
    """
    out = Path(out_dir)
    fc = forecasts.dropna(subset=["sales"])
    if fc.empty:
        raise DataError("no forecasts with observed sales to evaluate")
    y = fc["sales"].to_numpy(dtype=float)
    nbd = NegBinArray(fc["mu"].to_numpy(), fc["inv_r"].to_numpy())
    dates = pd.DatetimeIndex(pd.to_datetime(fc["date"]))
    groupings = {
        "day_of_week": dates.dayofweek.to_numpy(),
        "store_id": fc["store_id"].astype(str).to_numpy(),
        "item_id": fc["item_id"].astype(str).to_numpy(),
        "mean_prediction": np.digitize(nbd.mu, np.quantile(nbd.mu, np.linspace(0, 1, 11)[1:-1])),
    }
    reports = {
        "nbd": calibration_report(nbd, y, cfg.pit_bins, cfg.seed, cfg.quantiles, groupings),
        "poisson": calibration_report(nbd.as_poisson(), y, cfg.pit_bins, cfg.seed, cfg.quantiles, groupings),
    }
    write_calibration_csv(out / "calibration.csv", reports)
    for name, rep in reports.items():
        frames = [p.to_frame().assign(grouping=g) for g, p in rep.profiles.items()]
        write_profile_csv(out / f"quantile_profile_{name}.csv",
                          pd.concat(frames, ignore_index=True).astype({"group": str}))
    prof_mean = profile_histogram(nbd.mu, y, bins=np.quantile(nbd.mu, np.linspace(0, 1, 21)))
    write_profile_csv(out / "profile_sales_vs_mean.csv", prof_mean)
    var_pred = nbd.variance
    resid2 = (y - nbd.mu) ** 2
    prof_var = profile_histogram(var_pred, resid2, bins=np.quantile(var_pred, np.linspace(0, 1, 21)))
    write_profile_csv(out / "profile_residual_vs_variance.csv", prof_var)

    report = {
        "mode": cfg.mode,
        "n_forecasts": int(len(fc)),
        "target_mean": float(np.mean(y)),
        "models": {k: r.to_dict() for k, r in reports.items()},
    }
    if extra:
        report.update(extra)
    (out / "report.json").write_text(_dump_json(report))

    if cfg.figures:
        from . import plots

        figs = out / "figures"
        figs.mkdir(exist_ok=True)
        plots.plot_pit_histograms({k: r.pit for k, r in reports.items()}, figs / "pit_histograms.svg")
        for name, rep in reports.items():
            for g, p in rep.profiles.items():
                plots.plot_quantile_profile(p, figs / f"quantile_profile_{name}_{g}.svg")
        plots.plot_profile_histogram(prof_mean, figs / "profile_sales_vs_mean.svg",
                                     "predicted mean", "observed sales", diagonal=True)
        plots.plot_profile_histogram(prof_var, figs / "profile_residual_vs_variance.svg",
                                     "predicted variance", "squared residual", diagonal=True)
    return report


# --------------------------------------------------------------------------
# full run


def _run_stage(name, out, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, DataError, FloatingPointError):
        (out / "PARTIAL").write_text(f"failed stage: {name}\n")
        raise
    except Exception as exc:  # noqa: BLE001 - annotate with the stage and re-raise
        (out / "PARTIAL").write_text(f"failed stage: {name}\n")
        raise StageError(name, exc) from exc


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: RunConfig, stages: list[str]) -> None:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name not in ("manifest.yaml", "PARTIAL"))
    doc = {
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "seed": cfg.seed,
        "stages": stages,
        "config": cfg.to_dict(),
        "files": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    (out / "manifest.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))


def run_experiment(cfg: RunConfig, table: pd.DataFrame | None = None) -> dict:
    """Ingest, train, forecast the test period and evaluate; returns the report."""
    from .m5 import ingest

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "PARTIAL").write_text("running\n")
    if table is None:
        table = _run_stage("ingest", out, ingest, cfg)
    model = _run_stage("train", out, train, table, cfg)
    model.save(out / "model.json")
    fc, _ = _run_stage("predict", out, predict, model, table, start=cfg.split_date, end=cfg.end_date)
    write_forecasts(out / "forecasts.csv", fc)
    extra = {
        "provenance": model.provenance(),
        "mean_history": model.mean_model.history,
        "width_history": [{k: v for k, v in h.items() if k != "updates"} for h in model.width_model.history],
        "n_train": int((table["date"] < pd.Timestamp(cfg.split_date)).sum()),
    }
    report = _run_stage("evaluate", out, evaluate, fc, cfg, out, extra)
    write_manifest(out, cfg, ["ingest", "train", "predict", "evaluate"])
    (out / "PARTIAL").unlink()
    return report
