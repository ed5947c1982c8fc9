"""Reading M5-style retail CSVs into a dense long-format sample table.

Input files follow the public M5 schemas: ``calendar.csv`` (one row per day),
``sales_train_*.csv`` (one row per item-store series, one ``d_<n>`` column
per day) and ``sell_prices.csv`` (weekly price per item-store).
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import pandas as pd

from .config import DataError, RunConfig

__all__ = [
    "CALENDAR_COLUMNS",
    "SALES_ID_COLUMNS",
    "PRICE_COLUMNS",
    "ingest",
    "ingest_frames",
    "calendar_events",
    "make_synthetic_m5",
]

CALENDAR_COLUMNS = ("date", "wm_yr_wk", "d", "event_name_1", "event_type_1", "event_name_2",
                    "event_type_2", "snap_CA", "snap_TX", "snap_WI")
SALES_ID_COLUMNS = ("item_id", "store_id", "state_id")
PRICE_COLUMNS = ("store_id", "item_id", "wm_yr_wk", "sell_price")

SAMPLE_COLUMNS = ["item_id", "store_id", "state_id", "date", "sales", "materialized", "event_name_1",
                  "event_type_1", "event_name_2", "event_type_2", "snap", "sell_price", "list_price"]


def _require(frame: pd.DataFrame, columns, what: str) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{what}: missing column(s) {', '.join(missing)}")


def _read_csv(path: Path, what: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except FileNotFoundError as exc:
        raise DataError(f"{what} not found: {path}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"{what} does not parse: {exc}") from exc


def ingest(cfg: RunConfig) -> pd.DataFrame:
    """Read the three CSVs named in ``cfg`` and build the sample table."""
    if not cfg.data_dir:
        raise DataError("no data_dir configured")
    root = Path(cfg.data_dir)
    cal = _read_csv(root / cfg.calendar_file, "calendar")
    sales = _read_csv(root / cfg.sales_file, "sales")
    prices = _read_csv(root / cfg.prices_file, "prices")
    return ingest_frames(cal, sales, prices, cfg)


def ingest_frames(calendar: pd.DataFrame, sales: pd.DataFrame, prices: pd.DataFrame,
                  cfg: RunConfig) -> pd.DataFrame:
    """Pivot wide sales to long rows and attach calendar and price fields.

    The result is sorted by (item, store, date) with one row per day of the
    configured range.  Days absent from the sales file are materialized with
    ``sales = 0`` and ``materialized = True``.  ``list_price`` is the running
    maximum of ``sell_price`` per item-store; missing prices stay NaN.
    """
    _require(calendar, CALENDAR_COLUMNS, "calendar")
    _require(sales, SALES_ID_COLUMNS, "sales")
    _require(prices, PRICE_COLUMNS, "prices")

    cal = calendar.loc[:, list(CALENDAR_COLUMNS)].copy()
    cal["date"] = pd.to_datetime(cal["date"])
    start, end = pd.Timestamp(cfg.start_date), pd.Timestamp(cfg.end_date)
    cal = cal[(cal["date"] >= start) & (cal["date"] <= end)].sort_values("date")
    if cal.empty:
        raise DataError("calendar has no days inside the configured date range")
    full_days = pd.date_range(start, end, freq="D")
    if len(cal) != len(full_days):
        raise DataError(f"calendar covers {len(cal)} of the {len(full_days)} configured days")

    sel = sales
    if cfg.item_pattern:
        pat = re.compile(cfg.item_pattern)
        sel = sel[sel["item_id"].astype(str).map(lambda s: pat.search(s) is not None)]
    if cfg.stores:
        sel = sel[sel["store_id"].isin(cfg.stores)]
    if sel.empty:
        raise DataError("no series left after item/store filters")
    if sel.duplicated(["item_id", "store_id"]).any():
        raise DataError("sales file has duplicate item/store series")

    day_cols = [d for d in cal["d"] if d in sel.columns]
    long = sel.loc[:, ["item_id", "store_id", "state_id"] + day_cols].melt(
        id_vars=["item_id", "store_id", "state_id"], var_name="d", value_name="sales")

    # dense grid: every series times every configured day
    series = sel.loc[:, ["item_id", "store_id", "state_id"]].reset_index(drop=True)
    grid = series.merge(cal, how="cross")
    grid = grid.merge(long, on=["item_id", "store_id", "state_id", "d"], how="left")
    grid["materialized"] = grid["sales"].isna()
    if (grid["sales"].dropna() < 0).any():
        raise DataError("negative sales values")
    grid["sales"] = grid["sales"].fillna(0).astype(np.int64)

    snap = np.zeros(len(grid), dtype=np.int64)
    for state in grid["state_id"].unique():
        col = f"snap_{state}"
        if col in grid.columns:
            m = (grid["state_id"] == state).to_numpy()
            snap[m] = grid.loc[m, col].fillna(0).astype(np.int64).to_numpy()
    grid["snap"] = snap

    pr = prices.loc[:, list(PRICE_COLUMNS)]
    grid = grid.merge(pr, on=["store_id", "item_id", "wm_yr_wk"], how="left")
    grid = grid.sort_values(["item_id", "store_id", "date"], kind="mergesort").reset_index(drop=True)
    grid["list_price"] = grid.groupby(["item_id", "store_id"], sort=False)["sell_price"].cummax()
    return grid.loc[:, SAMPLE_COLUMNS]


def calendar_events(table: pd.DataFrame) -> list[tuple]:
    """``(date, name, type)`` of every event day found in the table."""
    days = table.drop_duplicates("date")
    out = []
    for n_col, t_col in (("event_name_1", "event_type_1"), ("event_name_2", "event_type_2")):
        ev = days.loc[days[n_col].notna(), ["date", n_col, t_col]]
        out.extend((d, str(n), str(t)) for d, n, t in ev.itertuples(index=False))
    return sorted(set(out))


# --------------------------------------------------------------------------
# synthetic data in the same schema

_SYNTHETIC_EVENTS = {
    # month, day, name, type, multiplicative effect on demand
    (12, 25): ("Christmas", "National", 0.3),
    (7, 4): ("IndependenceDay", "National", 1.4),
    (10, 31): ("Halloween", "Cultural", 1.2),
}
_SUPERBOWL = {2013: "2013-02-03", 2014: "2014-02-02", 2015: "2015-02-01", 2016: "2016-02-07"}


def make_synthetic_m5(out_dir, n_items: int = 6, n_stores: int = 2, start: str = "2013-01-01",
                      end: str = "2016-05-22", seed: int = 0) -> dict:
    """Write M5-schema CSVs drawn from a known multiplicative NBD model.

    Demand is ``base_item * store * weekday * event * promo`` with negative
    binomial noise whose inverse dispersion depends on the store.  Returns
    the generating parameters.
    """
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    days = pd.date_range(start, end, freq="D")
    n_days = len(days)
    d_names = [f"d_{i + 1}" for i in range(n_days)]
    wk = ((days - days[0]).days // 7 + 11101).astype(np.int64)

    names = np.full(n_days, None, dtype=object)
    types = np.full(n_days, None, dtype=object)
    effect = np.ones(n_days)
    for i, d in enumerate(days):
        hit = _SYNTHETIC_EVENTS.get((d.month, d.day))
        if hit:
            names[i], types[i], effect[i] = hit
        if _SUPERBOWL.get(d.year) == d.strftime("%Y-%m-%d"):
            names[i], types[i], effect[i] = "SuperBowl", "Sporting", 1.6
    snap = ((days.day >= 1) & (days.day <= 10)).astype(np.int64)
    calendar = pd.DataFrame({
        "date": days.strftime("%Y-%m-%d"), "wm_yr_wk": wk, "weekday": days.day_name(),
        "wday": (days.dayofweek + 2) % 7 + 1, "month": days.month, "year": days.year, "d": d_names,
        "event_name_1": names, "event_type_1": types, "event_name_2": None, "event_type_2": None,
        "snap_CA": snap, "snap_TX": snap, "snap_WI": snap,
    })

    items = [f"FOODS_3_{500 + i:03d}" for i in range(n_items)]
    stores = [f"CA_{j + 1}" for j in range(n_stores)]
    item_level = rng.uniform(0.8, 6.0, n_items)
    store_factor = np.linspace(0.7, 1.3, n_stores)
    store_inv_r = np.linspace(0.05, 0.6, n_stores)
    dow_factor = np.array([0.9, 0.85, 0.85, 0.9, 1.1, 1.25, 1.15])
    promo_factor = 1.5

    rows, price_rows = [], []
    weeks = np.unique(wk)
    for i, item in enumerate(items):
        base_price = rng.uniform(1.0, 6.0)
        promo_weeks = set(weeks[rng.random(weeks.size) < 0.15].tolist())
        for j, store in enumerate(stores):
            week_price = {w: round(base_price * (0.8 if w in promo_weeks else 1.0), 2) for w in weeks}
            promo = np.array([w in promo_weeks for w in wk])
            mu = (item_level[i] * store_factor[j] * dow_factor[days.dayofweek] * effect
                  * np.where(promo, promo_factor, 1.0))
            a = store_inv_r[j]
            lam = rng.gamma(1.0 / a, mu * a)
            y = rng.poisson(lam)
            rows.append([f"{item}_{store}_evaluation", item, "FOODS_3", "FOODS", store, "CA"] + y.tolist())
            price_rows.extend((store, item, int(w), p) for w, p in week_price.items())
    sales = pd.DataFrame(rows, columns=["id", "item_id", "dept_id", "cat_id", "store_id", "state_id"] + d_names)
    prices = pd.DataFrame(price_rows, columns=list(PRICE_COLUMNS))
    calendar.to_csv(out / "calendar.csv", index=False)
    sales.to_csv(out / "sales_train_evaluation.csv", index=False)
    prices.to_csv(out / "sell_prices.csv", index=False)
    return {
        "items": items, "stores": stores, "item_level": item_level.tolist(),
        "store_factor": store_factor.tolist(), "store_inv_r": store_inv_r.tolist(),
        "dow_factor": dow_factor.tolist(), "promo_factor": promo_factor,
    }
