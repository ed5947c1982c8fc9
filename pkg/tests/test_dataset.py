"""Checks on the public M5 data; skipped when the files are absent."""

import numpy as np
import pandas as pd
import pytest

from cbdemand.config import RunConfig
from cbdemand.distributions import NegBinDistribution
from cbdemand.experiment import ForecastModel, predict, read_forecasts
from cbdemand.m5 import ingest

from conftest import m5_dir

pytestmark = pytest.mark.dataset


@pytest.fixture(scope="module")
def table():
    root = m5_dir()
    if root is None:
        pytest.skip("M5 data not available (set M5_DATA_DIR)")
    return ingest(RunConfig(data_dir=str(root)))


def test_default_filter_shape(table):
    assert table["item_id"].nunique() == 100
    assert table["store_id"].nunique() == 10
    days = pd.date_range("2013-01-01", "2016-05-22")
    assert len(table) == 100 * 10 * len(days)
    assert table["item_id"].min() == "FOODS_3_500" and table["item_id"].max() == "FOODS_3_599"


def test_example_forecast_cdf_just_under_0_3(m5_runs):
    _, out = m5_runs["a"]
    fc = read_forecasts(out / "forecasts.csv")
    row = fc[(fc.item_id == "FOODS_3_516") & (fc.store_id == "TX_3") & (fc.date == "2016-05-06")].iloc[0]
    d = NegBinDistribution(row.mu, row.inv_r)
    cdf = d.cdf(int(row.sales))
    # directional: the observation sits in the lower part of a unimodal forecast
    assert 0.15 <= cdf < 0.4


def test_superbowl_explanations(m5_runs, table):
    _, out = m5_runs["a"]
    model = ForecastModel.load(out / "model.json")
    sub = table[(table.item_id == "FOODS_3_516") & (table.store_id == "TX_3")].reset_index(drop=True)
    fc, payload = predict(model, sub, start="2016-02-07", end="2016-02-07", explain=True)
    mean_f = {f[0]: f[2] for f in payload[0]["mean"]["factors"]}
    width_f = {f[0]: f[2] for f in payload[0]["width"]["factors"]}
    assert mean_f["event_SuperBowl"] > 1
    # larger factor product means larger inverse dispersion, i.e. more variance
    assert width_f["event_SuperBowl"] > 1
    assert width_f["mean_prediction"] < 1
