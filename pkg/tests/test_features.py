import datetime as dt

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbdemand.features import (
    OUTSIDE,
    FeatureBinner,
    FeatureError,
    FeatureMatrix,
    FeatureSpec,
    apply_bins,
    build_calendar_features,
    build_event_windows,
    build_price_features,
    fit_bins,
    resolve_provenance,
    specs_from_yaml,
    specs_to_yaml,
)


class TestCalendar:
    def test_epoch_day(self):
        row = build_calendar_features(["2013-01-01"]).iloc[0]
        assert row.days_since_epoch == 0
        assert row.day_of_week == 1
        assert row.month == 1
        assert row.week_of_month == 1

    def test_days_since_epoch_independent(self):
        expected = (dt.date(2016, 5, 22) - dt.date(2013, 1, 1)).days
        assert expected == 1237
        assert build_calendar_features(["2016-05-22"]).days_since_epoch[0] == expected

    def test_leap_day(self):
        assert build_calendar_features(["2016-02-29"]).day_of_year[0] == 60

    def test_week_of_month(self):
        got = build_calendar_features(["2016-03-07", "2016-03-08", "2016-03-29", "2016-03-31"])
        assert got.week_of_month.tolist() == [1, 2, 5, 5]

    def test_before_epoch(self):
        with pytest.raises(FeatureError):
            build_calendar_features(["2012-12-31"])


class TestEventWindows:
    events = [
        ("2015-12-25", "Christmas", "National"),
        ("2015-11-26", "Thanksgiving", "National"),
        ("2016-02-07", "SuperBowl", "Sporting"),
    ]

    def test_wide_window_edge(self):
        got = build_event_windows(["2015-12-18", "2015-12-28", "2015-12-29"], self.events)
        assert got["event_Christmas"].tolist() == [-7, 3, OUTSIDE]

    def test_narrow_window(self):
        dates = ["2015-11-22", "2015-11-23", "2015-11-26", "2015-11-27", "2015-11-28"]
        got = build_event_windows(dates, self.events)["event_Thanksgiving"].tolist()
        assert got == [OUTSIDE, -3, 0, 1, OUTSIDE]

    def test_event_day(self):
        assert build_event_windows(["2016-02-07"], self.events)["event_SuperBowl"][0] == 0

    def test_nearest_occurrence(self):
        ev = [("2015-01-01", "NewYear", "National"), ("2016-01-01", "NewYear", "National")]
        got = build_event_windows(["2015-12-31", "2016-01-02"], ev)["event_NewYear"].tolist()
        assert got == [-1, 1]


class TestPrices:
    def test_cases(self):
        got = build_price_features([2.5, 2.0, np.nan], [2.5, 2.5, 2.5])
        assert got.price_ratio[0] == 1.0 and got.promo_flag[0] == 0
        assert got.price_ratio[1] == pytest.approx(0.8) and got.promo_flag[1] == 1
        assert np.isnan(got.price_ratio[2]) and got.promo_flag[2] == 0


class TestBins:
    def test_equal_frequency(self):
        raw = pd.DataFrame({"x": np.arange(1, 101)})
        layout = fit_bins(raw, [FeatureSpec.continuous("x", 4)])
        np.testing.assert_allclose(layout["x"].boundaries, np.quantile(np.arange(1, 101), [0.25, 0.5, 0.75]))
        counts = np.bincount(apply_bins(raw, layout).column("x"), minlength=5)
        assert counts.tolist() == [25, 25, 25, 25, 0]

    def test_categorical(self):
        raw = pd.DataFrame({"c": ["A", "B", "A", "C"]})
        layout = fit_bins(raw, [FeatureSpec.categorical("c")])
        assert layout["c"].categories == ["A", "B", "C"]
        assert layout["c"].n_bins == 4
        assert layout["c"].missing_bin == 3

    def test_constant_continuous(self):
        layout = fit_bins(pd.DataFrame({"x": [3.0] * 10}), [FeatureSpec.continuous("x", 5)])
        assert layout["x"].boundaries == []
        assert layout["x"].n_bins == 2  # one value bin plus missing

    def test_all_missing_names_feature(self):
        with pytest.raises(FeatureError, match="'x'"):
            fit_bins(pd.DataFrame({"x": [np.nan, np.nan]}), [FeatureSpec.continuous("x")])

    def test_edge_clamp_and_missing(self):
        raw = pd.DataFrame({"x": np.arange(10.0)})
        layout = fit_bins(raw, [FeatureSpec.continuous("x", 2)])
        fm = apply_bins(pd.DataFrame({"x": [-100.0, 1e9, np.nan]}), layout)
        assert fm.column("x").tolist() == [0, 1, 2]

    def test_unseen_category(self):
        layout = fit_bins(pd.DataFrame({"c": ["a", "b"]}), [FeatureSpec.categorical("c")])
        fm = apply_bins(pd.DataFrame({"c": ["zzz", None, "b"]}), layout)
        assert fm.column("c").tolist() == [2, 2, 1]

    def test_interaction_row_major(self):
        raw = pd.DataFrame({"store": list("ABCD") * 6, "dow": np.tile(np.arange(6), 4)})
        specs = [
            FeatureSpec.categorical("store"),
            FeatureSpec.categorical("dow"),  # 6 values + missing = 7 bins
            FeatureSpec.interaction("store", "dow"),
        ]
        layout = fit_bins(raw, specs)
        assert layout["dow"].n_bins == 7
        fm = apply_bins(pd.DataFrame({"store": ["C"], "dow": [5]}), layout, specs)
        assert fm.column("store__dow")[0] == 2 * 7 + 5 == 19
        assert layout["store__dow"].n_bins == layout["store"].n_bins * layout["dow"].n_bins

    def test_interaction_requires_parents_first(self):
        with pytest.raises(FeatureError):
            fit_bins(pd.DataFrame({"a": [1]}), [FeatureSpec.interaction("a", "b")])

    def test_bad_specs(self):
        with pytest.raises(FeatureError):
            FeatureSpec("x", "ordinal")
        with pytest.raises(FeatureError):
            FeatureSpec("x", "continuous", bin_count=0)
        with pytest.raises(FeatureError):
            FeatureSpec("x", "interaction", parents=("a",))

    def test_boolean_categories(self):
        layout = fit_bins(pd.DataFrame({"f": [True, False]}), [FeatureSpec.categorical("f")])
        fm = apply_bins(pd.DataFrame({"f": [1, 0, True]}), layout)
        assert fm.column("f").tolist() == [1, 0, 1]

    def test_matrix_range_check(self):
        with pytest.raises(FeatureError):
            FeatureMatrix(np.array([[3]]), ["x"], [3])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=20, max_size=300, unique=True),
    st.integers(1, 12),
)
def test_balanced_counts_for_distinct_values(values, bin_count):
    raw = pd.DataFrame({"x": values})
    layout = fit_bins(raw, [FeatureSpec.continuous("x", bin_count)])
    counts = np.bincount(apply_bins(raw, layout).column("x"), minlength=layout["x"].n_bins)[:-1]
    assert counts.sum() == len(values)
    assert np.all(np.abs(counts - len(values) / len(counts)) <= 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.one_of(st.none(), st.sampled_from("abcde"), st.integers(0, 3)), min_size=1, max_size=40))
def test_apply_total_and_deterministic(values):
    train = pd.DataFrame({"c": ["a", "b", 1, 2]})
    layout = fit_bins(train, [FeatureSpec.categorical("c")])
    raw = pd.DataFrame({"c": pd.Series(values, dtype=object)})
    a = apply_bins(raw, layout).codes
    b = apply_bins(raw, layout).codes
    np.testing.assert_array_equal(a, b)
    assert np.all((a >= 0) & (a < layout["c"].n_bins))


def test_yaml_roundtrip_and_provenance():
    specs = [
        FeatureSpec.categorical("item"),
        FeatureSpec.continuous("ewma", 10, provenance="target"),
        FeatureSpec.interaction("item", "ewma"),
    ]
    assert specs_from_yaml(specs_to_yaml(specs)) == specs
    assert resolve_provenance(specs) == {"item": "exogenous", "ewma": "target", "item__ewma": "target"}


def test_binner_estimator():
    from sklearn.base import clone

    raw = pd.DataFrame({"x": np.arange(40.0), "c": list("ab") * 20})
    binner = FeatureBinner([FeatureSpec.continuous("x", 4), FeatureSpec.categorical("c")])
    fm = clone(binner).fit(raw).transform(raw)
    assert isinstance(fm, FeatureMatrix)
    assert fm.n_bins == [5, 3]
    assert np.asarray(fm).shape == (40, 2)
    assert binner.get_params()["specs"][0].name == "x"
