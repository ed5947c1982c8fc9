import math

import numpy as np
import pytest
from sklearn.base import clone

from cbdemand.cb_mean import (
    CyclicBoostingMeanRegressor,
    MeanModel,
    MeanTrainConfig,
    explain_mean,
    fit_mean,
    predict_mean,
)
from cbdemand.features import FeatureMatrix


def two_factor_sample(n=50_000, seed=0):
    """Poisson(c * f1 * f2) with uniform, independent bins and factors normalized to mean 1."""
    rng = np.random.default_rng(seed)
    f1 = np.array([0.4, 0.8, 1.0, 1.3, 1.5])
    f2 = np.array([1.6, 1.2, 1.0, 0.7, 0.5])
    f1, f2 = f1 / f1.mean(), f2 / f2.mean()
    c = 4.0
    codes = rng.integers(0, 5, size=(n, 2))
    y = rng.poisson(c * f1[codes[:, 0]] * f2[codes[:, 1]])
    return FeatureMatrix(codes, ["a", "b"], [5, 5]), y, c, f1, f2


def test_single_feature_closed_form():
    fm = FeatureMatrix(np.array([[0], [0], [1], [1]]), ["x"], [2])
    y = np.array([2.0, 2.0, 6.0, 6.0])
    model = fit_mean(y, fm, MeanTrainConfig(prior_weight=0, max_cycles=1))
    assert model.c == 4.0
    np.testing.assert_allclose(model.factors[0], [0.5, 1.5], rtol=1e-15)
    np.testing.assert_allclose(predict_mean(model, fm), y, rtol=1e-15)
    assert predict_mean(model, FeatureMatrix(np.array([[1]]), ["x"], [2]))[0] == pytest.approx(6.0, rel=1e-15)


def test_reproduces_bin_means_after_one_cycle():
    rng = np.random.default_rng(1)
    codes = rng.integers(0, 7, size=(500, 1))
    y = rng.poisson(1 + codes[:, 0]).astype(float)
    model = fit_mean(y, FeatureMatrix(codes, ["x"], [7]), MeanTrainConfig(prior_weight=0, max_cycles=1))
    means = np.array([y[codes[:, 0] == k].mean() for k in range(7)])
    np.testing.assert_allclose(predict_mean(model, FeatureMatrix(np.arange(7)[:, None], ["x"], [7])), means, rtol=1e-12)


def test_zero_features_predicts_global_mean():
    fm = FeatureMatrix(np.zeros((5, 0), dtype=int), [], [])
    y = np.array([1.0, 2, 3, 4, 5])
    model = fit_mean(y, fm)
    np.testing.assert_array_equal(predict_mean(model, fm), np.full(5, 3.0))


def test_synthetic_factor_recovery():
    fm, y, c, f1, f2 = two_factor_sample()
    model = fit_mean(y, fm, MeanTrainConfig(prior_weight=0))
    np.testing.assert_allclose(model.factors[0], f1, rtol=0.05)
    np.testing.assert_allclose(model.factors[1], f2, rtol=0.05)
    assert predict_mean(model, fm).sum() / y.sum() == pytest.approx(1.0, abs=1e-3)


def test_predict_arithmetic():
    model = MeanModel(4.0, ["a", "b"], [2, 2], [np.array([1.0, 1.5]), np.array([0.5, 1.0])], [np.ones(2)] * 2)
    assert predict_mean(model, FeatureMatrix(np.array([[1, 0]]), ["a", "b"], [2, 2]))[0] == 3.0
    neutral = MeanModel(4.0, ["a"], [2], [np.ones(2)], [np.ones(2)])
    assert predict_mean(neutral, np.array([[0], [1]])).tolist() == [4.0, 4.0]


def test_out_of_range_bin():
    model = MeanModel(1.0, ["a"], [2], [np.ones(2)], [np.ones(2)])
    with pytest.raises(ValueError):
        predict_mean(model, np.array([[2]]))


def test_layout_mismatch():
    model = MeanModel(1.0, ["a"], [2], [np.ones(2)], [np.ones(2)])
    with pytest.raises(ValueError, match="layout"):
        predict_mean(model, FeatureMatrix(np.array([[0]]), ["b"], [2]))


def test_errors():
    fm = FeatureMatrix(np.zeros((3, 1), dtype=int), ["x"], [1])
    with pytest.raises(ValueError, match="zero"):
        fit_mean([0, 0, 0], fm)
    with pytest.raises(ValueError, match="empty"):
        fit_mean([], FeatureMatrix(np.zeros((0, 1), dtype=int), ["x"], [1]))
    with pytest.raises(ValueError):
        fit_mean([1, -1, 2], fm)


def test_regularized_empty_bin_is_neutral():
    fm = FeatureMatrix(np.array([[0], [0], [1]]), ["x"], [3])
    model = fit_mean([1.0, 3.0, 5.0], fm, MeanTrainConfig(prior_weight=10))
    assert model.factors[0][2] == 1.0
    assert model.support[0].tolist() == [2, 1, 0]


def test_explanation_identity_and_order():
    fm, y, *_ = two_factor_sample(5000, seed=3)
    model = fit_mean(y, fm)
    preds = predict_mean(model, fm)
    for i in range(50):
        ex = explain_mean(model, fm.codes[i])
        assert ex.prediction == preds[i]
        value = model.c
        for contrib in ex.in_feature_order(model.names):
            value *= contrib.factor
        assert value == preds[i]
        mags = [abs(math.log(c.factor)) for c in ex]
        assert mags == sorted(mags, reverse=True)
        assert math.prod(c.factor for c in ex) * model.c == pytest.approx(preds[i], rel=1e-14)


def test_neutral_explanation():
    model = MeanModel(2.0, ["a", "b"], [2, 2], [np.ones(2), np.ones(2)], [np.ones(2)] * 2)
    ex = explain_mean(model, [0, 1])
    assert [c.factor for c in ex] == [1.0, 1.0]
    assert ex.prediction == 2.0


def test_global_balance_and_monotone_history():
    fm, y, *_ = two_factor_sample(20_000, seed=7)
    model = fit_mean(y, fm, MeanTrainConfig(prior_weight=0, convergence_tolerance=0, max_cycles=10))
    assert predict_mean(model, fm).sum() == pytest.approx(y.sum(), rel=1e-3)
    mads = [h["mad"] for h in model.history if not h.get("rejected")]
    scale = y.mean()
    assert all(b <= a + 1e-9 * scale for a, b in zip(mads, mads[1:]))


def test_determinism():
    fm, y, *_ = two_factor_sample(10_000, seed=11)
    a = fit_mean(y, fm)
    b = fit_mean(y, fm)
    assert a.to_dict() == b.to_dict()


def test_serialization_roundtrip():
    fm, y, *_ = two_factor_sample(2000, seed=2)
    model = fit_mean(y, fm)
    again = MeanModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(predict_mean(again, fm), predict_mean(model, fm))


def test_damping_slows_first_cycle():
    fm = FeatureMatrix(np.array([[0], [1]]), ["x"], [2])
    m = fit_mean([1.0, 3.0], fm, MeanTrainConfig(prior_weight=0, max_cycles=1, learning_damping=0.5))
    np.testing.assert_allclose(m.factors[0], [0.5**0.5, 1.5**0.5])


def test_estimator_api():
    fm, y, *_ = two_factor_sample(3000, seed=4)
    est = clone(CyclicBoostingMeanRegressor(prior_weight=0.0))
    assert est.get_params()["prior_weight"] == 0.0
    pred = est.fit(fm, y).predict(fm)
    assert pred.shape == (3000,)
    # plain integer arrays are accepted too
    np.testing.assert_array_equal(est.predict(fm.codes), pred)
    assert est.explain(fm.codes[:2])[0].prediction == pred[0]
    assert 0 < est.score(fm, y) < 1
