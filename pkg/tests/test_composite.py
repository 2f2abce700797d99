import json
import math

import numpy as np
import pytest

from postratio.classifiers import LinearLogReg, fit_logreg
from postratio.composite import (
    CompositeModel,
    classify,
    estimate_kl,
    evaluate,
    predict_posterior,
)
from postratio.data import FeatureMap, LabeledDataset, gen_gaussian_shift
from postratio.knn import KnnIndex
from postratio.ratio import RatioModel, fit


def make_composite(theta, weights, intercept, d=1):
    ratio = RatioModel(np.asarray(theta, dtype=float), FeatureMap(d), 4, 1e-3)
    source = LinearLogReg(np.asarray(weights, dtype=float), float(intercept), 0.0)
    return CompositeModel(ratio, source)


class TestCompositeModel:
    def test_hand_computed_posterior(self):
        # q(+1|x) = 1/2 everywhere and theta.f(+1, x) = 0.3, so
        # p(+1|x) = sigmoid(0 + 2 * 0.3) = sigmoid(0.6)
        model = make_composite([0.0, 0.3], [0.0], 0.0)
        p = model.predict_proba(np.array([[1.7]]))
        assert p[0] == pytest.approx(1.0 / (1.0 + math.exp(-0.6)), rel=1e-12)

    def test_matches_ratio_times_source_formula(self):
        model = make_composite([0.4, -0.2], [1.1], 0.3)
        rng = np.random.default_rng(0)
        X = rng.standard_normal((50, 1))
        q = model.source.predict_proba(X)
        a = model.ratio.log_ratio_margin(X)
        want = q * np.exp(a) / (q * np.exp(a) + (1 - q) * np.exp(-a))
        assert np.allclose(model.predict_proba(X), want, rtol=1e-12)

    def test_posterior_pair_sums_to_one(self):
        model = make_composite([0.4, -0.2], [1.1], 0.3)
        p_plus, p_minus = predict_posterior(model, np.array([0.7]))
        assert p_plus + p_minus == pytest.approx(1.0)

    def test_zero_theta_reduces_to_source_classifier(self):
        model = make_composite([0.0, 0.0], [2.0], -0.5)
        X = np.linspace(-2, 2, 9)[:, None]
        assert np.allclose(model.predict_proba(X), model.source.predict_proba(X))

    def test_tie_probability_classifies_positive(self):
        model = make_composite([0.0, 0.0], [0.0], 0.0)
        assert classify(model, np.array([0.0])) == 1

    def test_dimension_mismatch_rejected(self):
        ratio = RatioModel(np.zeros(3), FeatureMap(2), 4, 1e-3)
        source = LinearLogReg(np.zeros(1), 0.0, 0.0)
        with pytest.raises(ValueError, match="dimension"):
            CompositeModel(ratio, source)

    def test_unnormalized_scores_default_normalizer_matches_posterior(self):
        model = make_composite([0.4, -0.2], [1.1], 0.3)
        X = np.linspace(-2, 2, 9)[:, None]
        up, um = model.unnormalized_scores(X)
        assert np.allclose(up + um, 1.0)
        assert np.allclose(up, model.predict_proba(X), atol=1e-12)

    def test_unnormalized_scores_knn_normalizer_hand_case(self):
        # both source neighbors share the target x, so the k-NN normalizer
        # is (e^{t.f(+1,x)} + e^{t.f(-1,x)}) / 2
        model = make_composite([0.5, 0.0], [0.0], 0.0)
        index = KnnIndex(np.array([[1.0], [1.0]]), labels=np.array([1, -1]))
        up, um = model.unnormalized_scores(np.array([[1.0]]), index=index, k=2)
        norm = (math.exp(0.5) + math.exp(-0.5)) / 2
        assert up[0] == pytest.approx(0.5 * math.exp(0.5) / norm, rel=1e-12)
        assert um[0] == pytest.approx(0.5 * math.exp(-0.5) / norm, rel=1e-12)

    def test_json_round_trip(self):
        target, sources = gen_gaussian_shift(20, 100, seed=0)
        ratio, _ = fit(target, sources, k=8)
        model = CompositeModel(ratio, fit_logreg(sources))
        back = CompositeModel.from_json(json.loads(json.dumps(model.to_json())))
        X = np.linspace(-3, 3, 9)[:, None]
        assert np.allclose(back.predict_proba(X), model.predict_proba(X))

    def test_bad_envelope_rejected(self):
        with pytest.raises(ValueError):
            CompositeModel.from_json({"version": 1, "kind": "ratio"})


class TestEstimateKl:
    def test_negates_the_fitted_objective(self):
        assert estimate_kl(-0.25) == 0.25
        assert estimate_kl(0.1) == -0.1


class TestEvaluate:
    def test_hand_computed_metrics(self):
        # constant predictor p(+1|x) = sigmoid(1)
        model = LinearLogReg(np.array([0.0]), 1.0, 0.0)
        test = LabeledDataset(np.array([1, 1, -1, -1]), np.zeros((4, 1)))
        metrics = evaluate(model, test)
        p = 1.0 / (1.0 + math.exp(-1.0))
        assert metrics["miss_rate"] == 0.5
        want_nll = -0.5 * (math.log(p) + math.log(1 - p))
        assert metrics["neg_holdout_loglik"] == pytest.approx(want_nll, rel=1e-12)

    def test_perfect_predictor(self):
        model = LinearLogReg(np.array([50.0]), 0.0, 0.0)
        test = LabeledDataset(np.array([1, -1]), np.array([[1.0], [-1.0]]))
        metrics = evaluate(model, test)
        assert metrics["miss_rate"] == 0.0
        assert metrics["neg_holdout_loglik"] < 1e-8

    def test_empty_test_set_rejected(self):
        model = LinearLogReg(np.array([1.0]), 0.0, 0.0)
        empty = LabeledDataset(np.empty(0, dtype=int), np.empty((0, 1)))
        with pytest.raises(ValueError):
            evaluate(model, empty)

    def test_adaptation_beats_source_model_under_shift(self):
        # source posterior sigmoid(4x) vs target sigmoid(3x): the fitted
        # ratio correction should improve target hold-out likelihood
        target, sources = gen_gaussian_shift(250, 5000, seed=0)
        holdout, _ = gen_gaussian_shift(2000, 1, seed=99)
        source_clf = fit_logreg(sources, l2=1e-6)
        ratio, _ = fit(target, sources, k=73, lam=1e-2)
        composite = CompositeModel(ratio, source_clf)
        nll_composite = evaluate(composite, holdout)["neg_holdout_loglik"]
        nll_source = evaluate(source_clf, holdout)["neg_holdout_loglik"]
        assert nll_composite < nll_source
