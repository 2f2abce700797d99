import json
import math

import numpy as np
import pytest

from postratio.classifiers import (
    EPS_CLIP,
    KernelLogReg,
    LinearLogReg,
    classifier_from_json,
    fit_kernel_logreg,
    fit_logreg,
    median_pairwise_distance,
    posterior,
    rbf_kernel,
    select_l2_logreg,
)
from postratio.data import LabeledDataset, gen_four_gaussian, gen_gaussian_shift


class TestLinearLogReg:
    def test_decision_is_affine(self):
        model = LinearLogReg(np.array([2.0, -1.0]), 0.5, 0.0)
        X = np.array([[1.0, 1.0], [0.0, 0.0]])
        assert np.allclose(model.decision(X), [1.5, 0.5])
        assert np.allclose(model.predict_proba(X), 1.0 / (1.0 + np.exp([-1.5, -0.5])))
        assert np.array_equal(model.predict(X), [1, 1])

    def test_posterior_pair_sums_to_one(self):
        model = LinearLogReg(np.array([1.0]), 0.0, 0.0)
        x = np.array([0.3])
        assert posterior(model, x, 1) + posterior(model, x, -1) == pytest.approx(1.0)

    def test_probabilities_clipped_away_from_0_and_1(self):
        model = LinearLogReg(np.array([1.0]), 0.0, 0.0)
        p = model.predict_proba(np.array([[1e6], [-1e6]]))
        assert p[0] == 1.0 - EPS_CLIP
        assert p[1] == EPS_CLIP

    def test_recovers_bayes_rule_on_gaussian_classes(self):
        # unit-variance classes at +-2 have posterior sigmoid(4x):
        # slope 4, intercept 0 by symmetry
        _, sources = gen_gaussian_shift(10, 40000, seed=0)
        model = fit_logreg(sources, l2=1e-6)
        assert model.weights[0] == pytest.approx(4.0, abs=0.3)
        assert model.intercept == pytest.approx(0.0, abs=0.15)

    def test_l2_shrinks_weights(self):
        _, sources = gen_gaussian_shift(10, 2000, seed=0)
        loose = fit_logreg(sources, l2=1e-6)
        tight = fit_logreg(sources, l2=10.0)
        assert abs(tight.weights[0]) < abs(loose.weights[0])

    def test_separable_data_needs_regularization_to_stay_bounded(self):
        ds = LabeledDataset(np.array([1, 1, -1, -1]), np.array([[2.0], [3.0], [-2.0], [-3.0]]))
        model = fit_logreg(ds, l2=0.1)
        assert np.isfinite(model.weights).all()

    def test_input_validation(self):
        ds = LabeledDataset(np.array([1]), np.array([[0.0]]))
        with pytest.raises(ValueError):
            fit_logreg(ds.subset([]))
        with pytest.raises(ValueError):
            fit_logreg(ds, l2=-1.0)
        model = fit_logreg(ds, l2=1.0)
        with pytest.raises(ValueError):
            model.predict_proba(np.zeros((2, 3)))

    def test_json_round_trip(self):
        model = LinearLogReg(np.array([1.5, -2.0]), 0.25, 1e-4)
        back = classifier_from_json(json.loads(json.dumps(model.to_json())))
        assert isinstance(back, LinearLogReg)
        assert np.array_equal(back.weights, model.weights)
        assert back.intercept == model.intercept
        assert back.l2 == model.l2


class TestRbfKernel:
    def test_matches_direct_formula(self):
        rng = np.random.default_rng(0)
        X, Y = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
        K = rbf_kernel(X, Y, bandwidth=1.7)
        for i in range(4):
            for j in range(5):
                want = math.exp(-((X[i] - Y[j]) ** 2).sum() / (2 * 1.7**2))
                assert K[i, j] == pytest.approx(want, rel=1e-12)

    def test_diagonal_is_one(self):
        X = np.random.default_rng(1).standard_normal((6, 2))
        assert np.allclose(np.diag(rbf_kernel(X, X, 0.5)), 1.0)

    def test_rejects_bad_bandwidth(self):
        with pytest.raises(ValueError):
            rbf_kernel(np.zeros((1, 1)), np.zeros((1, 1)), 0.0)

    def test_median_heuristic_small_case(self):
        # pairwise distances 1, 3, 2 -> median 2
        X = np.array([[0.0], [1.0], [3.0]])
        assert median_pairwise_distance(X) == pytest.approx(2.0)

    def test_median_heuristic_degenerate_cloud_falls_back(self):
        assert median_pairwise_distance(np.zeros((5, 2))) == 1.0


class TestKernelLogReg:
    def test_chunked_decision_matches_direct(self):
        rng = np.random.default_rng(2)
        model = KernelLogReg(
            centers=rng.standard_normal((20, 2)),
            duals=rng.standard_normal(20),
            intercept=0.3,
            bandwidth=1.0,
            l2=1e-4,
        )
        X = rng.standard_normal((3000, 2))
        want = rbf_kernel(X, model.centers, 1.0) @ model.duals + 0.3
        assert np.allclose(model.decision(X), want)

    def test_separates_nonlinear_classes_where_linear_fails(self):
        # interleaved class means along one axis: no linear rule works
        _, sources = gen_four_gaussian(10, 600, shift=0.0, seed=0)
        test, _ = gen_four_gaussian(2000, 10, shift=0.0, seed=1)
        kernel = fit_kernel_logreg(sources, bandwidth=1.0)
        linear = fit_logreg(sources)
        kernel_miss = (kernel.predict(test.features) != test.labels).mean()
        linear_miss = (linear.predict(test.features) != test.labels).mean()
        assert kernel_miss < 0.25
        assert linear_miss > 0.4

    def test_default_bandwidth_is_median_heuristic(self):
        _, sources = gen_gaussian_shift(10, 200, seed=0)
        model = fit_kernel_logreg(sources)
        assert model.bandwidth == pytest.approx(median_pairwise_distance(sources.features))

    def test_input_validation(self):
        ds = LabeledDataset(np.array([1, -1]), np.array([[0.0], [1.0]]))
        with pytest.raises(ValueError):
            fit_kernel_logreg(ds.subset([]))
        with pytest.raises(ValueError):
            fit_kernel_logreg(ds, l2=0.0)

    def test_json_round_trip(self):
        _, sources = gen_gaussian_shift(10, 50, seed=0)
        model = fit_kernel_logreg(sources, bandwidth=2.0)
        back = classifier_from_json(json.loads(json.dumps(model.to_json())))
        assert isinstance(back, KernelLogReg)
        X = np.linspace(-3, 3, 11)[:, None]
        assert np.allclose(back.predict_proba(X), model.predict_proba(X))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown classifier kind"):
            classifier_from_json({"version": 1, "kind": "mystery"})


class TestSelectL2:
    def test_returns_grid_member(self):
        _, sources = gen_gaussian_shift(10, 300, seed=0)
        grid = (1e-6, 1e-2, 1.0)
        assert select_l2_logreg(sources, grid=grid) in grid

    def test_noisy_small_sample_prefers_more_regularization(self):
        target, _ = gen_gaussian_shift(8, 10, seed=5)
        l2 = select_l2_logreg(target, grid=(1e-8, 10.0))
        assert l2 == 10.0
