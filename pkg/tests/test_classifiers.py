"""Convex solvers checked against long-run plain gradient descent oracles.

The oracles are independent reimplementations: plain full-batch gradient
descent with a 1/L step run for a million iterations (numba-compiled), so
any agreement with the package solvers is evidence both are right.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numba import njit

from metafunc.classifiers import (
    FitConfig,
    LinearClassifier,
    MulticlassLinear,
    class_prototypes,
    compute_prototypes,
    decision,
    load_classifier,
    logistic_objective,
    predict_ova,
    save_classifier,
    softmax_objective,
    svm_objective,
    train_linear_svm,
    train_logistic,
    train_softmax,
)
from metafunc.errors import DataError, DegenerateLabels, DimensionError, EmptyClass


@njit(cache=True)
def _gd_logistic_oracle(Xt, y, C, steps, lr):
    """Plain gradient descent on 0.5||w||^2 + C*sum(log1p(exp(-y z)))."""
    n, p = Xt.shape
    theta = np.zeros(p)
    for _ in range(steps):
        g = np.zeros(p)
        for j in range(p - 1):
            g[j] = theta[j]  # bias (last slot) is not regularized
        for i in range(n):
            z = 0.0
            for j in range(p):
                z += Xt[i, j] * theta[j]
            m = -y[i] * z
            if m >= 0.0:
                s = 1.0 / (1.0 + np.exp(-m))
            else:
                e = np.exp(m)
                s = e / (1.0 + e)
            coef = -C * y[i] * s
            for j in range(p):
                g[j] += coef * Xt[i, j]
        for j in range(p):
            theta[j] -= lr * g[j]
    return theta


@njit(cache=True)
def _gd_softmax_oracle(Xt, y, n_classes, C, steps, lr):
    """Plain gradient descent on 0.5*sum||w_c||^2 + C*cross-entropy."""
    n, p = Xt.shape
    theta = np.zeros((n_classes, p))
    logits = np.empty(n_classes)
    for _ in range(steps):
        g = theta.copy()
        for c in range(n_classes):
            g[c, p - 1] = 0.0  # biases are not regularized
        for i in range(n):
            mx = -1e300
            for c in range(n_classes):
                z = 0.0
                for j in range(p):
                    z += theta[c, j] * Xt[i, j]
                logits[c] = z
                if z > mx:
                    mx = z
            total = 0.0
            for c in range(n_classes):
                logits[c] = np.exp(logits[c] - mx)
                total += logits[c]
            for c in range(n_classes):
                prob = logits[c] / total
                delta = prob - (1.0 if c == y[i] else 0.0)
                coef = C * delta
                for j in range(p):
                    g[c, j] += coef * Xt[i, j]
        for c in range(n_classes):
            for j in range(p):
                theta[c, j] -= lr * g[c, j]
    return theta


def _random_binary_task(rng, n=12, d=3):
    X = rng.normal(size=(n, d)) + rng.normal(size=d)
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    if np.unique(y).size < 2:
        y[0], y[1] = 1.0, -1.0
    return X, y


def _random_multiclass_task(rng, n=15, d=3, n_classes=3):
    X = rng.normal(size=(n, d))
    y = rng.integers(0, n_classes, size=n)
    y[:n_classes] = np.arange(n_classes)  # every class present
    return X, y.astype(np.int64)


class TestConvexSolverOracle:
    def test_logistic_and_softmax_match_long_gd(self):
        """Acceptance gate: gradient norm at the solution <= 1e-6 and the
        objective within 1e-3 relative of a million-step plain-GD oracle,
        over 5 random small tasks, in under 30 seconds."""
        t0 = time.perf_counter()
        rng = np.random.default_rng(1234)
        for task in range(5):
            C = [0.1, 1.0, 10.0, 0.5, 2.0][task]
            cfg = FitConfig(inverse_reg_C=C)

            X, y = _random_binary_task(rng)
            clf = train_logistic(X, y, cfg)
            params = clf.flatten()
            f, g = logistic_objective(params, X, y, C)
            assert np.linalg.norm(g) <= 1e-6
            Xt = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
            lip = 1.0 + 0.25 * C * np.linalg.norm(Xt, 2) ** 2
            ref = _gd_logistic_oracle(Xt, y, C, 10**6, 1.0 / lip)
            f_ref, _ = logistic_objective(ref, X, y, C)
            assert abs(f - f_ref) <= 1e-3 * max(1.0, abs(f_ref))

            Xm, ym = _random_multiclass_task(rng)
            mclf = train_softmax(Xm, ym, cfg)
            mparams = mclf.flatten()
            fm, gm = softmax_objective(mparams, Xm, ym, 3, C)
            assert np.linalg.norm(gm) <= 1e-6
            Xmt = np.concatenate([Xm, np.ones((Xm.shape[0], 1))], axis=1)
            lip_m = 1.0 + 0.5 * C * np.linalg.norm(Xmt, 2) ** 2
            ref_m = _gd_softmax_oracle(Xmt, ym, 3, C, 10**6, 1.0 / lip_m)
            fm_ref, _ = softmax_objective(ref_m.ravel(), Xm, ym, 3, C)
            assert abs(fm - fm_ref) <= 1e-3 * max(1.0, abs(fm_ref))
        assert time.perf_counter() - t0 < 30.0

    def test_plain_gd_path_agrees_with_newton(self):
        rng = np.random.default_rng(7)
        X, y = _random_binary_task(rng)
        newton = train_logistic(X, y, FitConfig(inverse_reg_C=1.0))
        gd = train_logistic(X, y, FitConfig(inverse_reg_C=1.0, solver="gd", max_iter=200000))
        assert np.allclose(newton.flatten(), gd.flatten(), atol=1e-4)


class TestLogistic:
    def test_separable_data_is_classified(self):
        X = np.concatenate([np.full((10, 2), 3.0), np.full((10, 2), -3.0)])
        y = np.concatenate([np.ones(10), -np.ones(10)])
        clf = train_logistic(X, y)
        assert np.all(np.sign(decision(clf, X)) == y)

    def test_regularization_shrinks_weights(self):
        rng = np.random.default_rng(0)
        X, y = _random_binary_task(rng, n=30)
        small = train_logistic(X, y, FitConfig(inverse_reg_C=0.01))
        large = train_logistic(X, y, FitConfig(inverse_reg_C=100.0))
        assert np.linalg.norm(small.weights) < np.linalg.norm(large.weights)

    def test_rejects_bad_labels(self):
        X = np.zeros((4, 2))
        with pytest.raises(DegenerateLabels):
            train_logistic(X, np.array([0, 1, 0, 1]))
        with pytest.raises(DegenerateLabels):
            train_logistic(X, np.ones(4))

    def test_fit_is_deterministic(self):
        rng = np.random.default_rng(5)
        X, y = _random_binary_task(rng)
        a = train_logistic(X, y)
        b = train_logistic(X, y)
        assert np.array_equal(a.flatten(), b.flatten())

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31))
    def test_label_flip_antisymmetry(self, seed):
        rng = np.random.default_rng(seed)
        X, y = _random_binary_task(rng, n=10)
        a = train_logistic(X, y)
        b = train_logistic(X, -y)
        assert np.allclose(a.weights, -b.weights, atol=1e-5)
        assert abs(a.bias + b.bias) < 1e-5


class TestSvm:
    def test_objective_beats_zero_solution(self):
        rng = np.random.default_rng(2)
        X, y = _random_binary_task(rng, n=40)
        clf = train_linear_svm(X, y, FitConfig(max_iter=5000))
        zero_obj = svm_objective(np.zeros(X.shape[1] + 1), X, y, 1.0)
        assert svm_objective(clf.flatten(), X, y, 1.0) <= zero_obj

    def test_separable_data_is_classified(self):
        X = np.concatenate([np.full((10, 2), 2.0), np.full((10, 2), -2.0)])
        y = np.concatenate([np.ones(10), -np.ones(10)])
        clf = train_linear_svm(X, y, FitConfig(max_iter=5000))
        assert np.all(np.sign(decision(clf, X)) == y)

    def test_near_optimal_on_small_task(self):
        """Grid-check: no nearby parameter point has a lower objective."""
        rng = np.random.default_rng(3)
        X, y = _random_binary_task(rng, n=20, d=2)
        clf = train_linear_svm(X, y, FitConfig(max_iter=20000))
        best = svm_objective(clf.flatten(), X, y, 1.0)
        for delta in np.array(np.meshgrid(*[[-0.05, 0.0, 0.05]] * 3)).reshape(3, -1).T:
            assert svm_objective(clf.flatten() + delta, X, y, 1.0) >= best - 1e-6


class TestSoftmax:
    def test_matches_logistic_decision_for_two_classes(self):
        rng = np.random.default_rng(4)
        X, y = _random_binary_task(rng, n=20)
        y01 = ((y + 1) // 2).astype(np.int64)
        soft = train_softmax(X, y01, FitConfig(inverse_reg_C=1.0))
        pred = soft.predict(X)
        # the softmax score difference is a binary linear classifier
        w = soft.weight_rows[1] - soft.weight_rows[0]
        b = soft.biases[1] - soft.biases[0]
        assert np.array_equal(pred, (X @ w + b > 0).astype(np.int64))

    def test_rejects_missing_class(self):
        X = np.zeros((4, 2))
        with pytest.raises(DegenerateLabels):
            train_softmax(X, np.array([0, 0, 2, 2]))


class TestStructures:
    def test_flatten_unflatten_roundtrip(self):
        clf = LinearClassifier(np.array([1.0, -2.0]), 0.5)
        assert LinearClassifier.unflatten(clf.flatten()) == clf
        mclf = MulticlassLinear(np.arange(6.0).reshape(3, 2), np.array([0.1, 0.2, 0.3]))
        assert MulticlassLinear.unflatten(mclf.flatten(), 3) == mclf

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            LinearClassifier(np.array([np.nan]), 0.0)

    def test_predict_ova_ties_go_to_lowest_index(self):
        clf = LinearClassifier(np.array([1.0, 0.0]), 0.0)
        assert predict_ova([clf, clf, clf], np.array([2.0, 0.0])) == 0

    def test_decision_dim_check(self):
        clf = LinearClassifier(np.array([1.0, 0.0]), 0.0)
        with pytest.raises(DimensionError):
            decision(clf, np.zeros(3))

    def test_prototypes(self):
        pair = compute_prototypes(np.array([[0.0, 2.0], [2.0, 0.0]]), np.array([[4.0, 4.0]]))
        assert np.array_equal(pair.positive, [1.0, 1.0])
        assert np.array_equal(pair.negative, [4.0, 4.0])
        assert np.array_equal(pair.flatten(), [1.0, 1.0, 4.0, 4.0])
        with pytest.raises(EmptyClass):
            compute_prototypes(np.zeros((0, 2)), np.zeros((1, 2)))

    def test_class_prototypes_shape(self):
        supports = np.arange(12.0).reshape(2, 3, 2)
        flat = class_prototypes(supports)
        assert flat.shape == (4,)
        assert np.array_equal(flat[:2], supports[0].mean(axis=0))

    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(9)
        X, y = _random_binary_task(rng)
        clf = train_logistic(X, y)
        path = tmp_path / "clf.bin"
        save_classifier(clf, path)
        loaded = load_classifier(path)
        assert isinstance(loaded, LinearClassifier)
        assert np.allclose(loaded.flatten(), clf.flatten(), atol=1e-6)

        Xm, ym = _random_multiclass_task(rng)
        mclf = train_softmax(Xm, ym)
        save_classifier(mclf, path)
        mloaded = load_classifier(path)
        assert isinstance(mloaded, MulticlassLinear)
        assert np.allclose(mloaded.flatten(), mclf.flatten(), atol=1e-6)

    def test_fit_config_validation(self):
        with pytest.raises(DataError):
            FitConfig(inverse_reg_C=-1.0).validate()
        with pytest.raises(DataError):
            FitConfig(tol=0.0).validate()
        with pytest.raises(DataError):
            FitConfig(solver="adam").validate()
