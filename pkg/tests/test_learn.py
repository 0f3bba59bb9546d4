import json

import numpy as np
import pytest

from modules.core import seeded_rng
from modules.learn import (
    KrrModel,
    LearnConfig,
    LearnError,
    MlpModel,
    accuracy,
    feature_size,
    feature_vector,
    frame_features,
    gradient_check,
    krr_cv,
    krr_fit,
    krr_predict,
    mlp_init,
    mlp_predict,
    mlp_predict_proba,
    mlp_train,
    pool_trial,
    rbf_kernel,
    rmse,
)
from modules.percept import ObjectPercept
from modules.tracking import DisplacementField


def sine_data(n=50):
    x = np.linspace(0.0, 2.0 * np.pi, n)
    return x[:, None], np.sin(x)


def blobs(rng, per_class=40):
    centers = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
    X = np.vstack([c + rng.normal(0.0, 0.5, size=(per_class, 2)) for c in centers])
    labels = np.repeat(np.arange(3), per_class)
    return X, labels


def test_krr_weights_solve_the_regularized_system():
    rng = seeded_rng(1)
    X = rng.normal(size=(40, 3))
    y = np.sin(X[:, 0]) + 0.1 * X[:, 1]
    model = krr_fit(X, y, lam=1e-2, gamma=0.5)
    K = rbf_kernel(model.support, model.support, 0.5)
    expected = np.linalg.solve(K + 1e-2 * np.eye(40), y)
    np.testing.assert_allclose(model.weights, expected, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(model.support, (X - X.mean(axis=0)) / X.std(axis=0))


def test_krr_interpolates_a_smooth_function():
    X, y = sine_data()
    model = krr_fit(X, y, lam=1e-4, gamma=1.0)
    midpoints = (X[:-1] + X[1:]) / 2.0
    np.testing.assert_allclose(krr_predict(model, midpoints), np.sin(midpoints[:, 0]), atol=0.02)
    assert isinstance(krr_predict(model, X[3]), float)


def test_krr_model_document():
    X, y = sine_data(20)
    model = krr_fit(X, y, lam=1e-3, gamma=1.0)
    restored = KrrModel.from_dict(json.loads(json.dumps(model.to_dict())))
    assert restored.dim == 1
    np.testing.assert_allclose(krr_predict(restored, X), krr_predict(model, X))
    with pytest.raises(LearnError):
        KrrModel.from_dict({**model.to_dict(), "schema": "mlp-model"})
    with pytest.raises(LearnError):
        KrrModel.from_dict({**model.to_dict(), "schema_version": 99})


def test_krr_rejects_bad_input():
    X, y = sine_data(10)
    with pytest.raises(LearnError):
        krr_fit(X, y[:5], lam=1e-3, gamma=1.0)
    with pytest.raises(LearnError):
        krr_fit(X, y, lam=-1.0, gamma=1.0)
    with pytest.raises(LearnError):
        krr_fit(X, y, lam=1e-3, gamma=0.0)
    with pytest.raises(LearnError):
        krr_fit(np.vstack([X, X[:1]]), np.append(y, y[0]), lam=0.0, gamma=1.0)
    bad = X.copy()
    bad[2, 0] = np.nan
    with pytest.raises(LearnError):
        krr_fit(bad, y, lam=1e-3, gamma=1.0)
    model = krr_fit(X, y, lam=1e-3, gamma=1.0)
    with pytest.raises(LearnError):
        krr_predict(model, np.zeros(2))
    with pytest.raises(LearnError):
        krr_predict(model, np.array([np.inf]))


def test_duplicates_are_fine_with_a_ridge():
    X, y = sine_data(10)
    model = krr_fit(np.vstack([X, X[:1]]), np.append(y, y[0]), lam=1e-2, gamma=1.0)
    assert np.all(np.isfinite(model.weights))


def test_krr_cross_validation_picks_from_the_grid():
    X, y = sine_data(60)
    order = seeded_rng(0).permutation(60)
    gamma, lam, error = krr_cv(X[order], y[order], gammas=(1.0,), lambdas=(1e-4, 10.0), folds=5)
    assert gamma == 1.0
    assert lam == 1e-4
    assert error < 0.1


def test_krr_cross_validation_keeps_groups_together():
    X, y = sine_data(30)
    groups = np.repeat(np.arange(6), 5)
    gamma, lam, _ = krr_cv(X, y, gammas=(1.0,), lambdas=(1e-3,), groups=groups)
    assert (gamma, lam) == (1.0, 1e-3)
    with pytest.raises(LearnError):
        krr_cv(X, y, groups=np.zeros(30, dtype=int))


def test_rmse():
    assert rmse(np.array([1.0, 2.0]), np.array([1.0, 4.0])) == pytest.approx(np.sqrt(2.0))


def test_gradient_check_agrees_with_backpropagation():
    rng = seeded_rng(5)
    weights, biases = mlp_init([4, 6, 5, 3], rng)
    Z = rng.normal(size=(5, 4))
    labels = np.array([0, 1, 2, 1, 0])
    assert gradient_check(weights, biases, Z, labels) < 1e-4


def test_glorot_initialization():
    weights, biases = mlp_init([10, 6, 2], seeded_rng(0))
    assert [w.shape for w in weights] == [(10, 6), (6, 2)]
    assert np.all(np.abs(weights[0]) <= np.sqrt(6.0 / 16.0))
    assert all(np.all(b == 0.0) for b in biases)


def test_mlp_separates_blobs():
    X, labels = blobs(seeded_rng(2))
    model, losses = mlp_train(X, labels, seeded_rng(3), classes=["a", "b", "c"], epochs=2000, lr=0.3, hidden=(10,))
    assert losses[-1] < losses[0]
    assert accuracy(mlp_predict(model, X), labels) >= 0.95
    probabilities = mlp_predict_proba(model, X)
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0)
    assert model.classes == ["a", "b", "c"]


def test_mlp_minibatches_are_reproducible():
    X, labels = blobs(seeded_rng(2), per_class=10)
    first, losses_a = mlp_train(X, labels, seeded_rng(4), epochs=20, batch_size=8, hidden=(5,))
    second, losses_b = mlp_train(X, labels, seeded_rng(4), epochs=20, batch_size=8, hidden=(5,))
    assert losses_a == losses_b
    np.testing.assert_array_equal(first.weights[0], second.weights[0])


def test_mlp_model_document():
    X, labels = blobs(seeded_rng(2), per_class=10)
    model, _ = mlp_train(X, labels, seeded_rng(4), epochs=50, hidden=(5,))
    restored = MlpModel.from_dict(json.loads(json.dumps(model.to_dict())))
    np.testing.assert_allclose(mlp_predict_proba(restored, X), mlp_predict_proba(model, X))
    with pytest.raises(LearnError):
        MlpModel.from_dict({**model.to_dict(), "schema": "krr-model"})


def test_mlp_restarts_after_a_plateau(caplog):
    X, labels = blobs(seeded_rng(2), per_class=10)
    single, _ = mlp_train(X, labels, seeded_rng(4), epochs=5, hidden=(5,))
    retried, _ = mlp_train(X, labels, seeded_rng(4), epochs=5, hidden=(5,), restarts=2)
    assert sum("stalled" in record.message for record in caplog.records) == 2
    assert accuracy(mlp_predict(retried, X), labels) >= accuracy(mlp_predict(single, X), labels)
    again, _ = mlp_train(X, labels, seeded_rng(4), epochs=5, hidden=(5,), restarts=2)
    np.testing.assert_array_equal(again.weights[0], retried.weights[0])
    with pytest.raises(LearnError):
        mlp_train(X, labels, seeded_rng(4), epochs=5, restarts=-1)


def test_mlp_rejects_bad_labels():
    X = np.zeros((4, 2))
    with pytest.raises(LearnError):
        mlp_train(X, np.zeros(4, dtype=int), seeded_rng(0), epochs=1)
    with pytest.raises(LearnError):
        mlp_train(X, np.array([0, 1, 2, 3]), seeded_rng(0), classes=["a", "b"], epochs=1)
    with pytest.raises(LearnError):
        mlp_train(X, np.array([0, 1]), seeded_rng(0), epochs=1)


def test_feature_vector_layout():
    field = DisplacementField.from_arrays([1.0, 2.0, 3.0], [4.0, 5.0, 6.0], ratio=[1.1, 1.0, 0.9])
    field.stale[1] = True
    percept = ObjectPercept(True, (100.0, 50.0), 400, 0.25)
    features = feature_vector(field, percept, include_ratio=True)
    assert features.size == feature_size(3, include_ratio=True)
    np.testing.assert_allclose(
        features.values, [1.0, 0.0, 3.0, 4.0, 0.0, 6.0, 100.0, 50.0, 0.25, 400.0, 0.1, 0.0, -0.1], atol=1e-12
    )
    assert features.mask.tolist() == [True, False, True] * 2 + [True] * 4 + [True, False, True]


def test_feature_vector_without_object():
    field = DisplacementField.from_arrays([1.0, 2.0], [3.0, 4.0])
    features = feature_vector(field, ObjectPercept(False), n_markers=4)
    assert features.size == feature_size(4)
    np.testing.assert_array_equal(features.values[8:], 0.0)


def test_trial_pooling():
    deviations = np.arange(24, dtype=float).reshape(3, 4, 2)
    objects = np.ones((3, 4))
    frames = frame_features(deviations, objects)
    assert frames.shape == (3, 12)
    np.testing.assert_array_equal(frames[0, :4], [0.0, 2.0, 4.0, 6.0])
    pooled = pool_trial(frames)
    assert pooled.shape == (24,)
    np.testing.assert_allclose(pooled[:12], frames.mean(axis=0))
    assert pool_trial(frames, "mean").shape == (12,)
    with pytest.raises(LearnError):
        pool_trial(frames, "max")
    with pytest.raises(LearnError):
        pool_trial(frames[:0])


def test_learn_config_validation():
    with pytest.raises(LearnError):
        LearnConfig(pooling="median")
    with pytest.raises(LearnError):
        LearnConfig(mlp_lr=0.0)
    with pytest.raises(LearnError):
        LearnConfig(mlp_restarts=-1)
    assert LearnConfig().krr_cv
