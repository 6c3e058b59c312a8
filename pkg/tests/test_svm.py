import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emocrowd.svm import (LinearModel, MultiClassModel, TrainConfig, objective, predict, predict_batch,
                          train_binary, train_one_vs_all)


def separable(n=200, seed=0, dim=2):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=dim)
    X = rng.normal(size=(n, dim))
    m = X @ w
    keep = np.abs(m) > 0.3
    X, m = X[keep], m[keep]
    return X, np.where(m > 0, 1.0, -1.0)


def test_separable_problem_fully_classified():
    X, y = separable()
    m = train_binary(X, y, TrainConfig(lam=1e-4))
    assert m.converged
    assert np.all(np.sign(m.decision(X)) == y)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_solution_is_a_minimum(seed):
    # convex objective: no small perturbation of (w, b) can improve it
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 3))
    y = np.where(rng.random(60) < 0.5, 1.0, -1.0)
    lam = 0.05
    m = train_binary(X, y, TrainConfig(lam=lam, tol=1e-8))
    f0 = objective(m.w, m.b, X, y, lam)
    assert m.objective == pytest.approx(f0)
    for _ in range(20):
        dw, db = rng.normal(size=3) * 1e-3, rng.normal() * 1e-3
        assert objective(m.w + dw, m.b + db, X, y, lam) >= f0 - 1e-7


def test_matches_independent_solver():
    sk = pytest.importorskip("sklearn.svm")
    rng = np.random.default_rng(3)
    X = rng.normal(size=(150, 4))
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=150) > 0, 1.0, -1.0)
    lam = 0.01
    ours = train_binary(X, y, TrainConfig(lam=lam, tol=1e-8))
    # lam ||w||^2 + mean hinge  ==  (1/2)||w||^2 + C sum hinge  with  C = 1 / (2 lam n)
    ref = sk.SVC(kernel="linear", C=1.0 / (2 * lam * len(X)), tol=1e-8).fit(X, y)
    f_ref = objective(ref.coef_[0], ref.intercept_[0], X, y, lam)
    assert ours.objective <= f_ref + 1e-6
    np.testing.assert_allclose(ours.w, ref.coef_[0], atol=1e-3)


def test_no_intercept_mode():
    X, y = separable(seed=1)
    m = train_binary(X, y, TrainConfig(lam=1e-3), fit_intercept=False)
    assert m.b == 0.0
    assert np.mean(np.sign(X @ m.w) == y) > 0.95


def test_single_class_is_degenerate_with_warning():
    X = np.ones((5, 2))
    with pytest.warns(RuntimeWarning, match="only class"):
        m = train_binary(X, -np.ones(5))
    assert m.degenerate and m.b == -1.0 and not m.w.any()


def test_input_validation():
    with pytest.raises(ValueError):
        train_binary(np.ones((3, 2)), [1, 0, -1])
    with pytest.raises(ValueError):
        train_binary(np.array([[np.nan, 0.0], [1.0, 1.0]]), [1, -1])
    with pytest.raises(ValueError):
        TrainConfig(lam=0)


def test_one_vs_all_and_tie_break():
    rng = np.random.default_rng(5)
    centers = np.array([[5.0, 0], [0, 5.0], [-5.0, -5.0]])
    labels = np.repeat(["a", "b", "c"], 30)
    X = centers[np.repeat(np.arange(3), 30)] + rng.normal(size=(90, 2))
    m = train_one_vs_all(X, labels, TrainConfig(lam=1e-3), class_order=["a", "b", "c"])
    idx, _ = predict_batch(m, X)
    assert np.mean(np.array(["a", "b", "c"])[idx] == labels) > 0.97

    tied = MultiClassModel([LinearModel(np.zeros(2), 0.5, 0.01) for _ in range(3)], ["z", "y", "x"])
    assert predict(tied, np.array([1.0, 2.0]))[0] == "z"
    with pytest.raises(ValueError):
        predict(tied, np.zeros(3))


def test_one_vs_all_rejects_unknown_and_single_label():
    with pytest.raises(ValueError):
        train_one_vs_all(np.zeros((2, 1)), ["a", "a"])
    with pytest.raises(ValueError):
        train_one_vs_all(np.zeros((2, 1)), ["a", "b"], class_order=["a"])


def test_json_round_trip(tmp_path):
    m = MultiClassModel([LinearModel(np.array([1.0, -2.0]), 0.25, 0.01),
                         LinearModel(np.array([0.0, 3.0]), -1.0, 0.01)], ["p", "q"])
    m.save(tmp_path / "m.json")
    back = MultiClassModel.load(tmp_path / "m.json")
    assert back.class_order == ["p", "q"]
    X = np.random.default_rng(0).normal(size=(4, 2))
    np.testing.assert_array_equal(back.decision(X), m.decision(X))
