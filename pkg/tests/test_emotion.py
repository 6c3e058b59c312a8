import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emocrowd.emotion import (EmotionClassifierBank, EmotionPipeline, classify, emotion_aware_feature,
                              emotion_representation, fit_behavior_on_emotion, fit_emotion_bank)
from emocrowd.evaluation import ExperimentConfig, average_accuracy, run_experiment
from emocrowd.svm import LinearModel, TrainConfig, predict_batch, train_one_vs_all

from conftest import BIJECTION

CFG = TrainConfig(lam=1e-3)


def clustered(n_per=40, k=6, dim=6, spread=4.0, noise=1.0, seed=0):
    rng = np.random.default_rng(seed)
    means = spread * np.eye(k, dim)
    lab = np.repeat(np.arange(k), n_per)
    X = means[lab] + noise * rng.normal(size=(len(lab), dim))
    E = np.eye(k, dtype=np.int8)[lab]
    return X, E, lab


@pytest.fixture(scope="module")
def bank_data():
    X, E, lab = clustered()
    return X, E, lab, fit_emotion_bank(X, E, CFG)


def test_bank_on_separable_emotions(bank_data):
    X, E, lab, bank = bank_data
    assert bank.K == 6 and not bank.warnings
    assert np.mean(np.argmax(bank.scores(X), axis=1) == lab) >= 0.95


def test_representation_is_affine(bank_data):
    X, _, _, bank = bank_data
    a, b = X[0], X[50]
    for t in (0.0, 0.3, 1.0, 2.5):
        np.testing.assert_allclose(emotion_representation(t * a + (1 - t) * b, bank),
                                   t * emotion_representation(a, bank) + (1 - t) * emotion_representation(b, bank),
                                   atol=1e-10)
    with pytest.raises(ValueError):
        emotion_representation(np.zeros(3), bank)


def test_pipeline_composes_bank_and_behavior_model(bank_data):
    X, _, lab, bank = bank_data
    behaviors = [f"b{v % 5}" for v in lab]
    pipe = fit_behavior_on_emotion(X, behaviors, bank, CFG, class_order=[f"b{i}" for i in range(5)])
    np.testing.assert_allclose(pipe.decision(X), pipe.behavior_model.decision(bank.scores(X)))
    label, scores = classify(pipe, X[3])
    assert label == pipe.behavior_model.class_order[int(np.argmax(scores))]


def test_pipeline_json_round_trip(bank_data, tmp_path):
    X, _, lab, bank = bank_data
    pipe = fit_behavior_on_emotion(X, list(lab % 2), bank, CFG)
    pipe.save(tmp_path / "p.json")
    back = EmotionPipeline.load(tmp_path / "p.json")
    np.testing.assert_array_equal(back.decision(X), pipe.decision(X))


def test_training_order_does_not_matter():
    X, E, _ = clustered(n_per=15, noise=2.0, seed=1)
    perm = np.random.default_rng(0).permutation(len(X))
    a = fit_emotion_bank(X, E, TrainConfig(lam=1e-2, tol=1e-9))
    b = fit_emotion_bank(X[perm], E[perm], TrainConfig(lam=1e-2, tol=1e-9))
    np.testing.assert_allclose(a.scores(X), b.scores(X), atol=1e-4)


def test_all_neutral_training_gives_degenerate_classifiers():
    X = np.random.default_rng(0).normal(size=(10, 3))
    E = np.zeros((10, 6), dtype=np.int8)
    E[:, 5] = 1
    bank = fit_emotion_bank(X, E, CFG)
    assert len(bank.warnings) == 6
    assert all(m.degenerate for m in bank.classifiers)
    s = bank.scores(X)
    assert np.all(s[:, :5] == -1.0) and np.all(s[:, 5] == 1.0)


def test_emotion_aware_feature():
    assert emotion_aware_feature([0, 1, 0, 0, 0, 0]).tolist() == [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]
    with pytest.raises(ValueError, match="exactly one"):
        emotion_aware_feature([1, 1, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        emotion_aware_feature([0, 2, 0, 0, 0, 0])


@settings(max_examples=10, deadline=None)
@given(st.permutations(range(6)))
def test_aware_recovers_any_injective_mapping(perm):
    # behavior b always shows emotion perm[b]
    lab = np.repeat(np.arange(5), 8)
    E = np.eye(6)[np.asarray(perm)[lab]]
    m = train_one_vs_all(E, lab, CFG, class_order=list(range(5)))
    assert average_accuracy(lab, predict_batch(m, E)[0]) == 1.0


def test_aware_cannot_split_behaviors_sharing_an_emotion():
    # behaviors 0 and 1 both always show emotion 3: the pair is indistinguishable
    mapping = np.array([3, 3, 4, 2, 5])
    lab = np.repeat(np.arange(5), 10)
    E = np.eye(6)[mapping[lab]]
    m = train_one_vs_all(E, lab, CFG, class_order=list(range(5)))
    pred = predict_batch(m, E)[0]
    pair = np.isin(lab, (0, 1))
    assert np.mean(pred[pair] == lab[pair]) == pytest.approx(0.5)
    assert np.all(pred[~pair] == lab[~pair])


def test_aware_end_to_end_on_bijective_dataset(bijective_ds):
    rep = run_experiment(bijective_ds, "aware", ExperimentConfig(codebook_size=8))
    assert rep.average_accuracy == 1.0
    assert all(c.emotion_index == BIJECTION[c.behavior] for c in bijective_ds.clips)


def test_bank_shape_checks():
    with pytest.raises(ValueError):
        EmotionClassifierBank([LinearModel(np.zeros(2), 0.0, 0.01)], ("a", "b"))
    with pytest.raises(ValueError):
        EmotionClassifierBank([LinearModel(np.zeros(2), 0.0, 0.01), LinearModel(np.zeros(3), 0.0, 0.01)],
                              ("a", "b"))
