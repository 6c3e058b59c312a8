import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emocrowd.dataset import synthesize_dataset
from emocrowd.evaluation import (ExperimentConfig, ExperimentReport, agreement, average_accuracy,
                                 cohen_kappa_from_table, confusion_matrix, fit_fold, fleiss_kappa,
                                 loso_splits, micro_accuracy, pairwise_confusability, run_experiment,
                                 run_methods, validate_report)

from conftest import small_config

FAST = ExperimentConfig(codebook_size=8, lam=1e-3)


def test_loso_three_sequences():
    plan = loso_splits(["s2", "s1", "s3"])
    assert list(plan) == [(("s2", "s3"), "s1"), (("s1", "s3"), "s2"), (("s1", "s2"), "s3")]
    with pytest.raises(ValueError):
        loso_splits(["only"])


def test_loso_never_leaks_the_test_sequence(small_ds):
    plan = loso_splits(small_ds)
    assert len(plan) == len(small_ds.sequences)
    for train, test in plan:
        assert test not in train and set(train) | {test} == set(small_ds.sequences)


def test_confusion_hand_count():
    truth = ["a", "a", "a", "b", "b", "c"]
    pred = ["a", "b", "a", "b", "c", "c"]
    cm = confusion_matrix(truth, pred, ["a", "b", "c"])
    assert cm.counts.tolist() == [[2, 1, 0], [0, 1, 1], [0, 0, 1]]
    np.testing.assert_allclose(cm.row_percent.sum(axis=1), 100.0)
    assert cm.to_csv(percent=False).splitlines()[1] == "a,2,1,0"
    with pytest.raises(ValueError):
        confusion_matrix(["a"], ["z"], ["a"])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
def test_confusion_recount(pairs):
    truth, pred = zip(*pairs)
    cm = confusion_matrix(truth, pred, range(4))
    assert cm.counts.sum() == len(pairs)
    assert cm.counts.sum(axis=1).tolist() == np.bincount(truth, minlength=4).tolist()
    present = cm.counts.sum(axis=1) > 0
    np.testing.assert_allclose(cm.row_percent.sum(axis=1)[present], 100.0)
    recall = np.diag(cm.row_percent)[present] / 100
    assert average_accuracy(truth, pred) == pytest.approx(recall.mean())
    assert micro_accuracy(truth, pred) == pytest.approx(np.trace(cm.counts) / len(pairs))


def test_average_accuracy_hand_case():
    # 20 samples: class 0 has 10 (8 right), class 1 has 6 (3 right), class 2 has 4 (4 right)
    truth = [0] * 10 + [1] * 6 + [2] * 4
    pred = [0] * 8 + [1, 2] + [1] * 3 + [0] * 3 + [2] * 4
    assert average_accuracy(truth, pred) == pytest.approx((0.8 + 0.5 + 1.0) / 3)
    assert micro_accuracy(truth, pred) == pytest.approx(15 / 20)
    with pytest.raises(ValueError):
        average_accuracy([], [])


def test_cohen_kappa_hand_example():
    p_o, p_e, k = cohen_kappa_from_table([[20, 5], [10, 15]])
    assert (p_o, p_e, k) == pytest.approx((0.7, 0.5, 0.4))
    assert cohen_kappa_from_table(np.eye(3) * 4)[2] == 1.0


def test_cohen_matches_independent_implementation():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(0)
    a = rng.integers(0, 4, size=300)
    b = np.where(rng.random(300) < 0.6, a, rng.integers(0, 4, size=300))
    _, k = agreement(list(zip(a, b)))
    assert k == pytest.approx(metrics.cohen_kappa_score(a, b))


def test_fleiss_reference_table():
    counts = [[0, 0, 0, 0, 14], [0, 2, 6, 4, 2], [0, 0, 3, 5, 6], [0, 3, 9, 2, 0], [2, 2, 8, 1, 1],
              [7, 7, 0, 0, 0], [3, 2, 6, 3, 0], [2, 5, 3, 2, 2], [6, 5, 2, 1, 0], [0, 2, 2, 3, 7]]
    rows = [[c for c, n in enumerate(r) for _ in range(n)] for r in counts]
    assert fleiss_kappa(rows) == pytest.approx(0.2099, abs=1e-4)
    overall, k = agreement(rows)
    assert k == pytest.approx(0.2099, abs=1e-4)
    assert 0 < overall < 1


def test_kappa_extremes():
    perfect = [["x", "x", "x"], ["y", "y", "y"]]
    assert agreement(perfect) == (1.0, 1.0)
    rng = np.random.default_rng(3)
    independent = rng.integers(0, 6, size=(6000, 3)).tolist()
    assert abs(agreement(independent)[1]) < 0.02
    with pytest.raises(ValueError):
        agreement([["x"]])


def test_pairwise_confusability():
    rows = [["happy", "excited"], ["excited", "happy"], ["sad", "scared"], ["sad", "sad"]]
    shares = pairwise_confusability(rows)
    assert shares[("excited", "happy")] == pytest.approx(2 / 3)
    assert shares[("sad", "scared")] == pytest.approx(1 / 3)
    assert sum(shares.values()) == pytest.approx(1.0)


@pytest.fixture(scope="module")
def small_reports(small_ds):
    return run_methods(small_ds, ["lowlevel", "aware", "emotion"], FAST)


def test_report_structure(small_reports, small_ds):
    rep = small_reports["emotion"]
    assert len(rep.folds) == len(small_ds.sequences)
    assert rep.confusion.counts.sum() == len(small_ds)
    assert sum(f["n_test"] for f in rep.folds) == len(small_ds)
    d = json.loads(rep.to_json())
    validate_report(d)
    back = ExperimentReport.from_dict(d)
    assert back.to_json() == rep.to_json()
    with pytest.raises(ValueError):
        validate_report(dict(d, average_accuracy=1.5))
    with pytest.raises(ValueError):
        validate_report({k: v for k, v in d.items() if k != "method"})


def test_runs_are_deterministic(small_ds, small_reports):
    again = run_experiment(small_ds, "emotion", FAST)
    assert again.to_json() == small_reports["emotion"].to_json()
    threaded = run_experiment(small_ds, "lowlevel", replace(FAST, threads=2))
    assert threaded.to_json() == small_reports["lowlevel"].to_json()


def test_aware_is_perfect_on_bijective_data(bijective_ds):
    assert run_experiment(bijective_ds, "aware", FAST).average_accuracy == 1.0


def test_fold_fit_ignores_test_sequence(small_ds):
    train_ids, test_id = next(iter(loso_splits(small_ds)))
    rng = np.random.default_rng(0)
    scrambled = tuple(
        replace(c, descriptors={k: rng.normal(size=v.shape) for k, v in c.descriptors.items()},
                behavior=(c.behavior + 1) % 5) if c.sequence_id == test_id else c
        for c in small_ds.clips)
    other = replace(small_ds, clips=scrambled)
    a = fit_fold(small_ds.subset(train_ids), ["lowlevel", "emotion"], FAST)
    b = fit_fold(other.subset(train_ids), ["lowlevel", "emotion"], FAST)
    assert a.fingerprint() == b.fingerprint()


def test_latent_report_extras():
    ds = synthesize_dataset(small_config(noise=2.0, n_sequences=3, clips=10))
    rep = run_experiment(ds, "latent", replace(FAST, latent_outer_iters=2))
    assert rep.extras["test_time_e"] == "max"
    acts = rep.extras["emotion_activation"]
    assert all(0.0 <= v <= 1.0 for row in acts.values() for v in row.values())
