import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emocrowd.dataset import (ConfigError, Dataset, ManifestError, SynthConfig, datasets_equal,
                              load_manifest, make_clip, majority_vote, mediated_config, save_manifest,
                              synthesize_dataset, uniform_config, validate_dataset)
from emocrowd.labels import BEHAVIORS, EMOTIONS, K, BehaviorLabel, EmotionLabel, emotion_vector

from conftest import BIJECTION, bijective_table, small_config

H, E, A = EmotionLabel.HAPPY, EmotionLabel.EXCITED, EmotionLabel.ANGRY


def test_taxonomy_order():
    assert [b.value for b in BEHAVIORS] == ["panic", "fight", "congestion", "obstacle", "neutral"]
    assert [e.value for e in EMOTIONS] == ["angry", "happy", "excited", "scared", "sad", "neutral"]
    assert K == 6
    assert BehaviorLabel.parse("Fight") is BehaviorLabel.FIGHT
    with pytest.raises(ValueError):
        BehaviorLabel.parse("riot")


def test_emotion_vector_one_hot():
    assert emotion_vector(EmotionLabel.HAPPY).tolist() == [0, 1, 0, 0, 0, 0]


def test_majority_vote_examples():
    assert majority_vote([H, H, E]) is H
    assert majority_vote([A]) is A
    # a tie goes to the label earlier in the fixed order (happy before excited)
    assert majority_vote([H, E]) is H
    assert majority_vote([E, H]) is H
    assert majority_vote([2, 1, 2]) == 2
    with pytest.raises(ValueError):
        majority_vote([])


@given(st.lists(st.sampled_from(list(EmotionLabel)), min_size=1, max_size=9), st.randoms())
def test_majority_vote_permutation_invariant(labels, rnd):
    shuffled = list(labels)
    rnd.shuffle(shuffled)
    assert majority_vote(shuffled) is majority_vote(labels)


def test_make_clip_aggregates():
    c = make_clip("c0", "s0", 0, [1, 1, 2], {"generic": np.zeros((2, 3))})
    assert c.emotion.tolist() == [0, 1, 0, 0, 0, 0]
    assert c.emotion_annotations == (1, 1, 2)


def test_synthesize_deterministic_and_seed_sensitive():
    a = synthesize_dataset(small_config(seed=5))
    b = synthesize_dataset(small_config(seed=5))
    c = synthesize_dataset(small_config(seed=6))
    assert datasets_equal(a, b)
    assert not datasets_equal(a, c)


def test_synthesize_invariants(small_ds):
    assert validate_dataset(small_ds).ok
    counts = np.bincount(small_ds.behaviors(), minlength=5)
    assert counts.max() - counts.min() <= 1
    assert (small_ds.emotions().sum(axis=1) == 1).all()
    assert len(small_ds.sequences) == 4


def test_synthesize_balance_with_uneven_total():
    ds = synthesize_dataset(small_config(n_sequences=3, clips=7))
    counts = np.bincount(ds.behaviors(), minlength=5)
    assert counts.sum() == 21 and counts.max() - counts.min() <= 1


def test_degenerate_noise_identity_table():
    ds = synthesize_dataset(small_config(table=bijective_table(), noise=1e-9))
    cfg = small_config(table=bijective_table())
    means = np.asarray(cfg.emotion_to_mean)
    for c in ds.clips:
        assert c.emotion_index == BIJECTION[c.behavior]
        np.testing.assert_allclose(c.descriptors["generic"], np.broadcast_to(means[c.emotion_index], (10, 8)),
                                   atol=1e-7)


def test_uniform_table_emotion_frequencies_within_3_sigma():
    cfg = uniform_config(seed=11, n_sequences=20, clips_per_sequence=60, descriptors_per_clip=1)
    ds = synthesize_dataset(cfg)
    beh, emo = ds.behaviors(), ds.emotions().argmax(axis=1)
    chi2 = 0.0
    for b in range(5):
        n = int((beh == b).sum())
        obs = np.bincount(emo[beh == b], minlength=6)
        p = 1.0 / 6
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(obs - n * p) <= 3 * sigma)
        chi2 += (((obs - n * p) ** 2) / (n * p)).sum()
    # 5 x 5 degrees of freedom; 99.9% quantile of chi2(25) is about 52.6
    assert chi2 < 52.6


def test_generated_emotion_follows_table():
    ds = synthesize_dataset(mediated_config(seed=2))
    beh, emo = ds.behaviors(), ds.emotions().argmax(axis=1)
    table = np.asarray(mediated_config().behavior_to_emotion)
    for b in range(5):
        freq = np.bincount(emo[beh == b], minlength=6) / (beh == b).sum()
        n = (beh == b).sum()
        assert np.all(np.abs(freq - table[b]) <= 4 * np.sqrt(table[b] * (1 - table[b]) / n) + 1e-12)


def test_config_validation_errors():
    good = small_config().to_dict()
    bad = dict(good, behavior_to_emotion=[[0.5] * 6] * 5)
    with pytest.raises(ConfigError, match="row 0"):
        SynthConfig.from_dict(bad)
    with pytest.raises(ConfigError):
        SynthConfig.from_dict(dict(good, noise_scale=0))
    with pytest.raises(ConfigError, match="unknown"):
        SynthConfig.from_dict(dict(good, colour="red"))
    with pytest.raises(ConfigError, match="missing"):
        SynthConfig.from_dict({k: v for k, v in good.items() if k != "noise_scale"})
    assert SynthConfig.from_dict(good).to_dict() == good


def test_config_file_round_trip(tmp_path):
    cfg = small_config(seed=3)
    cfg.save(tmp_path / "c.json")
    back = SynthConfig.load(tmp_path / "c.json")
    assert datasets_equal(synthesize_dataset(cfg), synthesize_dataset(back))
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError, match="line 1"):
        SynthConfig.load(tmp_path / "bad.json")


def test_validate_reports_violations(small_ds):
    c0 = small_ds.clips[0]
    two_hot = replace(c0, emotion=np.array([1, 1, 0, 0, 0, 0], dtype=np.int8))
    report = validate_dataset(replace(small_ds, clips=(two_hot,) + small_ds.clips[1:]))
    assert len(report) == 1 and report.violations[0].field == "emotion"

    d = np.array(c0.descriptors["generic"])
    d[0, 0] = np.nan
    nan_clip = replace(c0, descriptors={"generic": d})
    report = validate_dataset(replace(small_ds, clips=(nan_clip,) + small_ds.clips[1:]))
    assert len(report) == 1
    v = report.violations[0]
    assert v.clip_id == c0.clip_id and "generic" in v.field


def test_validate_never_mutates(small_ds):
    before = [c.emotion.copy() for c in small_ds.clips]
    validate_dataset(small_ds)
    assert all(np.array_equal(a, c.emotion) for a, c in zip(before, small_ds.clips))


def test_manifest_round_trip(tmp_path, small_ds):
    path = save_manifest(small_ds, tmp_path)
    back = load_manifest(path)
    assert datasets_equal(small_ds, back)


def test_manifest_two_clips(tmp_path):
    for name in ("a", "b"):
        doc = {"channels": [{"name": "hog", "dim": 2, "vectors": [[1.0, 2.0]]}]}
        (tmp_path / f"{name}.json").write_text(json.dumps(doc))
    (tmp_path / "m.csv").write_text(
        "clip_id,sequence_id,behavior,emotions,descriptor_path\n"
        "a,s1,panic,scared;scared;sad,a.json\n"
        "b,s2,fight,angry,b.json\n")
    ds = load_manifest(tmp_path / "m.csv")
    assert len(ds.clips) == 2 and ds.sequences == ("s1", "s2")
    assert ds.clips[0].emotion_index == EmotionLabel.SCARED.index
    assert ds.clips[1].behavior == BehaviorLabel.FIGHT.index


def test_manifest_unknown_behavior_reports_location(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"channels": [{"name": "hog", "dim": 1, "vectors": [[0]]}]}))
    (tmp_path / "m.csv").write_text(
        "clip_id,sequence_id,behavior,emotions,descriptor_path\n"
        "a,s1,panic,happy,a.json\n"
        "b,s1,riot,happy,a.json\n")
    with pytest.raises(ManifestError, match=r"line 3: field behavior: unknown label 'riot'"):
        load_manifest(tmp_path / "m.csv")


def test_manifest_dimension_mismatch(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"channels": [{"name": "hog", "dim": 1, "vectors": [[0]]}]}))
    (tmp_path / "b.json").write_text(json.dumps({"channels": [{"name": "hog", "dim": 2, "vectors": [[0, 1]]}]}))
    (tmp_path / "m.csv").write_text(
        "clip_id,sequence_id,behavior,emotions,descriptor_path\n"
        "a,s1,panic,happy,a.json\n"
        "b,s1,panic,happy,b.json\n")
    with pytest.raises(ManifestError, match="line 3.*channel hog"):
        load_manifest(tmp_path / "m.csv")


def test_manifest_missing_file(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "nope.csv")
    (tmp_path / "m.csv").write_text("clip_id,sequence_id,behavior,emotions,descriptor_path\n"
                                    "a,s1,panic,happy,gone.json\n")
    with pytest.raises(ManifestError, match="line 2.*missing file"):
        load_manifest(tmp_path / "m.csv")


def test_manifest_with_31_sequences(tmp_path):
    ds = synthesize_dataset(small_config(n_sequences=31, clips=2, dpc=1))
    back = load_manifest(save_manifest(ds, tmp_path))
    assert len(back.sequences) == 31


def test_subset_keeps_order(small_ds):
    sub = small_ds.subset(["seq1", "seq3"])
    assert {c.sequence_id for c in sub.clips} == {"seq1", "seq3"}
    assert isinstance(sub, Dataset)
