"""Emotion classifiers as a mid-level representation.

A bank of K binary SVMs maps a low-level feature to K emotion scores; a
behavior classifier is then trained on those score vectors. The
emotion-aware baseline instead feeds ground-truth one-hot emotions to the
behavior classifier.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .svm import LinearModel, MultiClassModel, TrainConfig, prepare_gram, predict, train_binary, \
    train_one_vs_all

SCHEMA = 1


@dataclass(eq=False)
class EmotionClassifierBank:
    classifiers: list
    emotion_names: tuple
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.classifiers) != len(self.emotion_names):
            raise ValueError("one classifier per emotion required")
        if len({m.dim for m in self.classifiers}) != 1:
            raise ValueError("emotion classifiers disagree on feature dim")

    @property
    def K(self):
        return len(self.classifiers)

    @property
    def dim(self):
        return self.classifiers[0].dim

    @property
    def W(self):
        return np.stack([m.w for m in self.classifiers])

    @property
    def bias(self):
        return np.array([m.b for m in self.classifiers])

    def scores(self, X):
        """(n, K) matrix of raw margins for a batch of features."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise ValueError(f"feature dim {X.shape[-1]} does not match bank dim {self.dim}")
        return X @ self.W.T + self.bias

    def to_dict(self):
        return {"emotions": list(self.emotion_names),
                "classifiers": [m.to_dict() for m in self.classifiers]}

    @classmethod
    def from_dict(cls, d):
        return cls(classifiers=[LinearModel.from_dict(m) for m in d["classifiers"]],
                   emotion_names=tuple(d["emotions"]))


def fit_emotion_bank(X, E, cfg=None, emotion_names=None):
    """Array-level bank training: column k of ``E`` gives the +1 examples of classifier k."""
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=float)
    E = np.asarray(E)
    emotion_names = tuple(emotion_names or range(E.shape[1]))
    X, gram = prepare_gram(X, None)
    models, notes = [], []
    for k, name in enumerate(emotion_names):
        y = np.where(E[:, k] == 1, 1.0, -1.0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            models.append(train_binary(X, y, cfg, gram=gram))
        notes.extend(f"emotion {name}: {w.message}" for w in caught)
    return EmotionClassifierBank(models, emotion_names, notes)


def train_emotion_bank(train, cfg=None):
    """K binary SVMs over encoded clips, pooled across behavior classes."""
    return fit_emotion_bank(train.features(), train.emotions(), cfg, train.emotion_names)


def emotion_representation(x, bank):
    """Vector of the K emotion-classifier margins for one feature."""
    x = np.asarray(x, dtype=float)
    if x.shape != (bank.dim,):
        raise ValueError(f"feature dim {x.shape} does not match bank dim {bank.dim}")
    return bank.scores(x[None, :])[0]


@dataclass(eq=False)
class EmotionPipeline:
    bank: EmotionClassifierBank
    behavior_model: MultiClassModel

    def __post_init__(self):
        if self.behavior_model.dim != self.bank.K:
            raise ValueError("behavior model must consume K-dim emotion scores")

    def decision(self, X):
        return self.behavior_model.decision(self.bank.scores(X))

    def to_dict(self):
        return {"schema": SCHEMA, "bank": self.bank.to_dict(),
                "behavior_model": self.behavior_model.to_dict()}

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported pipeline schema {d.get('schema')!r}")
        return cls(EmotionClassifierBank.from_dict(d["bank"]),
                   MultiClassModel.from_dict(d["behavior_model"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_behavior_on_emotion(X, behaviors, bank, cfg=None, class_order=None):
    phi = bank.scores(X)
    model = train_one_vs_all(phi, list(behaviors), cfg, class_order=class_order)
    return EmotionPipeline(bank, model)


def train_behavior_on_emotion(train, bank, cfg=None):
    """Behavior one-vs-all SVM over emotion-score vectors of the training clips."""
    names = list(train.behavior_names)
    labels = [names[b] for b in train.behaviors()]
    return fit_behavior_on_emotion(train.features(), labels, bank, cfg, class_order=names)


def classify(pipeline, x):
    """Behavior label and behavior scores for one low-level feature."""
    return predict(pipeline.behavior_model, emotion_representation(x, pipeline.bank))


def emotion_aware_feature(e):
    """Ground-truth one-hot emotion as a real vector."""
    e = np.asarray(e)
    if e.ndim != 1 or not np.isin(e, (0, 1)).all():
        raise ValueError("emotion vector must be binary")
    if int(e.sum()) != 1:
        raise ValueError(f"ground-truth emotion must have exactly one active entry, got {int(e.sum())}")
    return e.astype(float)


def train_emotion_aware(train, cfg=None):
    """Behavior classifier over ground-truth one-hot emotions."""
    X = np.stack([emotion_aware_feature(e) for e in train.emotions()])
    names = list(train.behavior_names)
    labels = [names[b] for b in train.behaviors()]
    return train_one_vs_all(X, labels, cfg, class_order=names)
