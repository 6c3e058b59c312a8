"""Behavior and emotion label taxonomies.

Enum member order is significant: it fixes tie-breaking, matrix indexing
and the layout of emotion vectors.
"""

from enum import Enum

import numpy as np


class _OrderedLabel(Enum):
    @classmethod
    def parse(cls, text):
        """Case-insensitive lookup by name."""
        key = str(text).strip().lower()
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown {cls.__name__} {text!r}")

    @property
    def index(self):
        return list(type(self)).index(self)

    @classmethod
    def from_index(cls, i):
        return list(cls)[i]


class BehaviorLabel(_OrderedLabel):
    PANIC = "panic"
    FIGHT = "fight"
    CONGESTION = "congestion"
    OBSTACLE = "obstacle"
    NEUTRAL = "neutral"


class EmotionLabel(_OrderedLabel):
    ANGRY = "angry"
    HAPPY = "happy"
    EXCITED = "excited"
    SCARED = "scared"
    SAD = "sad"
    NEUTRAL = "neutral"


BEHAVIORS = tuple(BehaviorLabel)
EMOTIONS = tuple(EmotionLabel)
K = len(EMOTIONS)
B = len(BEHAVIORS)


def emotion_vector(label, k=K):
    """One-hot integer vector for an emotion (label or index)."""
    idx = label.index if isinstance(label, EmotionLabel) else int(label)
    e = np.zeros(k, dtype=np.int8)
    e[idx] = 1
    return e
