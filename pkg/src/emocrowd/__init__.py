"""Emotion-based crowd behavior recognition."""

from .dataset import Dataset, SynthConfig, load_manifest, mediated_config, save_manifest, \
    synthesize_dataset, uniform_config
from .evaluation import ExperimentConfig, run_experiment, run_methods
from .labels import BehaviorLabel, EmotionLabel

__version__ = "0.1.0"
