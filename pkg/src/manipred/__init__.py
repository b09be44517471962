"""Online manipulation-action prediction and fingertip force regression."""

from .datasets import FeatureSequence, SynthConfig, synth_generate
from .model import SequenceModel
from .online import Session, belief_trajectory, classify_sequence, estimate_forces
from .training import TrainConfig, train_classifier, train_regressor

__all__ = [
    "FeatureSequence", "SequenceModel", "Session", "SynthConfig", "TrainConfig",
    "belief_trajectory", "classify_sequence", "estimate_forces", "synth_generate",
    "train_classifier", "train_regressor",
]
__version__ = "0.1.0"
