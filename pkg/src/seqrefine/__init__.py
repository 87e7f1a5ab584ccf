"""Uncertainty-gated two-stage sequence labeling.

A variational BiLSTM tagger drafts labels and scores its own per-token
uncertainty from Monte-Carlo dropout disagreement; a two-stream attention
refiner with relative-position encodings then reconsiders every token, and
the final decode keeps the draft wherever the tagger was confident,
swapping in the refined label above an uncertainty threshold.
"""

from .data import Sentence, TagScheme, Vocabulary, read_conll, write_conll
from .decoders import CrfParams, DecodeConfig, threshold_mix, viterbi
from .encoder import DraftPrediction, Encoder, EncoderConfig, entropy
from .estimators import SequenceTagger
from .evaluation import EvalReport, SweepResult, gamma_sweep, span_f1
from .inference import SentencePrediction, predict_sentences
from .refiner import RefinedPrediction, Refiner, RefinerConfig
from .synthetic import SyntheticSpec, generate_splits
from .training import TrainConfig, TrainResult, load_model, save_model, train

__version__ = "0.1.0"

__all__ = [
    "CrfParams",
    "DecodeConfig",
    "DraftPrediction",
    "Encoder",
    "EncoderConfig",
    "EvalReport",
    "RefinedPrediction",
    "Refiner",
    "RefinerConfig",
    "Sentence",
    "SentencePrediction",
    "SequenceTagger",
    "SweepResult",
    "SyntheticSpec",
    "TagScheme",
    "TrainConfig",
    "TrainResult",
    "Vocabulary",
    "entropy",
    "gamma_sweep",
    "generate_splits",
    "load_model",
    "predict_sentences",
    "read_conll",
    "save_model",
    "span_f1",
    "threshold_mix",
    "train",
    "viterbi",
    "write_conll",
    "__version__",
]
