"""Scikit-learn style front end for the two-stage tagging system.

``SequenceTagger`` bundles corpus preparation, two-phase training, threshold
tuning, and decoder dispatch behind the familiar fit/predict/score surface.
The heavy lifting lives in the library modules; this layer only adapts
hyperparameters and input shapes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import Sentence, ValidationError
from .decoders import DECODE_MODES, DecodeConfig
from .encoder import EncoderConfig
from .evaluation import span_f1
from .inference import predict_sentences
from .refiner import RefinerConfig
from .training import (
    TrainConfig,
    encode_corpus,
    fit_crf_transitions,
    save_model,
    train,
)


def as_sentences(X, y=None, require_labels=False):
    """Coerce input into Sentence objects.

    ``X`` is either Sentence objects (``y`` must then be omitted) or token
    sequences, optionally paired with ``y`` label sequences.
    """
    items = list(X)
    if items and isinstance(items[0], Sentence):
        if y is not None:
            raise ValidationError(
                "pass labels inside Sentence objects or via y, not both")
        sentences = items
    elif y is None:
        sentences = [Sentence(tokens=tuple(tokens)) for tokens in items]
    else:
        golds = list(y)
        if len(golds) != len(items):
            raise ValidationError(
                f"X has {len(items)} sentences but y has {len(golds)}")
        sentences = [Sentence(tokens=tuple(t), labels=tuple(g))
                     for t, g in zip(items, golds)]
    for i, sentence in enumerate(sentences):
        if not sentence.tokens:
            raise ValidationError(f"sentence {i} is empty")
        if sentence.labels is not None and len(sentence.labels) != len(sentence.tokens):
            raise ValidationError(
                f"sentence {i} has {len(sentence.tokens)} tokens "
                f"but {len(sentence.labels)} labels")
        if require_labels and sentence.labels is None:
            raise ValidationError(f"sentence {i} has no labels")
    return sentences


class SequenceTagger(BaseEstimator):
    """Two-stage tagger: Monte-Carlo drafts refined by position-aware attention.

    ``decoder`` picks the prediction path: "softmax" reads the deterministic
    draft distribution, "crf" runs Viterbi over a transition table fitted
    after the encoder converges, and "mix" (the default) swaps in refined
    labels wherever draft uncertainty exceeds the threshold. ``gamma=None``
    uses the threshold tuned on the held-out split during fit.
    """

    def __init__(self, decoder="mix", gamma=None, samples=8, legalize=False,
                 epochs=30, batch_size=10, sgd_lr=0.015, sgd_decay=0.05,
                 adam_lr=1e-4, embed_dropout=0.5, recurrent_dropout=0.25,
                 clip_norm=5.0, patience=5, joint=False,
                 word_dim=100, char_emb_dim=30, char_dim=50, hidden_size=400,
                 refiner_layers=2, heads=5, head_dim=80, ffn_dim=128,
                 max_offset=512, crf_epochs=10, crf_lr=0.05,
                 validation_fraction=0.15, workers=1, random_state=1):
        self.decoder = decoder
        self.gamma = gamma
        self.samples = samples
        self.legalize = legalize
        self.epochs = epochs
        self.batch_size = batch_size
        self.sgd_lr = sgd_lr
        self.sgd_decay = sgd_decay
        self.adam_lr = adam_lr
        self.embed_dropout = embed_dropout
        self.recurrent_dropout = recurrent_dropout
        self.clip_norm = clip_norm
        self.patience = patience
        self.joint = joint
        self.word_dim = word_dim
        self.char_emb_dim = char_emb_dim
        self.char_dim = char_dim
        self.hidden_size = hidden_size
        self.refiner_layers = refiner_layers
        self.heads = heads
        self.head_dim = head_dim
        self.ffn_dim = ffn_dim
        self.max_offset = max_offset
        self.crf_epochs = crf_epochs
        self.crf_lr = crf_lr
        self.validation_fraction = validation_fraction
        self.workers = workers
        self.random_state = random_state

    # -- configuration assembly -------------------------------------------

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            sgd_lr=self.sgd_lr, sgd_decay=self.sgd_decay,
            adam_lr=self.adam_lr, embed_dropout=self.embed_dropout,
            recurrent_dropout=self.recurrent_dropout, clip_norm=self.clip_norm,
            patience=self.patience, samples=self.samples,
            seed=self.random_state, joint=self.joint)

    def _encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            word_dim=self.word_dim, char_emb_dim=self.char_emb_dim,
            char_dim=self.char_dim, hidden_size=self.hidden_size,
            embed_dropout=self.embed_dropout,
            recurrent_dropout=self.recurrent_dropout)

    def _refiner_config(self) -> RefinerConfig:
        return RefinerConfig(
            model_dim=self.word_dim + self.char_dim,
            layers=self.refiner_layers, heads=self.heads,
            head_dim=self.head_dim, ffn_dim=self.ffn_dim,
            max_offset=self.max_offset)

    def _decode_config(self) -> DecodeConfig:
        return DecodeConfig(mode=self.decoder, gamma=self.gamma_,
                            samples=self.samples, legalize=self.legalize)

    def _split(self, sentences):
        if len(sentences) < 2:
            raise ValidationError(
                "need at least two sentences to hold out a tuning split")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(
                f"validation_fraction must be in (0, 1), "
                f"got {self.validation_fraction}")
        order = np.random.default_rng(self.random_state).permutation(len(sentences))
        held = max(1, min(len(sentences) - 1,
                          round(self.validation_fraction * len(sentences))))
        dev_ids = set(order[:held].tolist())
        train_part = [s for i, s in enumerate(sentences) if i not in dev_ids]
        dev_part = [s for i, s in enumerate(sentences) if i in dev_ids]
        return train_part, dev_part

    # -- estimator surface -------------------------------------------------

    def fit(self, X, y=None):
        if self.decoder not in DECODE_MODES:
            raise ValueError(
                f"decoder must be one of {DECODE_MODES}, got {self.decoder!r}")
        sentences = as_sentences(X, y, require_labels=True)
        train_part, dev_part = self._split(sentences)
        result = train(self._train_config(), self._encoder_config(),
                       self._refiner_config(), train_part, dev_part)
        self.result_ = result
        self.gamma_ = float(self.gamma) if self.gamma is not None else result.gamma
        self.classes_ = list(result.scheme.labels)
        self.crf_ = None
        if self.decoder == "crf":
            examples = encode_corpus(train_part, result.vocab, result.scheme)
            self.crf_ = fit_crf_transitions(
                result.encoder, examples, result.scheme,
                epochs=self.crf_epochs, lr=self.crf_lr,
                seed=self.random_state, legalize=self.legalize)
        return self

    def _require_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError(
                "This SequenceTagger instance is not fitted yet; "
                "call fit before predicting")

    def predict_detailed(self, X):
        """Per-sentence predictions with uncertainty and label provenance."""
        self._require_fitted()
        sentences = as_sentences(X)
        result = self.result_
        return predict_sentences(result.encoder, result.refiner, result.vocab,
                                 result.scheme, sentences, self._decode_config(),
                                 crf=self.crf_, seed=self.random_state,
                                 workers=self.workers)

    def predict(self, X):
        return [list(p.labels) for p in self.predict_detailed(X)]

    def score(self, X, y=None):
        """Exact-match span F1 against gold labels."""
        sentences = as_sentences(X, y, require_labels=True)
        preds = self.predict(sentences)
        return span_f1([list(s.labels) for s in sentences], preds).f1

    def save(self, path):
        """Write a reloadable checkpoint of the fitted model."""
        self._require_fitted()
        save_model(path, self.result_, extra_metadata={"gamma": self.gamma_},
                   crf=self.crf_)
        return self
