"""Inference dispatch tests beyond what the estimator suite covers."""

import numpy as np
import pytest

from seqrefine.data import Sentence, ValidationError
from seqrefine.decoders import DecodeConfig
from seqrefine.encoder import Encoder, EncoderConfig
from seqrefine.estimators import SequenceTagger
from seqrefine.inference import predict_sentences
from seqrefine.synthetic import SyntheticSpec, generate_splits

SPEC = SyntheticSpec(num_types=2, vocab_size=30, min_length=6, max_length=9, seed=5)

FAST = dict(epochs=2, batch_size=8, sgd_lr=0.1, patience=2, samples=2,
            embed_dropout=0.1, recurrent_dropout=0.25,
            word_dim=6, char_emb_dim=3, char_dim=4, hidden_size=8,
            refiner_layers=1, heads=1, head_dim=4, ffn_dim=8, max_offset=32,
            validation_fraction=0.25, random_state=7)


@pytest.fixture(scope="module")
def fitted():
    sentences, _ = generate_splits(SPEC, {"train": 16})["train"]
    return SequenceTagger(**FAST).fit(sentences), sentences


def run(tagger, sentences, **decode_kwargs):
    result = tagger.result_
    base = dict(mode="mix", gamma=tagger.gamma_, samples=2)
    base.update(decode_kwargs)
    return predict_sentences(result.encoder, result.refiner, result.vocab,
                             result.scheme, sentences, DecodeConfig(**base),
                             crf=tagger.crf_, seed=3)


class TestDispatch:
    def test_empty_sentence_rejected(self, fitted):
        tagger, _ = fitted
        with pytest.raises(ValidationError, match="empty"):
            run(tagger, [Sentence(tokens=())])

    def test_softmax_draft_labels_equal_finals(self, fitted):
        tagger, sentences = fitted
        for p in run(tagger, sentences[:4], mode="softmax"):
            assert p.draft_labels == p.labels

    def test_mix_keeps_raw_drafts_alongside_finals(self, fitted):
        tagger, sentences = fitted
        for p in run(tagger, sentences[:4], gamma=0.0):
            assert len(p.draft_labels) == len(p.labels)
            for source, draft, final in zip(p.sources, p.draft_labels, p.labels):
                if source == "draft":
                    assert draft == final

    def test_legalize_yields_legal_sequences(self, fitted):
        tagger, sentences = fitted
        scheme = tagger.result_.scheme
        for p in run(tagger, sentences, legalize=True):
            assert scheme.is_legal_sequence(list(p.labels))

    def test_unknown_words_fall_back_to_unk(self, fitted):
        tagger, _ = fitted
        (p,) = run(tagger, [Sentence(tokens=("zzzz", "yyyy", "xxxx"))])
        assert len(p.labels) == 3
