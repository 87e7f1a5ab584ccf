"""Sentence-level prediction: drafts, refinement, and decoder dispatch.

One entry point runs any of the three decoders over a corpus. Monte-Carlo
seeds are spawned per sentence before any work starts, so results are
byte-identical whether sentences run serially or on a worker pool.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import no_grad
from .data import TagScheme, ValidationError, Vocabulary
from .decoders import CrfParams, DecodeConfig, greedy_labels, threshold_mix, viterbi
from .decoders import legalize as repair_labels
from .encoder import Encoder, deterministic_masks, entropy
from .refiner import Refiner


@dataclass(frozen=True)
class SentencePrediction:
    """Final labels with the per-token uncertainty and selection provenance.

    ``draft_labels`` keep the stage-one view even where the final label came
    from the refiner, so flip audits can compare the two stages.
    """

    tokens: tuple
    labels: tuple
    uncertainty: np.ndarray
    sources: tuple
    draft_labels: tuple


def _lookup(vocab: Vocabulary, tokens):
    words = np.array([vocab.word_id(t) for t in tokens], dtype=np.intp)
    chars = [vocab.char_ids(t) for t in tokens]
    return words, chars


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = np.exp(scores - scores.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _finish(tokens, ids, uncertainty, sources, draft_ids, scheme, legalize):
    if legalize:
        ids = repair_labels(ids, scheme)
    return SentencePrediction(tokens=tuple(tokens),
                              labels=tuple(scheme.decode(ids)),
                              uncertainty=np.asarray(uncertainty, dtype=np.float64),
                              sources=tuple(sources),
                              draft_labels=tuple(scheme.decode(draft_ids)))


def _predict_one(sentence, encoder: Encoder, refiner: Refiner, vocab: Vocabulary,
                 scheme: TagScheme, decode: DecodeConfig, crf, rng) -> SentencePrediction:
    tokens = sentence.tokens
    if not tokens:
        raise ValidationError("cannot predict an empty sentence")
    words, chars = _lookup(vocab, tokens)

    if decode.mode == "softmax":
        probs = encoder.deterministic_probs(words, chars)
        ids = greedy_labels(probs)
        return _finish(tokens, ids, entropy(probs), ["draft"] * len(tokens),
                       ids, scheme, decode.legalize)

    if decode.mode == "crf":
        if crf is None:
            raise ValidationError(
                "crf decoding needs a trained transition table; "
                "train with decoder=crf first")
        with no_grad():
            masks = deterministic_masks(encoder.config, len(tokens))
            emissions = encoder.logits(encoder.encode(words, chars, masks)).data
        path, _ = viterbi(emissions, crf.effective_array())
        return _finish(tokens, path, entropy(_softmax_rows(emissions)),
                       ["draft"] * len(tokens), greedy_labels(emissions),
                       scheme, decode.legalize)

    draft = encoder.mc_forward(words, chars, decode.samples, rng)
    with no_grad():
        word_repr = encoder.token_matrix(words, chars).data
    refined = refiner.predict_refined(word_repr, draft.labels)
    mixed = threshold_mix(draft, refined, decode.gamma)
    return _finish(tokens, mixed.labels, draft.uncertainty, mixed.sources,
                   draft.labels, scheme, decode.legalize)


def predict_sentences(encoder: Encoder, refiner: Refiner, vocab: Vocabulary,
                      scheme: TagScheme, sentences, decode: DecodeConfig,
                      *, crf: CrfParams = None, seed: int = 0,
                      workers: int = 1) -> list:
    """Run the configured decoder over a corpus, in sentence order."""
    sentences = list(sentences)
    rngs = [np.random.default_rng(s)
            for s in np.random.SeedSequence(seed).spawn(max(len(sentences), 1))]

    def job(pair):
        sentence, rng = pair
        return _predict_one(sentence, encoder, refiner, vocab, scheme,
                            decode, crf, rng)

    pairs = list(zip(sentences, rngs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, pairs))
    return [job(pair) for pair in pairs]
