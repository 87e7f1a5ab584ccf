"""Two-phase optimization of the draft encoder and the label refiner.

Phase A trains the variational encoder with decayed SGD until the dev span
F1 stops improving. Phase B freezes it, draws Monte-Carlo draft labels with
fresh seeds every epoch, and trains the refiner with Adam on cross entropy.
The two losses touch disjoint parameters, so running the phases back to
back optimizes the same total objective as alternating them; an optional
joint mode interleaves the phases per epoch for comparison.

All randomness flows from one seed through named child streams, so a rerun
with the same config reproduces every mask, shuffle, and draft exactly.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, backward, no_grad, zero_grads
from .checkpoint import CheckpointError, load_checkpoint, restore_parameters, save_checkpoint
from .data import TagScheme, Vocabulary, scheme_from_corpus
from .decoders import CrfParams, crf_nll, legal_transition_mask
from .encoder import DraftPrediction, Encoder, EncoderConfig, deterministic_masks, sample_masks
from .evaluation import gamma_sweep, span_f1
from .refiner import Refiner, RefinerConfig


class TrainingError(RuntimeError):
    """Optimization hit a non-finite loss; ``batch`` holds the offenders."""

    def __init__(self, message, batch=None):
        super().__init__(message)
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for both phases.

    The dropout rates here override whatever the encoder config carries, so
    training has a single source of truth; the variational (recurrent) rate
    doubles as the r in the (1-r)/2N weight penalty.
    """

    epochs: int = 30
    batch_size: int = 10
    sgd_lr: float = 0.015
    sgd_decay: float = 0.05
    adam_lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    embed_dropout: float = 0.5
    recurrent_dropout: float = 0.25
    clip_norm: float = 5.0
    patience: int = 5
    samples: int = 8
    seed: int = 1
    joint: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("sgd_lr", "adam_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("embed_dropout", "recurrent_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {rate}")
        if self.sgd_decay < 0:
            raise ValueError(f"sgd_decay must be >= 0, got {self.sgd_decay}")
        if self.clip_norm < 0:
            raise ValueError(f"clip_norm must be >= 0 (0 disables), got {self.clip_norm}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")


# ---------------------------------------------------------------------------
# optimizers


class Sgd:
    """Plain SGD whose learning rate decays per epoch: lr / (1 + decay * epoch)."""

    def __init__(self, params, lr: float, decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.decay = decay

    def rate(self, epoch: int) -> float:
        return self.lr / (1.0 + self.decay * epoch)

    def step(self, epoch: int) -> None:
        lr = self.rate(epoch)
        for _, p in self.params:
            if p.grad is not None:
                p.data -= lr * p.grad


class Adam:
    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * p.grad
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * p.grad ** 2
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def global_grad_norm(params) -> float:
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so the global norm is at most ``max_norm``.

    ``max_norm`` of 0 disables clipping. Returns the pre-clip norm.
    """
    params = list(params)
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# corpus encoding


@dataclass(frozen=True)
class EncodedExample:
    tokens: tuple
    words: np.ndarray
    chars: tuple
    gold: np.ndarray


def encode_corpus(sentences, vocab: Vocabulary, scheme: TagScheme):
    out = []
    for sent in sentences:
        out.append(EncodedExample(
            tokens=tuple(sent.tokens),
            words=np.array([vocab.word_id(t) for t in sent.tokens], dtype=np.intp),
            chars=tuple(vocab.char_ids(t) for t in sent.tokens),
            gold=scheme.encode(sent.labels),
        ))
    return out


def replace_singletons(example: EncodedExample, vocab: Vocabulary, rng) -> np.ndarray:
    """Training-time unknown-word exposure: frequency-1 words drop to the
    unknown id with probability one half."""
    words = example.words.copy()
    for i, token in enumerate(example.tokens):
        if vocab.is_singleton(token) and rng.random() < 0.5:
            words[i] = 0
    return words


# ---------------------------------------------------------------------------
# losses


def weight_penalty(encoder: Encoder, total_tokens: int, rate: float):
    """(1 - rate) / (2 N) times the squared norm of embeddings and gate weights."""
    acc = None
    for w in encoder.regularized_parameters():
        term = ad.sum_all(ad.mul(w, w))
        acc = term if acc is None else ad.add(acc, term)
    return ad.mul(acc, (1.0 - rate) / (2.0 * total_tokens))


def loss_stage1(encoder: Encoder, examples, mask_sets, total_tokens: int,
                rate: float, word_overrides=None):
    """Token-mean NLL under one masked pass per sentence, plus the penalty."""
    total = None
    tokens = 0
    for i, (example, masks) in enumerate(zip(examples, mask_sets)):
        words = example.words if word_overrides is None else word_overrides[i]
        logits = encoder.logits(encoder.encode(words, example.chars, masks))
        picked = ad.pick_rows(ad.log_softmax_rows(logits), example.gold)
        summed = ad.sum_all(picked)
        total = summed if total is None else ad.add(total, summed)
        tokens += len(example.gold)
    nll = ad.mul(total, -1.0 / tokens)
    return ad.add(nll, weight_penalty(encoder, total_tokens, rate))


def loss_stage2(refiner: Refiner, drafted):
    """Token-mean cross entropy of gold under the refined distributions.

    ``drafted`` yields (word representation, draft labels, gold ids) per
    sentence; the drafts come from the frozen first stage.
    """
    total = None
    tokens = 0
    for word_repr, draft_labels, gold in drafted:
        logp = ad.log_softmax_rows(refiner.forward_logits(word_repr, draft_labels))
        summed = ad.sum_all(ad.pick_rows(logp, gold))
        total = summed if total is None else ad.add(total, summed)
        tokens += len(gold)
    return ad.mul(total, -1.0 / tokens)


# ---------------------------------------------------------------------------
# drafts and dev metrics


@dataclass(frozen=True)
class DraftedExample:
    tokens: tuple
    word_repr: np.ndarray
    draft: DraftPrediction
    gold: np.ndarray


def make_drafts(encoder: Encoder, examples, samples: int, rng, workers: int = 1):
    out = []
    for example in examples:
        draft = encoder.mc_forward(example.words, example.chars, samples, rng,
                                   workers=workers)
        with no_grad():
            word_repr = encoder.token_matrix(example.words, example.chars).data
        out.append(DraftedExample(tokens=example.tokens, word_repr=word_repr,
                                  draft=draft, gold=example.gold))
    return out


def _draft_dev_f1(encoder: Encoder, examples, scheme: TagScheme) -> float:
    golds, preds = [], []
    for example in examples:
        probs = encoder.deterministic_probs(example.words, example.chars)
        preds.append(scheme.decode(np.argmax(probs, axis=1)))
        golds.append(scheme.decode(example.gold))
    return span_f1(golds, preds).f1


def _refined_dev_f1(refiner: Refiner, dev_drafts, scheme: TagScheme) -> float:
    golds, preds = [], []
    for drafted in dev_drafts:
        refined = refiner.predict_refined(drafted.word_repr, drafted.draft.labels)
        preds.append(scheme.decode(refined.labels))
        golds.append(scheme.decode(drafted.gold))
    return span_f1(golds, preds).f1


def _snapshot(items):
    return {name: p.data.copy() for name, p in items}


def _restore(items, snap):
    for name, p in items:
        p.data[:] = snap[name]


# ---------------------------------------------------------------------------
# the training loop


@dataclass(frozen=True)
class EpochRecord:
    phase: str
    epoch: int
    loss: float
    dev_metric: float
    learning_rate: float
    seconds: float


@dataclass
class TrainResult:
    encoder: Encoder
    refiner: Refiner
    vocab: Vocabulary
    scheme: TagScheme
    train_config: TrainConfig
    gamma: float
    dev_f1_draft: float
    dev_f1_refined: float
    dev_f1_mixed: float
    sweep: object
    history: tuple


def _streams(seed: int):
    names = ("encoder_init", "refiner_init", "shuffle", "masks", "drafts", "dev_drafts")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def _batches(order, size):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def _diagnostic(batch, scheme):
    return [(example.tokens, scheme.decode(example.gold)) for example in batch]


def train(config: TrainConfig, encoder_config: EncoderConfig,
          refiner_config: RefinerConfig, train_sentences, dev_sentences, *,
          pretrained: np.ndarray = None, log=None) -> TrainResult:
    """Run both phases and tune the decision threshold on dev.

    Returns the trained pair along with the dev sweep and per-epoch history.
    ``log``, when given, receives one dict per epoch (the line-delimited
    training record).
    """
    if not train_sentences:
        raise ValueError("training corpus is empty")
    if not dev_sentences:
        raise ValueError("dev corpus is empty; early stopping needs one")
    encoder_config = replace(encoder_config, embed_dropout=config.embed_dropout,
                             recurrent_dropout=config.recurrent_dropout)
    if refiner_config.model_dim != encoder_config.input_dim:
        raise ValueError(
            f"refiner model_dim {refiner_config.model_dim} must match the "
            f"token representation width {encoder_config.input_dim}"
        )
    scheme = scheme_from_corpus(list(train_sentences) + list(dev_sentences))
    vocab = Vocabulary.build(train_sentences)
    streams = _streams(config.seed)
    encoder = Encoder(encoder_config, vocab.num_words, vocab.num_chars,
                      scheme.size, streams["encoder_init"], word_matrix=pretrained)
    refiner = Refiner(refiner_config, scheme.size, streams["refiner_init"])
    examples = encode_corpus(train_sentences, vocab, scheme)
    dev_examples = encode_corpus(dev_sentences, vocab, scheme)
    total_tokens = sum(len(example.gold) for example in examples)
    history = []

    def emit(record: EpochRecord):
        history.append(record)
        if log is not None:
            log(asdict(record))

    if config.joint:
        _train_joint(config, encoder, refiner, examples, dev_examples, scheme,
                     vocab, total_tokens, streams, emit)
    else:
        _train_stage1(config, encoder, examples, dev_examples, scheme, vocab,
                      total_tokens, streams, emit)
        _train_stage2(config, encoder, refiner, examples, dev_examples, scheme,
                      streams, emit)

    dev_drafts = make_drafts(encoder, dev_examples, config.samples, streams["dev_drafts"])
    refineds = [refiner.predict_refined(d.word_repr, d.draft.labels) for d in dev_drafts]
    golds = [scheme.decode(d.gold) for d in dev_drafts]
    sweep = gamma_sweep([d.draft for d in dev_drafts], refineds, golds, scheme)
    return TrainResult(
        encoder=encoder,
        refiner=refiner,
        vocab=vocab,
        scheme=scheme,
        train_config=config,
        gamma=sweep.best_gamma,
        dev_f1_draft=sweep.points[-1].f1,
        dev_f1_refined=sweep.points[0].f1,
        dev_f1_mixed=sweep.best_f1,
        sweep=sweep,
        history=tuple(history),
    )


def _train_stage1(config, encoder, examples, dev_examples, scheme, vocab,
                  total_tokens, streams, emit):
    sgd = Sgd(encoder.param_items(), config.sgd_lr, config.sgd_decay)
    items = encoder.param_items()
    best = _snapshot(items)
    best_metric = -np.inf
    stale = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        mean_loss = _stage1_epoch(config, encoder, examples, vocab, total_tokens,
                                  streams, sgd, epoch, scheme)
        dev_f1 = _draft_dev_f1(encoder, dev_examples, scheme)
        emit(EpochRecord("stage1", epoch, mean_loss, dev_f1, sgd.rate(epoch),
                         time.perf_counter() - started))
        if dev_f1 > best_metric:
            best_metric = dev_f1
            best = _snapshot(items)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    _restore(items, best)


def _stage1_epoch(config, encoder, examples, vocab, total_tokens, streams,
                  sgd, epoch, scheme) -> float:
    items = encoder.param_items()
    order = streams["shuffle"].permutation(len(examples))
    losses = []
    for batch_no, idx in enumerate(_batches(order, config.batch_size)):
        batch = [examples[i] for i in idx]
        overrides, mask_sets = [], []
        for example in batch:
            overrides.append(replace_singletons(example, vocab, streams["masks"]))
            mask_sets.append(sample_masks(encoder.config, len(example.gold),
                                          streams["masks"]))
        with Tape():
            loss = loss_stage1(encoder, batch, mask_sets, total_tokens,
                               config.recurrent_dropout, overrides)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(
                f"non-finite stage-one loss {value} at epoch {epoch} batch {batch_no}",
                batch=_diagnostic(batch, scheme),
            )
        backward(loss)
        clip_gradients(items, config.clip_norm)
        sgd.step(epoch)
        zero_grads(p for _, p in items)
        losses.append(value)
    return float(np.mean(losses))


def _train_stage2(config, encoder, refiner, examples, dev_examples, scheme,
                  streams, emit):
    adam = Adam(refiner.param_items(), config.adam_lr, config.adam_beta1,
                config.adam_beta2, config.adam_eps)
    items = refiner.param_items()
    dev_drafts = make_drafts(encoder, dev_examples, config.samples,
                             streams["dev_drafts"])
    best = _snapshot(items)
    best_metric = -np.inf
    stale = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        drafts = make_drafts(encoder, examples, config.samples, streams["drafts"])
        mean_loss = _stage2_epoch(config, refiner, drafts, streams, adam, epoch, scheme)
        dev_f1 = _refined_dev_f1(refiner, dev_drafts, scheme)
        emit(EpochRecord("stage2", epoch, mean_loss, dev_f1, config.adam_lr,
                         time.perf_counter() - started))
        if dev_f1 > best_metric:
            best_metric = dev_f1
            best = _snapshot(items)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    _restore(items, best)


def _stage2_epoch(config, refiner, drafts, streams, adam, epoch, scheme) -> float:
    items = refiner.param_items()
    order = streams["shuffle"].permutation(len(drafts))
    losses = []
    for batch_no, idx in enumerate(_batches(order, config.batch_size)):
        batch = [drafts[i] for i in idx]
        with Tape():
            loss = loss_stage2(refiner, [(d.word_repr, d.draft.labels, d.gold)
                                         for d in batch])
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(
                f"non-finite stage-two loss {value} at epoch {epoch} batch {batch_no}",
                batch=[(d.tokens, scheme.decode(d.gold)) for d in batch],
            )
        backward(loss)
        clip_gradients(items, config.clip_norm)
        adam.step()
        zero_grads(p for _, p in items)
        losses.append(value)
    return float(np.mean(losses))


def _train_joint(config, encoder, refiner, examples, dev_examples, scheme,
                 vocab, total_tokens, streams, emit):
    """Interleaved variant: each epoch runs one pass of each phase.

    Drafts regenerate from the current encoder every epoch; early stopping
    watches the refined dev F1 and restores the jointly best pair.
    """
    sgd = Sgd(encoder.param_items(), config.sgd_lr, config.sgd_decay)
    adam = Adam(refiner.param_items(), config.adam_lr, config.adam_beta1,
                config.adam_beta2, config.adam_eps)
    enc_items = encoder.param_items()
    ref_items = refiner.param_items()
    best = (_snapshot(enc_items), _snapshot(ref_items))
    best_metric = -np.inf
    stale = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        loss1 = _stage1_epoch(config, encoder, examples, vocab, total_tokens,
                              streams, sgd, epoch, scheme)
        drafts = make_drafts(encoder, examples, config.samples, streams["drafts"])
        loss2 = _stage2_epoch(config, refiner, drafts, streams, adam, epoch, scheme)
        dev_drafts = make_drafts(encoder, dev_examples, config.samples,
                                 streams["dev_drafts"])
        dev_f1 = _refined_dev_f1(refiner, dev_drafts, scheme)
        emit(EpochRecord("joint", epoch, loss1 + loss2, dev_f1, sgd.rate(epoch),
                         time.perf_counter() - started))
        if dev_f1 > best_metric:
            best_metric = dev_f1
            best = (_snapshot(enc_items), _snapshot(ref_items))
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    _restore(enc_items, best[0])
    _restore(ref_items, best[1])


def deterministic_emissions(encoder: Encoder, example: EncodedExample) -> np.ndarray:
    """Pre-softmax scores from a single dropout-free pass."""
    with no_grad():
        masks = deterministic_masks(encoder.config, len(example.words))
        hidden = encoder.encode(example.words, example.chars, masks)
        return encoder.logits(hidden).data.copy()


def fit_crf_transitions(encoder: Encoder, examples, scheme: TagScheme, *,
                        epochs: int = 10, lr: float = 0.05, seed: int = 0,
                        legalize: bool = False, log=None) -> CrfParams:
    """Train the Viterbi baseline's transition table against frozen emissions.

    The encoder is left untouched: its deterministic scores are computed once
    and the chain likelihood is optimized over the transitions alone.
    """
    if not examples:
        raise ValueError("transition fitting needs a non-empty corpus")
    emissions = [deterministic_emissions(encoder, ex) for ex in examples]
    mask = legal_transition_mask(scheme) if legalize else None
    crf = CrfParams(scheme.size, rng=np.random.default_rng(seed), mask=mask)
    items = crf.param_items()
    adam = Adam(items, lr)
    for epoch in range(epochs):
        total = 0.0
        for scores, ex in zip(emissions, examples):
            with Tape():
                loss = crf_nll(scores, crf, ex.gold)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite transition loss {value} at epoch {epoch}")
            backward(loss)
            adam.step()
            zero_grads(p for _, p in items)
            total += value
        if log is not None:
            log(EpochRecord("crf", epoch, total / len(examples), None, lr, 0.0))
    return crf


# ---------------------------------------------------------------------------
# persistence


@dataclass(frozen=True)
class LoadedModel:
    encoder: Encoder
    refiner: Refiner
    vocab: Vocabulary
    scheme: TagScheme
    gamma: float
    metadata: dict
    crf: CrfParams = None


def save_model(path, result: TrainResult, extra_metadata: dict = None,
               crf: CrfParams = None) -> None:
    """Write the trained pair plus everything needed to run it again."""
    params = list(result.encoder.param_items()) + list(result.refiner.param_items())
    if crf is not None:
        params += list(crf.param_items())
    metadata = {
        "seed": result.train_config.seed,
        "gamma": result.gamma,
        "labels": list(result.scheme.labels),
        "scheme_kind": result.scheme.kind,
        "vocab": {
            "words": result.vocab.id_ordered_words(),
            "chars": result.vocab.id_ordered_chars(),
        },
        "encoder_config": asdict(result.encoder.config),
        "refiner_config": asdict(result.refiner.config),
        "train_config": asdict(result.train_config),
        "dev_f1": {
            "draft": result.dev_f1_draft,
            "refined": result.dev_f1_refined,
            "mixed": result.dev_f1_mixed,
        },
        "crf_masked": crf is not None and crf.mask is not None,
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    save_checkpoint(path, params, metadata)


def load_model(path) -> LoadedModel:
    checkpoint = load_checkpoint(path)
    metadata = checkpoint.metadata
    for key in ("labels", "scheme_kind", "vocab", "encoder_config", "refiner_config", "gamma"):
        if key not in metadata:
            raise CheckpointError(f"checkpoint {path} metadata lacks {key!r}")
    scheme = TagScheme(tuple(metadata["labels"]), metadata["scheme_kind"])
    vocab = Vocabulary.from_lists(metadata["vocab"]["words"], metadata["vocab"]["chars"])
    encoder_config = EncoderConfig(**metadata["encoder_config"])
    refiner_config = RefinerConfig(**metadata["refiner_config"])
    filler = np.random.default_rng(0)
    encoder = Encoder(encoder_config, vocab.num_words, vocab.num_chars,
                      scheme.size, filler)
    refiner = Refiner(refiner_config, scheme.size, filler)
    items = list(encoder.param_items()) + list(refiner.param_items())
    crf = None
    if "crf.transitions" in checkpoint.params:
        mask = legal_transition_mask(scheme) if metadata.get("crf_masked") else None
        crf = CrfParams(scheme.size, mask=mask)
        items += list(crf.param_items())
    restore_parameters(checkpoint, items)
    return LoadedModel(encoder=encoder, refiner=refiner, vocab=vocab,
                       scheme=scheme, gamma=float(metadata["gamma"]),
                       metadata=metadata, crf=crf)
