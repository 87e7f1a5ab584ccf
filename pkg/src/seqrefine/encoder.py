"""Stage one: variational bidirectional LSTM tagger with MC-dropout.

The recurrent dropout masks are *locked*: one input mask and one hidden mask
per direction, sampled once per (sequence, pass) and reused at every time
step, so a pass corresponds to one weight sample of the approximate
posterior. Monte-Carlo inference averages the per-pass softmax distributions;
the draft label is the argmax of the average and the per-token uncertainty is
its entropy (natural log, so it lives in [0, ln C]).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad


def entropy(probs: np.ndarray) -> np.ndarray:
    """Row-wise Shannon entropy in nats; 0 log 0 taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    terms = np.where(p > 0.0, p * np.log(np.maximum(p, 1e-300)), 0.0)
    return -terms.sum(axis=-1)


def glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


@dataclass(frozen=True)
class EncoderConfig:
    """Sizes and dropout rates for the stage-one tagger.

    ``hidden_size`` is the total bidirectional width (split evenly between
    the two directions). ``recurrent_dropout`` is the locked-mask rate r;
    ``embed_dropout`` is the vanilla rate applied to the token vectors.
    """

    word_dim: int = 100
    char_emb_dim: int = 30
    char_dim: int = 50
    hidden_size: int = 400
    embed_dropout: float = 0.5
    recurrent_dropout: float = 0.25

    def __post_init__(self):
        if self.hidden_size % 2:
            raise ValueError(f"hidden_size must be even, got {self.hidden_size}")
        for name in ("embed_dropout", "recurrent_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {rate}")

    @property
    def input_dim(self):
        return self.word_dim + self.char_dim

    @property
    def direction_size(self):
        return self.hidden_size // 2


@dataclass(frozen=True)
class MaskPair:
    """Locked dropout masks for one direction: input then hidden."""

    z_x: np.ndarray
    z_h: np.ndarray


@dataclass(frozen=True)
class PassMasks:
    """Everything stochastic about one forward pass."""

    forward: MaskPair
    backward: MaskPair
    embed: np.ndarray  # [n x input_dim] vanilla mask, fresh per pass


def bernoulli_mask(rng, rate: float, shape) -> np.ndarray:
    """Inverted-dropout mask: Bernoulli(1-rate) scaled by 1/(1-rate)."""
    if rate == 0.0:
        return np.ones(shape)
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def sample_masks(config: EncoderConfig, n_tokens: int, rng) -> PassMasks:
    d, h = config.input_dim, config.direction_size
    r = config.recurrent_dropout
    pairs = []
    for _ in range(2):
        pairs.append(MaskPair(
            z_x=bernoulli_mask(rng, r, (1, d)),
            z_h=bernoulli_mask(rng, r, (1, h)),
        ))
    embed = bernoulli_mask(rng, config.embed_dropout, (n_tokens, d))
    return PassMasks(forward=pairs[0], backward=pairs[1], embed=embed)


def deterministic_masks(config: EncoderConfig, n_tokens: int) -> PassMasks:
    """All-ones masks: the network runs as a plain BiLSTM."""
    d, h = config.input_dim, config.direction_size
    pair = MaskPair(z_x=np.ones((1, d)), z_h=np.ones((1, h)))
    return PassMasks(forward=pair, backward=pair, embed=np.ones((n_tokens, d)))


@dataclass
class DraftPrediction:
    """MC-averaged stage-one output for one sentence."""

    probs: np.ndarray         # [n x C] mean over samples
    labels: np.ndarray        # [n] argmax ids (first index wins ties)
    uncertainty: np.ndarray   # [n] entropy of the mean distribution
    samples: list = None      # optional per-pass distributions

    def __len__(self):
        return len(self.labels)


@dataclass
class DirectionParams:
    w_g: Tensor
    w_i: Tensor
    w_f: Tensor
    w_o: Tensor
    b_g: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor


def vlstm_step(params: DirectionParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor, masks: MaskPair):
    """One variational LSTM step on masked [x, h]; returns (h, c).

    All four gates read the same masked concatenation, so the locked masks
    act like a single sampled weight matrix for the whole pass.
    """
    zx = Tensor(masks.z_x)
    zh = Tensor(masks.z_h)
    xh = ad.concat_cols([ad.mul(x_t, zx), ad.mul(h_prev, zh)])
    g = ad.tanh(ad.add(ad.matmul(xh, params.w_g), params.b_g))
    i = ad.sigmoid(ad.add(ad.matmul(xh, params.w_i), params.b_i))
    f = ad.sigmoid(ad.add(ad.matmul(xh, params.w_f), params.b_f))
    o = ad.sigmoid(ad.add(ad.matmul(xh, params.w_o), params.b_o))
    c = ad.add(ad.mul(g, i), ad.mul(c_prev, f))
    h = ad.mul(o, ad.tanh(c))
    return h, c


class Encoder:
    """Parameters plus forward passes; all randomness is passed in."""

    def __init__(self, config: EncoderConfig, num_words: int, num_chars: int,
                 num_labels: int, rng, word_matrix: np.ndarray = None):
        self.config = config
        self.num_labels = num_labels
        c = config
        if word_matrix is None:
            bound = np.sqrt(3.0 / c.word_dim)
            word_matrix = rng.uniform(-bound, bound, (num_words, c.word_dim))
        elif word_matrix.shape != (num_words, c.word_dim):
            raise ValueError(f"word matrix shape {word_matrix.shape} != ({num_words}, {c.word_dim})")
        cbound = np.sqrt(3.0 / c.char_emb_dim)
        self.word_emb = Tensor(word_matrix, requires_grad=True)
        self.char_emb = Tensor(rng.uniform(-cbound, cbound, (num_chars, c.char_emb_dim)), requires_grad=True)
        self.char_filters = Tensor(glorot(rng, 3 * c.char_emb_dim, c.char_dim), requires_grad=True)
        self.char_bias = Tensor(np.zeros((1, c.char_dim)), requires_grad=True)
        d, h = c.input_dim, c.direction_size
        self.directions = []
        for _ in range(2):
            self.directions.append(DirectionParams(
                w_g=Tensor(glorot(rng, d + h, h), requires_grad=True),
                w_i=Tensor(glorot(rng, d + h, h), requires_grad=True),
                w_f=Tensor(glorot(rng, d + h, h), requires_grad=True),
                w_o=Tensor(glorot(rng, d + h, h), requires_grad=True),
                b_g=Tensor(np.zeros((1, h)), requires_grad=True),
                b_i=Tensor(np.zeros((1, h)), requires_grad=True),
                b_f=Tensor(np.zeros((1, h)), requires_grad=True),
                b_o=Tensor(np.zeros((1, h)), requires_grad=True),
            ))
        self.out_w = Tensor(glorot(rng, c.hidden_size, num_labels), requires_grad=True)
        self.out_b = Tensor(np.zeros((1, num_labels)), requires_grad=True)

    def param_items(self, prefix: str = "encoder."):
        items = [
            (f"{prefix}word_emb", self.word_emb),
            (f"{prefix}char_emb", self.char_emb),
            (f"{prefix}char_filters", self.char_filters),
            (f"{prefix}char_bias", self.char_bias),
        ]
        for name, direction in zip(("fwd", "bwd"), self.directions):
            for gate in ("g", "i", "f", "o"):
                items.append((f"{prefix}{name}.w_{gate}", getattr(direction, f"w_{gate}")))
                items.append((f"{prefix}{name}.b_{gate}", getattr(direction, f"b_{gate}")))
        items.append((f"{prefix}out_w", self.out_w))
        items.append((f"{prefix}out_b", self.out_b))
        return items

    def parameters(self):
        return [t for _, t in self.param_items()]

    def regularized_parameters(self):
        """Embedding tables and gate weights (the penalty's theta)."""
        names = {"word_emb", "char_emb", "char_filters"}
        out = [t for name, t in self.param_items("") if name in names]
        for direction in self.directions:
            out.extend([direction.w_g, direction.w_i, direction.w_f, direction.w_o])
        return out

    # ------------------------------------------------------------------
    # forward passes

    def char_vector(self, char_ids: np.ndarray) -> Tensor:
        """Window-3 same-padded convolution over characters, max-pooled."""
        c = self.config
        ce = ad.take_rows(self.char_emb, char_ids)
        pad = Tensor(np.zeros((1, c.char_emb_dim)))
        padded = ad.concat_rows([pad, ce, pad])
        length = len(char_ids)
        windows = ad.concat_cols([
            ad.slice_rows(padded, 0, length),
            ad.slice_rows(padded, 1, length + 1),
            ad.slice_rows(padded, 2, length + 2),
        ])
        conv = ad.add(ad.matmul(windows, self.char_filters), self.char_bias)
        return ad.max_over_rows(conv)

    def token_matrix(self, word_ids: np.ndarray, char_ids_per_token) -> Tensor:
        """Pre-dropout token vectors [n x input_dim]: word row + char vector."""
        words = ad.take_rows(self.word_emb, word_ids)
        chars = ad.concat_rows([self.char_vector(ids) for ids in char_ids_per_token])
        return ad.concat_cols([words, chars])

    def encode(self, word_ids, char_ids_per_token, masks: PassMasks) -> Tensor:
        """Hidden states [n x hidden_size] for one masked pass."""
        tokens = self.token_matrix(word_ids, char_ids_per_token)
        return self.encode_tokens(tokens, masks)

    def encode_tokens(self, tokens: Tensor, masks: PassMasks) -> Tensor:
        n = tokens.shape[0]
        dropped = ad.mul(tokens, Tensor(masks.embed))
        rows = [ad.slice_rows(dropped, t, t + 1) for t in range(n)]
        h_fwd = self._run_direction(self.directions[0], rows, masks.forward)
        h_bwd = self._run_direction(self.directions[1], rows[::-1], masks.backward)[::-1]
        merged = [ad.concat_cols([f, b]) for f, b in zip(h_fwd, h_bwd)]
        return ad.concat_rows(merged)

    def _run_direction(self, params: DirectionParams, rows, pair: MaskPair):
        h = Tensor(np.zeros((1, self.config.direction_size)))
        c = Tensor(np.zeros((1, self.config.direction_size)))
        out = []
        for x_t in rows:
            h, c = vlstm_step(params, x_t, h, c, pair)
            out.append(h)
        return out

    def logits(self, hidden: Tensor) -> Tensor:
        return ad.add(ad.matmul(hidden, self.out_w), self.out_b)

    def pass_probs(self, word_ids, char_ids_per_token, masks: PassMasks) -> Tensor:
        return ad.softmax_rows(self.logits(self.encode(word_ids, char_ids_per_token, masks)))

    # ------------------------------------------------------------------
    # Monte-Carlo inference

    def mc_forward(self, word_ids, char_ids_per_token, samples: int, rng,
                   workers: int = 1, keep_samples: bool = False) -> DraftPrediction:
        """Average ``samples`` masked passes; pure numpy result, no tape.

        Masks are drawn up front in sample order, so results do not depend
        on worker scheduling.
        """
        if samples < 1:
            raise ValueError(f"samples must be >= 1, got {samples}")
        n = len(word_ids)
        with no_grad():
            tokens = self.token_matrix(word_ids, char_ids_per_token)
            mask_sets = [sample_masks(self.config, n, rng) for _ in range(samples)]

            def one_pass(masks):
                with no_grad():
                    return ad.softmax_rows(self.logits(self.encode_tokens(tokens, masks))).data

            if workers > 1 and samples > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    per_pass = list(pool.map(one_pass, mask_sets))
            else:
                per_pass = [one_pass(masks) for masks in mask_sets]
        mean = per_pass[0].copy()
        for p in per_pass[1:]:
            mean += p
        mean /= samples
        return DraftPrediction(
            probs=mean,
            labels=np.argmax(mean, axis=1),
            uncertainty=entropy(mean),
            samples=per_pass if keep_samples else None,
        )

    def deterministic_probs(self, word_ids, char_ids_per_token) -> np.ndarray:
        """Single pass with dropout off (the plain BiLSTM-softmax path)."""
        with no_grad():
            masks = deterministic_masks(self.config, len(word_ids))
            return self.pass_probs(word_ids, char_ids_per_token, masks).data
