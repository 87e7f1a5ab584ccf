"""Stage two: parallel label refinement with two-stream relative attention.

Every position attends twice with shared queries from the word stream: once
over word content (word-to-word) and once over the draft-label embeddings
(word-to-label). Both score matrices combine four terms - content-content,
content-position, a global content bias, and a global position bias - with
sinusoidal relative-position encodings shared across heads and streams.
Refined positions are decoded independently, so inference is one parallel
pass; nothing autoregressive happens here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad


class CapacityError(ValueError):
    """Sentence exceeds the relative-position table's reach."""


def sinusoid_table(max_offset: int, dim: int) -> np.ndarray:
    """Rows for offsets -max_offset .. +max_offset (row index offset + max_offset).

    Even columns carry sin, odd columns cos, with the usual geometric
    frequency ladder over column pairs.
    """
    offsets = np.arange(-max_offset, max_offset + 1, dtype=np.float64)[:, None]
    pair = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angles = offsets / np.power(10000.0, pair / dim)
    table = np.zeros((2 * max_offset + 1, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : table[:, 1::2].shape[1]])
    return table


@dataclass(frozen=True)
class RefinerConfig:
    """Attention geometry; ``model_dim`` must match the word-representation width."""

    model_dim: int
    layers: int = 2
    heads: int = 5
    head_dim: int = 80
    ffn_dim: int = 128
    max_offset: int = 512

    def __post_init__(self):
        for name in ("model_dim", "layers", "heads", "head_dim", "ffn_dim", "max_offset"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class HeadParams:
    w_qx: Tensor
    w_kx: Tensor
    w_ql: Tensor
    w_kl: Tensor
    w_kr: Tensor
    w_vx: Tensor
    w_vl: Tensor


@dataclass
class LayerParams:
    heads: list
    lin_x_w: Tensor
    lin_x_b: Tensor
    lin_l_w: Tensor
    lin_l_b: Tensor
    ln_x_gain: Tensor
    ln_x_bias: Tensor
    ln_l_gain: Tensor
    ln_l_bias: Tensor
    ffn_x_w1: Tensor
    ffn_x_b1: Tensor
    ffn_x_w2: Tensor
    ffn_x_b2: Tensor
    ffn_l_w1: Tensor
    ffn_l_b1: Tensor
    ffn_l_w2: Tensor
    ffn_l_b2: Tensor


@dataclass
class StreamBiases:
    """Per-head global bias vectors, shared by every layer."""

    u_x: Tensor
    v_x: Tensor
    u_l: Tensor
    v_l: Tensor


def glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


class Refiner:
    """Trainable two-stream refiner over frozen word representations."""

    def __init__(self, config: RefinerConfig, num_labels: int, rng):
        self.config = config
        self.num_labels = num_labels
        d, dk = config.model_dim, config.head_dim
        bound = np.sqrt(3.0 / d)
        self.label_emb = Tensor(rng.uniform(-bound, bound, (num_labels, d)), requires_grad=True)
        self.biases = [
            StreamBiases(
                u_x=Tensor(rng.uniform(-0.1, 0.1, (1, dk)), requires_grad=True),
                v_x=Tensor(rng.uniform(-0.1, 0.1, (1, dk)), requires_grad=True),
                u_l=Tensor(rng.uniform(-0.1, 0.1, (1, dk)), requires_grad=True),
                v_l=Tensor(rng.uniform(-0.1, 0.1, (1, dk)), requires_grad=True),
            )
            for _ in range(config.heads)
        ]
        self.layers = []
        merged = config.heads * dk
        for _ in range(config.layers):
            heads = [
                HeadParams(
                    w_qx=Tensor(glorot(rng, d, dk), requires_grad=True),
                    w_kx=Tensor(glorot(rng, d, dk), requires_grad=True),
                    w_ql=Tensor(glorot(rng, d, dk), requires_grad=True),
                    w_kl=Tensor(glorot(rng, d, dk), requires_grad=True),
                    w_kr=Tensor(glorot(rng, d, dk), requires_grad=True),
                    w_vx=Tensor(glorot(rng, d, dk), requires_grad=True),
                    w_vl=Tensor(glorot(rng, d, dk), requires_grad=True),
                )
                for _ in range(config.heads)
            ]
            self.layers.append(LayerParams(
                heads=heads,
                lin_x_w=Tensor(glorot(rng, merged, d), requires_grad=True),
                lin_x_b=Tensor(np.zeros((1, d)), requires_grad=True),
                lin_l_w=Tensor(glorot(rng, merged, d), requires_grad=True),
                lin_l_b=Tensor(np.zeros((1, d)), requires_grad=True),
                ln_x_gain=Tensor(np.ones((1, d)), requires_grad=True),
                ln_x_bias=Tensor(np.zeros((1, d)), requires_grad=True),
                ln_l_gain=Tensor(np.ones((1, d)), requires_grad=True),
                ln_l_bias=Tensor(np.zeros((1, d)), requires_grad=True),
                ffn_x_w1=Tensor(glorot(rng, d, config.ffn_dim), requires_grad=True),
                ffn_x_b1=Tensor(np.zeros((1, config.ffn_dim)), requires_grad=True),
                ffn_x_w2=Tensor(glorot(rng, config.ffn_dim, d), requires_grad=True),
                ffn_x_b2=Tensor(np.zeros((1, d)), requires_grad=True),
                ffn_l_w1=Tensor(glorot(rng, d, config.ffn_dim), requires_grad=True),
                ffn_l_b1=Tensor(np.zeros((1, config.ffn_dim)), requires_grad=True),
                ffn_l_w2=Tensor(glorot(rng, config.ffn_dim, d), requires_grad=True),
                ffn_l_b2=Tensor(np.zeros((1, d)), requires_grad=True),
            ))
        self.out_w = Tensor(glorot(rng, 2 * d, num_labels), requires_grad=True)
        self.out_b = Tensor(np.zeros((1, num_labels)), requires_grad=True)
        self._table = sinusoid_table(config.max_offset, d)

    def param_items(self, prefix: str = "refiner."):
        items = [(f"{prefix}label_emb", self.label_emb)]
        for h, bias in enumerate(self.biases):
            for field in ("u_x", "v_x", "u_l", "v_l"):
                items.append((f"{prefix}head{h}.{field}", getattr(bias, field)))
        for l, layer in enumerate(self.layers):
            for h, head in enumerate(layer.heads):
                for field in ("w_qx", "w_kx", "w_ql", "w_kl", "w_kr", "w_vx", "w_vl"):
                    items.append((f"{prefix}layer{l}.head{h}.{field}", getattr(head, field)))
            for field in ("lin_x_w", "lin_x_b", "lin_l_w", "lin_l_b",
                          "ln_x_gain", "ln_x_bias", "ln_l_gain", "ln_l_bias",
                          "ffn_x_w1", "ffn_x_b1", "ffn_x_w2", "ffn_x_b2",
                          "ffn_l_w1", "ffn_l_b1", "ffn_l_w2", "ffn_l_b2"):
                items.append((f"{prefix}layer{l}.{field}", getattr(layer, field)))
        items.append((f"{prefix}out_w", self.out_w))
        items.append((f"{prefix}out_b", self.out_b))
        return items

    def parameters(self):
        return [t for _, t in self.param_items()]

    # ------------------------------------------------------------------

    def offset_rows(self, n: int) -> Tensor:
        """Constant R slice for offsets -(n-1) .. n-1."""
        if n - 1 > self.config.max_offset:
            raise CapacityError(
                f"sentence length {n} exceeds max relative offset {self.config.max_offset}"
            )
        center = self.config.max_offset
        return Tensor(self._table[center - (n - 1): center + n])

    def head_scores(self, head: HeadParams, bias: StreamBiases, e_x: Tensor, e_l: Tensor, rows: Tensor):
        """Unscaled four-term score matrices (word-to-word, word-to-label)."""
        n = e_x.shape[0]
        kr = ad.matmul(rows, head.w_kr)                       # [2n-1 x dk]
        q_x = ad.matmul(e_x, head.w_qx)
        k_x = ad.matmul(e_x, head.w_kx)
        a_x = ad.add(
            ad.add(ad.matmul(q_x, ad.transpose(k_x)), ad.rel_gather(ad.matmul(q_x, ad.transpose(kr)), n)),
            ad.add(ad.rel_gather(ad.matmul(bias.v_x, ad.transpose(kr)), n), ad.matmul(bias.u_x, ad.transpose(k_x))),
        )
        q_l = ad.matmul(e_x, head.w_ql)
        k_l = ad.matmul(e_l, head.w_kl)
        a_l = ad.add(
            ad.add(ad.matmul(q_l, ad.transpose(k_l)), ad.rel_gather(ad.matmul(q_l, ad.transpose(kr)), n)),
            ad.add(ad.rel_gather(ad.matmul(bias.v_l, ad.transpose(kr)), n), ad.matmul(bias.u_l, ad.transpose(k_l))),
        )
        return a_x, a_l

    def layer_forward(self, layer: LayerParams, e_x: Tensor, e_l: Tensor, rows: Tensor):
        """One refinement layer; returns the updated (word, label) streams."""
        scale = 1.0 / np.sqrt(self.config.head_dim)
        heads_x, heads_l = [], []
        for head, bias in zip(layer.heads, self.biases):
            a_x, a_l = self.head_scores(head, bias, e_x, e_l, rows)
            attn_x = ad.softmax_rows(ad.mul(a_x, scale))
            attn_l = ad.softmax_rows(ad.mul(a_l, scale))
            heads_x.append(ad.matmul(attn_x, ad.matmul(e_x, head.w_vx)))
            heads_l.append(ad.matmul(attn_l, ad.matmul(e_l, head.w_vl)))
        merged_x = heads_x[0] if len(heads_x) == 1 else ad.concat_cols(heads_x)
        merged_l = heads_l[0] if len(heads_l) == 1 else ad.concat_cols(heads_l)
        o_x = self._norm(ad.add(ad.add(ad.matmul(merged_x, layer.lin_x_w), layer.lin_x_b), e_x),
                         layer.ln_x_gain, layer.ln_x_bias)
        o_l = self._norm(ad.add(ad.add(ad.matmul(merged_l, layer.lin_l_w), layer.lin_l_b), e_l),
                         layer.ln_l_gain, layer.ln_l_bias)
        h_x = self._ffn(o_x, layer.ffn_x_w1, layer.ffn_x_b1, layer.ffn_x_w2, layer.ffn_x_b2)
        h_l = self._ffn(o_l, layer.ffn_l_w1, layer.ffn_l_b1, layer.ffn_l_w2, layer.ffn_l_b2)
        return h_x, h_l

    @staticmethod
    def _norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
        return ad.add(ad.scale_cols(ad.layer_norm_rows(x), gain), bias)

    @staticmethod
    def _ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
        return ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(x, w1), b1)), w2), b2)

    def forward_logits(self, word_repr, draft_labels) -> Tensor:
        """Refined logits [n x C]; differentiable when taped.

        ``word_repr`` is the frozen [n x d] representation; ``draft_labels``
        are stage-one label ids. Every output row depends only on the inputs,
        never on other refined rows, so positions decode in parallel.
        """
        e_x = word_repr if isinstance(word_repr, Tensor) else Tensor(word_repr)
        draft_labels = np.asarray(draft_labels, dtype=np.intp)
        if e_x.shape[0] != len(draft_labels):
            raise ValueError(f"{e_x.shape[0]} tokens vs {len(draft_labels)} draft labels")
        rows = self.offset_rows(e_x.shape[0])
        e_l = ad.take_rows(self.label_emb, draft_labels)
        for layer in self.layers:
            e_x, e_l = self.layer_forward(layer, e_x, e_l, rows)
        return ad.add(ad.matmul(ad.concat_cols([e_x, e_l]), self.out_w), self.out_b)

    def forward(self, word_repr, draft_labels) -> Tensor:
        """Refined distributions [n x C] (softmax of ``forward_logits``)."""
        return ad.softmax_rows(self.forward_logits(word_repr, draft_labels))

    def predict(self, word_repr: np.ndarray, draft_labels) -> np.ndarray:
        """Refined probabilities as plain numpy (no tape)."""
        with no_grad():
            return self.forward(word_repr, draft_labels).data

    def predict_refined(self, word_repr: np.ndarray, draft_labels) -> "RefinedPrediction":
        probs = self.predict(word_repr, draft_labels)
        return RefinedPrediction(probs=probs, labels=np.argmax(probs, axis=1))


@dataclass(frozen=True)
class RefinedPrediction:
    """Refined per-token distributions and their argmax labels."""

    probs: np.ndarray
    labels: np.ndarray
