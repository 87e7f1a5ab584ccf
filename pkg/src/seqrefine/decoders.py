"""Label decoders: greedy softmax, linear-chain CRF Viterbi, threshold mixing.

The threshold mixer is the decode rule of the two-stage tagger: a position
keeps its draft label unless the draft uncertainty strictly exceeds the
threshold, in which case the refined label wins. Every position is selected
independently, so mixing is one vectorized pass. The Viterbi baseline is the
sequential dynamic program it replaces; it is written as a plain Python loop
on purpose, so its per-token cost honestly shows the C-squared growth of the
algorithm rather than numpy's constant factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import TagScheme, extract_segments

# Additive mask value standing in for minus infinity. Large enough that no
# masked path can win and exp() underflows to exactly 0, small enough that
# sums stay NaN-free.
NEG_INF = -1e30

DECODE_MODES = ("softmax", "crf", "mix")


@dataclass(frozen=True)
class DecodeConfig:
    """How final labels are produced from model outputs."""

    mode: str = "mix"
    gamma: float = 0.35
    samples: int = 8
    legalize: bool = False

    def __post_init__(self):
        if self.mode not in DECODE_MODES:
            raise ValueError(f"mode must be one of {DECODE_MODES}, got {self.mode!r}")
        if not self.gamma >= 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")


class CrfParams:
    """Transition table over C labels plus virtual start and stop states.

    The table is [C+2 x C+2]; rows index the source state, columns the
    target. State ids C and C+1 are start and stop. An optional additive
    mask pins illegal transitions to ``NEG_INF`` without touching the
    trainable table.
    """

    def __init__(self, num_labels: int, rng=None, mask: np.ndarray | None = None):
        if num_labels < 1:
            raise ValueError(f"num_labels must be >= 1, got {num_labels}")
        size = num_labels + 2
        if rng is None:
            values = np.zeros((size, size))
        else:
            values = rng.uniform(-0.1, 0.1, (size, size))
        if mask is not None and mask.shape != (size, size):
            raise ValueError(f"mask shape {mask.shape} does not match table ({size}, {size})")
        self.num_labels = num_labels
        self.transitions = Tensor(values, requires_grad=True)
        self.mask = None if mask is None else np.asarray(mask, dtype=np.float64)

    @property
    def start_id(self) -> int:
        return self.num_labels

    @property
    def stop_id(self) -> int:
        return self.num_labels + 1

    def effective(self) -> Tensor:
        """Transition table with the legality mask applied, if any."""
        if self.mask is None:
            return self.transitions
        return ad.add(self.transitions, Tensor(self.mask))

    def effective_array(self) -> np.ndarray:
        if self.mask is None:
            return self.transitions.data
        return self.transitions.data + self.mask

    def param_items(self):
        return [("crf.transitions", self.transitions)]


def legal_transition_mask(scheme: TagScheme) -> np.ndarray:
    """Additive [C+2 x C+2] mask: 0 where a transition is legal, NEG_INF else.

    Start and stop legality follow the scheme; start -> stop stays masked
    because empty sequences never reach the decoder.
    """
    c = scheme.size
    mask = np.full((c + 2, c + 2), NEG_INF)
    for i, prev in enumerate(scheme.labels):
        for j, nxt in enumerate(scheme.labels):
            if scheme.is_legal_transition(prev, nxt):
                mask[i, j] = 0.0
        if scheme.is_legal_end(prev):
            mask[i, c + 1] = 0.0
    for j, nxt in enumerate(scheme.labels):
        if scheme.is_legal_start(nxt):
            mask[c, j] = 0.0
    return mask


def greedy_labels(probs: np.ndarray) -> np.ndarray:
    """Per-row argmax; ties go to the lowest label id."""
    return np.argmax(np.asarray(probs), axis=1)


def viterbi(emissions: np.ndarray, transitions: np.ndarray):
    """Highest-scoring label path under emission plus transition scores.

    Returns (labels [n], score). The score counts the start transition into
    the first label, one transition per adjacent pair, every emission, and
    the stop transition out of the last label. Ties break toward the lowest
    label id at every backpointer and at the final state.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    transitions = np.asarray(transitions, dtype=np.float64)
    if emissions.ndim != 2 or emissions.shape[0] < 1:
        raise ValueError(f"emissions must be [n x C] with n >= 1, got {emissions.shape}")
    n, c = emissions.shape
    if transitions.shape != (c + 2, c + 2):
        raise ValueError(
            f"transitions must be [{c + 2} x {c + 2}] for {c} labels, got {transitions.shape}"
        )
    start, stop = c, c + 1
    em = emissions.tolist()
    tr = transitions.tolist()

    delta = [tr[start][y] + em[0][y] for y in range(c)]
    back = []
    for t in range(1, n):
        row = em[t]
        new_delta = [0.0] * c
        pointers = [0] * c
        for y in range(c):
            best_prev = 0
            best = delta[0] + tr[0][y]
            for prev in range(1, c):
                cand = delta[prev] + tr[prev][y]
                if cand > best:
                    best = cand
                    best_prev = prev
            new_delta[y] = best + row[y]
            pointers[y] = best_prev
        delta = new_delta
        back.append(pointers)

    best_last = 0
    best_score = delta[0] + tr[0][stop]
    for y in range(1, c):
        cand = delta[y] + tr[y][stop]
        if cand > best_score:
            best_score = cand
            best_last = y
    path = [best_last]
    for pointers in reversed(back):
        path.append(pointers[path[-1]])
    path.reverse()
    return np.array(path, dtype=np.int64), best_score


def crf_nll(emissions, params: CrfParams, gold) -> Tensor:
    """Negative log-likelihood of the gold path: logZ - score(gold).

    ``emissions`` may be a Tensor (trainable) or an array. logZ comes from
    the forward algorithm run entirely in log space.
    """
    if not isinstance(emissions, Tensor):
        emissions = Tensor(np.asarray(emissions, dtype=np.float64))
    n, c = emissions.shape
    if c != params.num_labels:
        raise ValueError(f"emissions have {c} labels, table expects {params.num_labels}")
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != (n,):
        raise ValueError(f"gold must align with the {n} emission rows, got shape {gold.shape}")
    if gold.min() < 0 or gold.max() >= c:
        raise ValueError("gold label id out of range")

    table = params.effective()
    core_t = ad.transpose(ad.slice_cols(ad.slice_rows(table, 0, c), 0, c))
    start_row = ad.slice_cols(ad.slice_rows(table, params.start_id, params.start_id + 1), 0, c)
    stop_col = ad.transpose(ad.slice_cols(ad.slice_rows(table, 0, c), params.stop_id, params.stop_id + 1))

    alpha = ad.add(ad.slice_rows(emissions, 0, 1), start_row)
    for t in range(1, n):
        # (core_t + alpha)[j, i] = T[i -> j] + alpha[i]
        pooled = ad.logsumexp_rows(ad.add(core_t, alpha))
        alpha = ad.add(ad.transpose(pooled), ad.slice_rows(emissions, t, t + 1))
    log_z = ad.sum_all(ad.logsumexp_rows(ad.add(alpha, stop_col)))

    score = ad.sum_all(ad.pick_rows(emissions, gold))
    score = score + ad.sum_all(
        ad.pick_rows(ad.take_rows(table, np.array([params.start_id])), gold[:1])
    )
    score = score + ad.sum_all(
        ad.pick_rows(ad.take_rows(table, gold[-1:]), np.array([params.stop_id]))
    )
    if n > 1:
        score = score + ad.sum_all(ad.pick_rows(ad.take_rows(table, gold[:-1]), gold[1:]))
    return ad.sub(log_z, score)


@dataclass(frozen=True)
class MixedLabels:
    """Final labels plus which positions took the refined route."""

    labels: np.ndarray
    refined_mask: np.ndarray

    @property
    def sources(self):
        return tuple("refined" if r else "draft" for r in self.refined_mask)


def threshold_mix(draft, refined, gamma: float) -> MixedLabels:
    """Per-position selection: refined where uncertainty strictly exceeds gamma.

    ``draft`` supplies labels and per-token uncertainty, ``refined`` the
    replacement labels. A position with uncertainty exactly equal to gamma
    keeps the draft label.
    """
    if not gamma >= 0.0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    draft_labels = np.asarray(draft.labels)
    refined_labels = np.asarray(refined.labels)
    uncertainty = np.asarray(draft.uncertainty)
    if draft_labels.shape != refined_labels.shape or draft_labels.shape != uncertainty.shape:
        raise ValueError(
            f"length mismatch: draft {draft_labels.shape}, refined {refined_labels.shape}, "
            f"uncertainty {uncertainty.shape}"
        )
    refined_mask = uncertainty > gamma
    labels = np.where(refined_mask, refined_labels, draft_labels)
    return MixedLabels(labels=labels, refined_mask=refined_mask)


def legalize(label_ids, scheme: TagScheme):
    """Repair an ill-formed BIOES sequence into a legal one.

    Recovers segments the tolerant way, then re-emits clean tags from the
    segments; legal inputs pass through unchanged. Off by default at decode
    time.
    """
    names = list(scheme.decode(label_ids))
    repaired = ["O"] * len(names)
    for start, end, typ in extract_segments(names):
        if typ is None:
            continue
        if start == end:
            repaired[start] = f"S-{typ}"
        else:
            repaired[start] = f"B-{typ}"
            for k in range(start + 1, end):
                repaired[k] = f"I-{typ}"
            repaired[end] = f"E-{typ}"
    return np.array(scheme.encode(repaired), dtype=np.int64)
