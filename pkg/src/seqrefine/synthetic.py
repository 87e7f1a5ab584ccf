"""Seeded synthetic sequence-labeling corpora with long-range agreement.

Sentences come from a latent-state Markov chain over {filler, type_1..type_K}
whose runs become BIOES mention segments. Constraint rules then pin a pair of
single-token mentions per rule: the *evidence* position gets a word that
reveals its type, the *dependent* position gets a word from a vocabulary
shared by all types and simply copies the evidence type. Local evidence is
therefore uninformative exactly at dependent positions; only the long-range
agreement disambiguates them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Sentence, scheme_from_types


class GenerationError(RuntimeError):
    """Constraint set could not be satisfied within the retry budget."""


def default_transition(num_types: int, stay_filler: float = 0.8, stay_type: float = 0.35):
    """Row-stochastic latent-state matrix over [filler, type_1..type_K]."""
    k = num_types
    matrix = np.zeros((k + 1, k + 1))
    matrix[0, 0] = stay_filler
    matrix[0, 1:] = (1.0 - stay_filler) / k
    for t in range(1, k + 1):
        matrix[t, t] = stay_type
        matrix[t, 0] = 1.0 - stay_type
    return matrix


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the generator; all randomness flows from ``seed``.

    ``constraint_rules`` hold (evidence, dependent) position offsets; negative
    offsets count from the end of the sentence, Python-style.
    """

    num_types: int = 3
    vocab_size: int = 72
    min_length: int = 9
    max_length: int = 14
    constraint_rules: tuple = ((1, -2),)
    transition: tuple = None
    ambiguous_mention_prob: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.num_types < 1:
            raise ValueError("num_types must be >= 1")
        if self.min_length < 1 or self.max_length < self.min_length:
            raise ValueError(f"bad length range [{self.min_length}, {self.max_length}]")
        if self.vocab_size < 3 * (self.num_types + 2):
            raise ValueError(f"vocab_size {self.vocab_size} too small for {self.num_types} types")
        matrix = self.transition_matrix()
        if matrix.shape != (self.num_types + 1, self.num_types + 1):
            raise ValueError(f"transition matrix must be {self.num_types + 1} square, got {matrix.shape}")
        if not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition matrix rows must sum to 1")
        if np.any(matrix < 0):
            raise ValueError("transition matrix entries must be non-negative")
        rules = tuple(tuple(r) for r in self.constraint_rules)
        object.__setattr__(self, "constraint_rules", rules)
        for rule in rules:
            if len(rule) != 2:
                raise ValueError(f"constraint rule {rule!r} must be an (evidence, dependent) pair")
        if rules and not self._positions_feasible(self.max_length):
            raise ValueError(f"constraint rules {rules!r} cannot fit a length-{self.max_length} sentence")

    def transition_matrix(self) -> np.ndarray:
        if self.transition is None:
            return default_transition(self.num_types)
        return np.asarray(self.transition, dtype=np.float64)

    def resolve_positions(self, n: int):
        """Anchor positions for every rule at sentence length n, or None."""
        anchors = []
        for evidence, dependent in self.constraint_rules:
            e = evidence if evidence >= 0 else n + evidence
            d = dependent if dependent >= 0 else n + dependent
            if not (0 <= e < n and 0 <= d < n) or e == d:
                return None
            anchors.append((e, d))
        flat = [p for pair in anchors for p in pair]
        for i, a in enumerate(flat):
            for b in flat[i + 1:]:
                if abs(a - b) < 2:  # need a filler gap so both stay single-token
                    return None
        return anchors

    def _positions_feasible(self, n: int) -> bool:
        return self.resolve_positions(n) is not None

    def types(self):
        return tuple(f"T{t}" for t in range(self.num_types))

    def scheme(self):
        return scheme_from_types(self.types())


@dataclass(frozen=True)
class WordInventory:
    filler: tuple
    ambiguous: tuple
    clear: dict = field(default_factory=dict)


def word_inventory(spec: SyntheticSpec) -> WordInventory:
    """Deterministic partition of the emission vocabulary.

    Roughly 40% filler, 20% shared ambiguous mention words, the rest split
    evenly as type-revealing words (one letter prefix per type).
    """
    n_filler = max(2, int(round(spec.vocab_size * 0.4)))
    n_ambig = max(2, int(round(spec.vocab_size * 0.2)))
    n_clear_total = spec.vocab_size - n_filler - n_ambig
    per_type = max(1, n_clear_total // spec.num_types)
    filler = tuple(f"f{i:02d}" for i in range(n_filler))
    ambiguous = tuple(f"q{i:02d}" for i in range(n_ambig))
    clear = {
        typ: tuple(f"{chr(ord('a') + t)}{i:02d}" for i in range(per_type))
        for t, typ in enumerate(spec.types())
    }
    return WordInventory(filler=filler, ambiguous=ambiguous, clear=clear)


@dataclass(frozen=True)
class ConstraintSites:
    """Per-sentence anchor positions, parallel to ``spec.constraint_rules``."""

    evidence: tuple
    dependent: tuple


def _chain_states(spec: SyntheticSpec, n: int, rng) -> np.ndarray:
    matrix = spec.transition_matrix()
    states = np.zeros(n, dtype=np.intp)
    state = 0  # sentences start in filler
    for i in range(n):
        state = rng.choice(matrix.shape[0], p=matrix[state])
        states[i] = state
    return states


def _states_to_labels(states: np.ndarray, types) -> list:
    labels = []
    n = len(states)
    i = 0
    while i < n:
        s = int(states[i])
        if s == 0:
            labels.append("O")
            i += 1
            continue
        j = i
        while j + 1 < n and states[j + 1] == s:
            j += 1
        typ = types[s - 1]
        if j == i:
            labels.append(f"S-{typ}")
        else:
            labels.append(f"B-{typ}")
            labels.extend(f"I-{typ}" for _ in range(i + 1, j))
            labels.append(f"E-{typ}")
        i = j + 1
    return labels


def generate_sentences(spec: SyntheticSpec, count: int, rng=None, max_retries: int = 50):
    """Emit ``count`` sentences and their constraint anchor sites."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    inventory = word_inventory(spec)
    types = spec.types()
    sentences = []
    sites = []
    for _ in range(count):
        for attempt in range(max_retries):
            n = int(rng.integers(spec.min_length, spec.max_length + 1))
            anchors = spec.resolve_positions(n)
            if anchors is not None:
                break
        else:
            raise GenerationError(
                f"constraint rules {spec.constraint_rules!r} not satisfiable after {max_retries} retries"
            )
        states = _chain_states(spec, n, rng)
        # carve out the anchors: a filler gap on both sides keeps them single-token
        for e, d in anchors:
            for pos in (e, d):
                lo, hi = max(0, pos - 1), min(n, pos + 2)
                states[lo:hi] = 0
        anchor_type = {}
        for e, d in anchors:
            t = int(rng.integers(1, spec.num_types + 1))
            states[e] = t
            states[d] = t
            anchor_type[e] = t
            anchor_type[d] = t
        labels = _states_to_labels(states, types)
        tokens = []
        dependents = {d for _, d in anchors}
        evidences = {e for e, _ in anchors}
        for i in range(n):
            s = int(states[i])
            if s == 0:
                tokens.append(inventory.filler[rng.integers(len(inventory.filler))])
            elif i in dependents:
                tokens.append(inventory.ambiguous[rng.integers(len(inventory.ambiguous))])
            elif i in evidences:
                words = inventory.clear[types[s - 1]]
                tokens.append(words[rng.integers(len(words))])
            elif rng.random() < spec.ambiguous_mention_prob:
                tokens.append(inventory.ambiguous[rng.integers(len(inventory.ambiguous))])
            else:
                words = inventory.clear[types[s - 1]]
                tokens.append(words[rng.integers(len(words))])
        sentences.append(Sentence(tuple(tokens), tuple(labels)))
        sites.append(ConstraintSites(
            evidence=tuple(e for e, _ in anchors),
            dependent=tuple(d for _, d in anchors),
        ))
    return sentences, sites


def generate_splits(spec: SyntheticSpec, sizes: dict):
    """Deterministic named splits, each on its own child seed stream."""
    out = {}
    names = list(sizes)
    streams = np.random.SeedSequence(spec.seed).spawn(len(names))
    for name, stream in zip(names, streams):
        rng = np.random.default_rng(stream)
        out[name] = generate_sentences(spec, sizes[name], rng=rng)
    return out


def dependent_positions(spec: SyntheticSpec, sentences) -> list:
    """Constrained (dependent) positions recomputed from rule offsets."""
    out = []
    for sent in sentences:
        anchors = spec.resolve_positions(len(sent))
        out.append(tuple(d for _, d in anchors) if anchors else ())
    return out
