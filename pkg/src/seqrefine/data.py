"""Corpus I/O, tag schemes, vocabularies, and embedding tables.

Column files follow the usual one-token-per-line convention: whitespace
separated columns, blank line between sentences, ``-DOCSTART-`` rows dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

UNKNOWN_TOKEN = "<unk>"

_DIGIT_RE = re.compile(r"\d")


class ParseError(ValueError):
    """Malformed corpus or embedding file; message carries the line number."""


class ValidationError(ValueError):
    """A label sequence violates the tag scheme's grammar."""


def normalize_word(word: str) -> str:
    """Lookup key for word embeddings: lowercased, digits collapsed to '0'.

    The character channel sees the original surface form; this mapping only
    affects the word-embedding table.
    """
    return _DIGIT_RE.sub("0", word.lower())


@dataclass(frozen=True)
class Sentence:
    tokens: tuple
    labels: tuple = None

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class ColumnSpec:
    """Which whitespace-separated columns hold the token and the label."""

    token: int = 0
    label: int = -1


def read_conll(path, columns: ColumnSpec = ColumnSpec(), known_labels=None):
    """Read a column-format corpus into a list of Sentences.

    Raises ParseError (with the 1-based line number) for rows with too few
    columns, and for labels outside ``known_labels`` when that set is given.
    """
    sentences = []
    tokens, labels = [], []
    known = set(known_labels) if known_labels is not None else None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                if tokens:
                    sentences.append(Sentence(tuple(tokens), tuple(labels)))
                    tokens, labels = [], []
                continue
            parts = line.split()
            if parts[0] == "-DOCSTART-":
                continue
            label_idx = columns.label if columns.label >= 0 else len(parts) + columns.label
            if not (0 <= columns.token < len(parts)) or not (0 <= label_idx < len(parts)) or label_idx == columns.token:
                raise ParseError(
                    f"line {lineno}: row has {len(parts)} column(s), cannot take token "
                    f"column {columns.token} and label column {columns.label}"
                )
            token = parts[columns.token]
            label = parts[label_idx]
            if known is not None and label not in known:
                raise ParseError(f"line {lineno}: unknown label {label!r}")
            tokens.append(token)
            labels.append(label)
    if tokens:
        sentences.append(Sentence(tuple(tokens), tuple(labels)))
    return sentences


def write_conll(path, sentences) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            for i, tok in enumerate(sent.tokens):
                if sent.labels is not None:
                    fh.write(f"{tok} {sent.labels[i]}\n")
                else:
                    fh.write(f"{tok}\n")
            fh.write("\n")


def write_predictions(path, sentences, predicted, uncertainties, sources=None) -> None:
    """Prediction dump: token [gold] predicted uncertainty [source] columns.

    Uncertainty is printed with six decimals; ``sources`` entries, when given,
    say whether each token kept its draft label or took the refined one.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for s, sent in enumerate(sentences):
            for i, tok in enumerate(sent.tokens):
                cols = [tok]
                if sent.labels is not None:
                    cols.append(sent.labels[i])
                cols.append(predicted[s][i])
                cols.append(f"{uncertainties[s][i]:.6f}")
                if sources is not None:
                    cols.append(sources[s][i])
                fh.write(" ".join(cols) + "\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# tag schemes


def split_tag(label: str):
    """'B-PER' -> ('B', 'PER'); 'O' -> ('O', None)."""
    if label == "O":
        return "O", None
    if len(label) > 2 and label[1] == "-":
        return label[0], label[2:]
    return label, None


def convert_bio2_to_bioes(labels):
    """Rewrite a legal BIO2 sequence into BIOES, preserving segments.

    Raises ValidationError (with the offending index) when an I- tag does not
    continue a same-type B-/I- run.
    """
    labels = list(labels)
    for i, lab in enumerate(labels):
        head, typ = split_tag(lab)
        if head not in ("B", "I", "O"):
            raise ValidationError(f"index {i}: {lab!r} is not a BIO2 tag")
        if head == "I":
            if i == 0:
                raise ValidationError(f"index {i}: {lab!r} cannot start a sequence")
            prev_head, prev_typ = split_tag(labels[i - 1])
            if prev_head not in ("B", "I") or prev_typ != typ:
                raise ValidationError(f"index {i}: {lab!r} does not continue a {typ} segment")
    out = []
    n = len(labels)
    for i, lab in enumerate(labels):
        head, typ = split_tag(lab)
        if head == "O":
            out.append("O")
            continue
        next_head, next_typ = split_tag(labels[i + 1]) if i + 1 < n else ("O", None)
        continues = next_head == "I" and next_typ == typ
        if head == "B":
            out.append(f"B-{typ}" if continues else f"S-{typ}")
        else:
            out.append(f"I-{typ}" if continues else f"E-{typ}")
    return out


def convert_bioes_to_bio2(labels):
    out = []
    for lab in labels:
        head, typ = split_tag(lab)
        if head == "S":
            out.append(f"B-{typ}")
        elif head == "E":
            out.append(f"I-{typ}")
        else:
            out.append(lab)
    return out


def extract_segments(labels):
    """Typed spans as (start, end_inclusive, type) triples.

    Tolerant of ill-formed sequences the way conlleval is: an I-/E- tag that
    does not continue a same-type run opens a new segment.
    """
    segments = []
    start = None
    cur_type = None
    prev_head, prev_type = "O", None
    for i, lab in enumerate(labels):
        head, typ = split_tag(lab)
        if head in ("B", "S"):
            begins = True
        elif head in ("I", "E"):
            begins = prev_head in ("O", "E", "S") or prev_type != typ
        else:
            begins = False
        if start is not None and (begins or head == "O"):
            segments.append((start, i - 1, cur_type))
            start = None
        if begins:
            start = i
            cur_type = typ
        if start is not None and head in ("E", "S"):
            segments.append((start, i, cur_type))
            start = None
        prev_head, prev_type = head, typ
    if start is not None:
        segments.append((start, len(labels) - 1, cur_type))
    return segments


@dataclass(frozen=True)
class TagScheme:
    """Ordered label inventory plus transition legality for BIOES grammars."""

    labels: tuple
    kind: str = "bioes"  # "bioes" or "plain"

    def __post_init__(self):
        if self.kind not in ("bioes", "plain"):
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels in scheme")

    @property
    def size(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"label {label!r} not in scheme") from None

    def encode(self, labels):
        return np.array([self.index(lab) for lab in labels], dtype=np.intp)

    def decode(self, ids):
        return [self.labels[int(i)] for i in ids]

    def is_legal_transition(self, prev: str, nxt: str) -> bool:
        if self.kind == "plain":
            return True
        ph, pt = split_tag(prev)
        nh, nt = split_tag(nxt)
        if ph in ("O", "E", "S"):
            return nh in ("O", "B", "S")
        if ph in ("B", "I"):
            return nh in ("I", "E") and nt == pt
        return False

    def is_legal_start(self, label: str) -> bool:
        if self.kind == "plain":
            return True
        return split_tag(label)[0] in ("O", "B", "S")

    def is_legal_end(self, label: str) -> bool:
        if self.kind == "plain":
            return True
        return split_tag(label)[0] in ("O", "E", "S")

    def is_legal_sequence(self, labels) -> bool:
        if self.kind == "plain":
            return True
        if not labels:
            return True
        if not self.is_legal_start(labels[0]) or not self.is_legal_end(labels[-1]):
            return False
        return all(self.is_legal_transition(a, b) for a, b in zip(labels, labels[1:]))


def scheme_from_types(types, kind: str = "bioes") -> TagScheme:
    """BIOES inventory for the given entity types, 'O' first."""
    labels = ["O"]
    for t in types:
        for head in ("B", "I", "E", "S"):
            labels.append(f"{head}-{t}")
    return TagScheme(tuple(labels), kind=kind)


def scheme_from_corpus(sentences) -> TagScheme:
    seen = []
    heads = set()
    for sent in sentences:
        for lab in sent.labels:
            if lab not in seen:
                seen.append(lab)
            heads.add(split_tag(lab)[0])
    kind = "bioes" if heads <= {"O", "B", "I", "E", "S"} and heads != {"O"} else "plain"
    return TagScheme(tuple(sorted(seen)), kind=kind)


# ---------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    """Word/char id maps built from a corpus; id 0 is the unknown symbol.

    Word keys go through ``normalize_word``; characters keep original case.
    Ids follow first occurrence, so identical corpora give identical maps.
    """

    word_to_id: dict = field(default_factory=dict)
    char_to_id: dict = field(default_factory=dict)
    word_freq: dict = field(default_factory=dict)

    def __post_init__(self):
        self.word_to_id.setdefault(UNKNOWN_TOKEN, 0)
        self.char_to_id.setdefault(UNKNOWN_TOKEN, 0)

    @classmethod
    def build(cls, sentences) -> "Vocabulary":
        vocab = cls()
        for sent in sentences:
            for tok in sent.tokens:
                key = normalize_word(tok)
                if key not in vocab.word_to_id:
                    vocab.word_to_id[key] = len(vocab.word_to_id)
                vocab.word_freq[key] = vocab.word_freq.get(key, 0) + 1
                for ch in tok:
                    if ch not in vocab.char_to_id:
                        vocab.char_to_id[ch] = len(vocab.char_to_id)
        return vocab

    @classmethod
    def from_lists(cls, words, chars) -> "Vocabulary":
        """Rebuild id maps from id-ordered symbol lists (a saved vocabulary).

        Frequencies are unknown after a round trip, so every word reports
        non-singleton; that only matters during training.
        """
        if not words or words[0] != UNKNOWN_TOKEN:
            raise ValidationError(f"word list must start with {UNKNOWN_TOKEN!r}")
        if not chars or chars[0] != UNKNOWN_TOKEN:
            raise ValidationError(f"char list must start with {UNKNOWN_TOKEN!r}")
        return cls(
            word_to_id={w: i for i, w in enumerate(words)},
            char_to_id={c: i for i, c in enumerate(chars)},
        )

    def id_ordered_words(self):
        return [w for w, _ in sorted(self.word_to_id.items(), key=lambda kv: kv[1])]

    def id_ordered_chars(self):
        return [c for c, _ in sorted(self.char_to_id.items(), key=lambda kv: kv[1])]

    @property
    def num_words(self):
        return len(self.word_to_id)

    @property
    def num_chars(self):
        return len(self.char_to_id)

    def word_id(self, word: str) -> int:
        return self.word_to_id.get(normalize_word(word), 0)

    def char_ids(self, word: str) -> np.ndarray:
        return np.array([self.char_to_id.get(ch, 0) for ch in word], dtype=np.intp)

    def is_singleton(self, word: str) -> bool:
        return self.word_freq.get(normalize_word(word), 0) == 1


# ---------------------------------------------------------------------------
# embeddings


def read_embeddings_file(path, dim: int) -> dict:
    """Whitespace text format: word then ``dim`` floats per line."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise ParseError(f"line {lineno}: expected {dim + 1} fields, got {len(parts)}")
            table[parts[0]] = np.array([float(v) for v in parts[1:]], dtype=np.float64)
    return table


def build_embedding_matrix(vocab: Vocabulary, dim: int, rng, pretrained: dict = None) -> np.ndarray:
    """One row per vocabulary word; pretrained rows copied bit-exactly,
    absent words drawn uniformly from [-sqrt(3/dim), +sqrt(3/dim)]."""
    bound = np.sqrt(3.0 / dim)
    matrix = np.empty((vocab.num_words, dim), dtype=np.float64)
    for word, idx in vocab.word_to_id.items():
        row = None if pretrained is None else pretrained.get(word)
        if row is None:
            matrix[idx] = rng.uniform(-bound, bound, dim)
        else:
            matrix[idx] = row
    return matrix
