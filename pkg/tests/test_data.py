"""Tests for corpus I/O, tag schemes, vocabularies, and embeddings."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqrefine.data import (
    ColumnSpec,
    ParseError,
    Sentence,
    TagScheme,
    ValidationError,
    Vocabulary,
    build_embedding_matrix,
    convert_bio2_to_bioes,
    convert_bioes_to_bio2,
    extract_segments,
    normalize_word,
    read_conll,
    read_embeddings_file,
    scheme_from_corpus,
    scheme_from_types,
    write_conll,
)


class TestReadConll:
    def test_two_sentences(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("the O\ncat S-ANI\n\nran O\n\n")
        sents = read_conll(p)
        assert len(sents) == 2
        assert sents[0].tokens == ("the", "cat")
        assert sents[0].labels == ("O", "S-ANI")
        assert sents[1].tokens == ("ran",)

    def test_empty_file_gives_empty_corpus(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("")
        assert read_conll(p) == []

    def test_docstart_rows_dropped(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("-DOCSTART- O\n\nfoo O\n\n")
        sents = read_conll(p)
        assert len(sents) == 1
        assert sents[0].tokens == ("foo",)

    def test_ragged_row_raises_with_line_number(self, tmp_path):
        p = tmp_path / "r.txt"
        p.write_text("ok O\nbroken\n")
        with pytest.raises(ParseError, match="line 2"):
            read_conll(p)

    def test_unknown_label_rejected_when_inventory_given(self, tmp_path):
        p = tmp_path / "u.txt"
        p.write_text("tok X-WAT\n")
        with pytest.raises(ParseError, match="X-WAT"):
            read_conll(p, known_labels={"O"})

    def test_column_spec_picks_columns(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("tok POS chunk O\n\n")
        sents = read_conll(p, ColumnSpec(token=0, label=3))
        assert sents[0].labels == ("O",)

    def test_round_trip(self, tmp_path):
        sents = [
            Sentence(("a", "b"), ("O", "S-X")),
            Sentence(("c",), ("O",)),
        ]
        p = tmp_path / "rt.txt"
        write_conll(p, sents)
        assert read_conll(p) == sents


class TestSchemeConversion:
    def test_bio2_singleton_becomes_s(self):
        assert convert_bio2_to_bioes(["B-PER", "O"]) == ["S-PER", "O"]

    def test_bio2_run_gets_b_i_e(self):
        got = convert_bio2_to_bioes(["B-LOC", "I-LOC", "I-LOC", "O", "B-PER", "I-PER"])
        assert got == ["B-LOC", "I-LOC", "E-LOC", "O", "B-PER", "E-PER"]

    def test_illegal_bio2_raises_with_index(self):
        with pytest.raises(ValidationError, match="index 1"):
            convert_bio2_to_bioes(["O", "I-PER"])
        with pytest.raises(ValidationError, match="index 2"):
            convert_bio2_to_bioes(["O", "B-PER", "I-LOC"])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from(["O", "B-A", "I-A", "B-B", "I-B"]), max_size=12))
    def test_conversion_preserves_segments(self, labels):
        """BIO2 -> BIOES keeps the exact same typed spans (when legal)."""
        try:
            bioes = convert_bio2_to_bioes(labels)
        except ValidationError:
            return
        assert extract_segments(labels) == extract_segments(bioes)
        assert convert_bioes_to_bio2(bioes) == list(labels)


class TestExtractSegments:
    def test_simple_spans(self):
        labs = ["B-X", "E-X", "O", "S-Y", "B-X", "I-X", "E-X"]
        assert extract_segments(labs) == [(0, 1, "X"), (3, 3, "Y"), (4, 6, "X")]

    def test_tolerates_illegal_continuation(self):
        # conlleval-style: orphan I opens a segment
        assert extract_segments(["O", "I-X", "O"]) == [(1, 1, "X")]

    def test_dangling_b_closes_at_end(self):
        assert extract_segments(["O", "B-X"]) == [(1, 1, "X")]


class TestTagScheme:
    def test_bioes_legality(self):
        scheme = scheme_from_types(["PER", "LOC"])
        assert scheme.is_legal_transition("B-PER", "I-PER")
        assert scheme.is_legal_transition("B-PER", "E-PER")
        assert not scheme.is_legal_transition("B-PER", "I-LOC")
        assert not scheme.is_legal_transition("B-PER", "O")
        assert not scheme.is_legal_transition("O", "I-PER")
        assert scheme.is_legal_transition("S-PER", "B-LOC")
        assert scheme.is_legal_sequence(["B-PER", "I-PER", "E-PER", "O", "S-LOC"])
        assert not scheme.is_legal_sequence(["B-PER", "I-PER"])
        assert not scheme.is_legal_sequence(["I-PER", "E-PER"])

    def test_plain_scheme_everything_legal(self):
        scheme = TagScheme(("DT", "NN"), kind="plain")
        assert scheme.is_legal_sequence(["NN", "DT", "NN"])

    def test_encode_decode_round_trip(self):
        scheme = scheme_from_types(["A"])
        labs = ["O", "S-A", "B-A", "E-A"]
        assert scheme.decode(scheme.encode(labs)) == labs

    def test_unknown_label_raises(self):
        scheme = scheme_from_types(["A"])
        with pytest.raises(KeyError):
            scheme.index("S-B")

    def test_scheme_from_corpus_sorted_and_stable(self):
        sents = [Sentence(("x",), ("S-B",)), Sentence(("y",), ("O",))]
        s1 = scheme_from_corpus(sents)
        s2 = scheme_from_corpus(list(sents))
        assert s1.labels == s2.labels == ("O", "S-B")


class TestVocabulary:
    def test_ids_stable_across_builds(self):
        sents = [Sentence(("The", "cat", "sat"), ("O",) * 3)]
        v1 = Vocabulary.build(sents)
        v2 = Vocabulary.build(list(sents))
        assert v1.word_to_id == v2.word_to_id
        assert v1.char_to_id == v2.char_to_id

    def test_unknown_id_is_zero(self):
        v = Vocabulary.build([Sentence(("a",), ("O",))])
        assert v.word_id("never-seen") == 0
        assert v.word_to_id["<unk>"] == 0

    def test_normalization_policy(self):
        """Word keys are lowercased with digits collapsed; chars keep case."""
        assert normalize_word("Abc123") == "abc000"
        v = Vocabulary.build([Sentence(("Ab1",), ("O",))])
        assert v.word_id("aB9") == v.word_id("Ab1")
        assert "A" in v.char_to_id and "a" not in v.char_to_id

    def test_singleton_detection(self):
        v = Vocabulary.build([Sentence(("a", "a", "b"), ("O",) * 3)])
        assert v.is_singleton("b")
        assert not v.is_singleton("a")


class TestEmbeddings:
    def test_file_rows_copied_bit_exactly(self, tmp_path):
        rng = np.random.default_rng(42)
        dim = 4
        rows = {w: rng.standard_normal(dim) for w in ("alpha", "bravo", "cedar", "delta", "ember")}
        p = tmp_path / "vec.txt"
        with open(p, "w") as fh:
            for w, vec in rows.items():
                fh.write(w + " " + " ".join(repr(float(v)) for v in vec) + "\n")
        table = read_embeddings_file(p, dim)
        assert set(table) == set(rows)
        sents = [Sentence(tuple(rows) + ("fresh1", "fresh2", "fresh3"), ("O",) * 8)]
        vocab = Vocabulary.build(sents)
        matrix = build_embedding_matrix(vocab, dim, np.random.default_rng(0), pretrained=table)
        for w, vec in rows.items():
            np.testing.assert_array_equal(matrix[vocab.word_id(w)], vec)

    def test_absent_words_uniform_in_bound(self):
        dim = 9
        vocab = Vocabulary.build([Sentence(tuple(f"w{i}" for i in range(50)), ("O",) * 50)])
        matrix = build_embedding_matrix(vocab, dim, np.random.default_rng(42))
        bound = np.sqrt(3.0 / dim)
        assert np.all(np.abs(matrix) <= bound)
        assert np.any(np.abs(matrix) > 0.5 * bound)

    def test_dim_mismatch_raises_with_line(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("w 1.0 2.0\nv 1.0\n")
        with pytest.raises(ParseError, match="line 2"):
            read_embeddings_file(p, 2)
