"""Tests for span scoring, the refinement audit, and the threshold sweep."""

import numpy as np
import pytest

from seqrefine.data import scheme_from_types
from seqrefine.encoder import DraftPrediction
from seqrefine.evaluation import (
    default_gamma_grid,
    format_eval_report,
    gamma_sweep,
    length_buckets,
    span_f1,
    span_f1_at_positions,
    uncertainty_audit,
)
from seqrefine.refiner import RefinedPrediction

# Ten sentences with a hand-tallied segment table:
#   gold segments 11, predicted 10, correct 6
#   token hits 16 of 24
FIXTURE = [
    (["B-A", "E-A", "O"], ["B-A", "E-A", "O"]),
    (["S-A", "O"], ["O", "O"]),
    (["O", "O"], ["S-B", "O"]),
    (["B-A", "I-A", "E-A"], ["B-A", "E-A", "O"]),
    (["B-B", "E-B"], ["B-A", "E-A"]),
    (["S-A", "S-B"], ["S-A", "S-B"]),
    (["O"], ["O"]),
    (["B-A", "E-A", "S-B"], ["B-A", "E-A", "O"]),
    (["O", "S-A", "O", "B-B", "E-B"], ["O", "S-A", "O", "B-B", "E-B"]),
    (["S-A"], ["S-B"]),
]


def draft_of(labels, uncertainty):
    labels = np.asarray(labels)
    return DraftPrediction(probs=np.full((len(labels), 2), 0.5), labels=labels,
                           uncertainty=np.asarray(uncertainty, dtype=np.float64))


def refined_of(labels):
    labels = np.asarray(labels)
    return RefinedPrediction(probs=np.full((len(labels), 2), 0.5), labels=labels)


class TestSpanF1:
    def test_identical_sequences_score_one(self):
        golds = [g for g, _ in FIXTURE]
        report = span_f1(golds, golds)
        assert report.precision == report.recall == report.f1 == 1.0
        assert report.token_accuracy == 1.0

    def test_hand_tallied_fixture(self):
        golds = [g for g, _ in FIXTURE]
        preds = [p for _, p in FIXTURE]
        report = span_f1(golds, preds)
        assert report.correct_segments == 6
        assert report.predicted_segments == 10
        assert report.gold_segments == 11
        assert report.precision == pytest.approx(0.6)
        assert report.recall == pytest.approx(6 / 11)
        assert report.f1 == pytest.approx(4 / 7)
        assert report.token_accuracy == pytest.approx(16 / 24)

    def test_confusion_counts(self):
        golds = [g for g, _ in FIXTURE]
        preds = [p for _, p in FIXTURE]
        confusion = span_f1(golds, preds).confusion
        assert confusion[("S-A", "O")] == 1
        assert confusion[("O", "S-B")] == 1
        assert confusion[("I-A", "E-A")] == 1
        assert sum(confusion.values()) == 24

    def test_no_predictions_with_gold_present(self):
        report = span_f1([["S-A", "O"]], [["O", "O"]])
        assert report.precision == 0.0
        assert report.recall == 0.0
        assert report.f1 == 0.0

    def test_empty_corpus_is_vacuously_perfect(self):
        report = span_f1([], [])
        assert report.f1 == 1.0
        assert report.token_accuracy == 1.0
        assert report.buckets == ()

    def test_all_outside_self_score_is_one(self):
        report = span_f1([["O", "O"]], [["O", "O"]])
        assert report.f1 == 1.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            span_f1([["O"]], [["O"], ["O"]])
        with pytest.raises(ValueError):
            span_f1([["O", "O"]], [["O"]])

    def test_bucket_sentence_counts_cover_corpus(self):
        golds = [g for g, _ in FIXTURE]
        preds = [p for _, p in FIXTURE]
        report = span_f1(golds, preds)
        assert sum(b.sentences for b in report.buckets) == len(FIXTURE)
        assert 1 <= len(report.buckets) <= 5
        for bucket in report.buckets:
            assert bucket.f1 is None or 0.0 <= bucket.f1 <= 1.0


class TestLengthBuckets:
    def test_even_split(self):
        assert length_buckets(list(range(1, 11))) == [
            (1, 2), (3, 4), (5, 6), (7, 8), (9, 10)]

    def test_duplicate_boundaries_merge(self):
        assert length_buckets([4, 4, 4, 4]) == [(4, 4)]

    def test_empty(self):
        assert length_buckets([]) == []


class TestSpanF1AtPositions:
    def test_restriction_ignores_outside_segments(self):
        gold = [["S-A", "O", "B-A", "E-A"]]
        pred = [["S-A", "O", "O", "O"]]
        assert span_f1_at_positions(gold, pred, [{0}]) == 1.0
        assert span_f1(gold, pred).f1 < 1.0

    def test_restriction_catches_anchored_mistakes(self):
        gold = [["S-A", "O"]]
        pred = [["O", "O"]]
        assert span_f1_at_positions(gold, pred, [{0}]) == 0.0


class TestUncertaintyAudit:
    def test_hand_worked_flips(self):
        audit = uncertainty_audit(
            drafts=[[0, 1, 0, 1, 0]],
            uncertainties=[[0.1, 0.9, 0.8, 0.7, 0.3]],
            finals=[[0, 2, 2, 2, 0]],
            golds=[[0, 1, 2, 0, 1]],
        )
        assert audit.mean_u_correct == pytest.approx(0.5)
        assert audit.mean_u_incorrect == pytest.approx(0.6)
        assert audit.correct_to_wrong == 1
        assert audit.wrong_to_correct == 1
        assert audit.wrong_to_wrong == 1
        assert audit.unchanged == 2
        assert audit.total == 5
        assert audit.changed == 3
        assert audit.uncertainty_ratio == pytest.approx(1.2)

    def test_conservation(self):
        rng = np.random.default_rng(0)
        drafts = [rng.integers(0, 4, 9)]
        finals = [rng.integers(0, 4, 9)]
        golds = [rng.integers(0, 4, 9)]
        audit = uncertainty_audit(drafts, [rng.uniform(0, 1, 9)], finals, golds)
        assert audit.changed + audit.unchanged == audit.total == 9
        assert audit.changed == int(np.sum(drafts[0] != finals[0]))

    def test_all_drafts_correct_reports_absent_mean(self):
        audit = uncertainty_audit([[1, 2]], [[0.4, 0.2]], [[1, 2]], [[1, 2]])
        assert audit.mean_u_incorrect is None
        assert audit.uncertainty_ratio is None

    def test_identical_final_means_zero_flips(self):
        draft = [2, 0, 1]
        audit = uncertainty_audit([draft], [[0.5, 9.0, 2.0]], [draft], [[2, 1, 1]])
        assert audit.changed == 0
        assert audit.unchanged == 3

    def test_misaligned_inputs_rejected(self):
        with pytest.raises(ValueError):
            uncertainty_audit([[0, 1]], [[0.5]], [[0, 1]], [[0, 1]])


class TestGammaSweep:
    def make_pair(self):
        scheme = scheme_from_types(["A"])
        sa, o = scheme.index("S-A"), scheme.index("O")
        golds = [["S-A", "O"], ["O"]]
        drafts = [draft_of([o, o], [1.0, 0.1]), draft_of([o], [0.05])]
        refineds = [refined_of([sa, sa]), refined_of([sa])]
        return scheme, golds, drafts, refineds

    def test_interior_optimum(self):
        scheme, golds, drafts, refineds = self.make_pair()
        result = gamma_sweep(drafts, refineds, golds, scheme,
                             grid=[0.0, 0.5, np.log(scheme.size)])
        f1s = [p.f1 for p in result.points]
        assert f1s == pytest.approx([0.5, 1.0, 0.0])
        assert result.best_gamma == pytest.approx(0.5)
        assert result.best_f1 == pytest.approx(1.0)
        assert [p.delta for p in result.points] == pytest.approx([0.0, 0.5, -0.5])

    def test_endpoints_match_pure_strategies(self):
        scheme, golds, drafts, refineds = self.make_pair()
        result = gamma_sweep(drafts, refineds, golds, scheme)
        refined_only = span_f1(golds, [scheme.decode(r.labels) for r in refineds]).f1
        draft_only = span_f1(golds, [scheme.decode(d.labels) for d in drafts]).f1
        assert result.points[0].gamma == 0.0
        assert result.points[0].f1 == pytest.approx(refined_only)
        assert result.points[-1].gamma == pytest.approx(np.log(scheme.size))
        assert result.points[-1].f1 == pytest.approx(draft_only)

    def test_default_grid_shape(self):
        grid = default_gamma_grid(5)
        assert grid[0] == 0.0
        assert grid[-1] == pytest.approx(np.log(5))
        steps = np.diff(grid)
        assert np.all(steps > 0)
        assert np.allclose(steps[:-1], 0.05)


class TestFormatting:
    def test_report_text_mentions_core_numbers(self):
        golds = [g for g, _ in FIXTURE]
        preds = [p for _, p in FIXTURE]
        text = format_eval_report(span_f1(golds, preds))
        assert "f1        0.5714" in text
        assert "token_acc 0.6667" in text

    def test_report_text_includes_audit_when_present(self):
        report = span_f1([["S-A"]], [["O"]], uncertainties=[[0.7]], drafts=[["O"]])
        text = format_eval_report(report)
        assert "flips:" in text
