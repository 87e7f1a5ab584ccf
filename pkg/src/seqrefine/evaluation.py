"""Span-level evaluation, uncertainty diagnostics, and threshold sweeps.

Scoring follows the conlleval convention: a predicted segment counts only
when its type and both boundaries match a gold segment exactly. Everything
here is pure bookkeeping over label strings; nothing touches the models.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import TagScheme, extract_segments
from .decoders import threshold_mix


@dataclass(frozen=True)
class BucketScore:
    """Span F1 over the sentences whose length falls in [lo, hi]."""

    lo: int
    hi: int
    sentences: int
    f1: float | None


@dataclass(frozen=True)
class UncertaintyAudit:
    """What refinement did to the draft labels, split by draft correctness.

    Mean uncertainties are None when their token class is empty. Changed
    positions partition into the three flip kinds, and flips plus unchanged
    positions account for every token.
    """

    mean_u_correct: float | None
    mean_u_incorrect: float | None
    correct_to_wrong: int
    wrong_to_correct: int
    wrong_to_wrong: int
    unchanged: int
    total: int

    @property
    def changed(self) -> int:
        return self.correct_to_wrong + self.wrong_to_correct + self.wrong_to_wrong

    @property
    def uncertainty_ratio(self) -> float | None:
        """mean u(draft-incorrect) / mean u(draft-correct), when defined."""
        if not self.mean_u_correct or self.mean_u_incorrect is None:
            return None
        return self.mean_u_incorrect / self.mean_u_correct


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    token_accuracy: float
    correct_segments: int
    predicted_segments: int
    gold_segments: int
    buckets: tuple[BucketScore, ...]
    confusion: dict
    audit: UncertaintyAudit | None = None


@dataclass(frozen=True)
class SweepPoint:
    gamma: float
    f1: float
    delta: float


@dataclass(frozen=True)
class SweepResult:
    """F1 across the threshold grid, with deltas relative to the first point."""

    points: tuple[SweepPoint, ...]
    best_gamma: float
    best_f1: float


def _prf(correct: int, predicted: int, gold: int):
    if predicted == 0 and gold == 0:
        # nothing to find and nothing claimed: vacuously perfect
        return 1.0, 1.0, 1.0
    precision = correct / predicted if predicted > 0 else 0.0
    recall = correct / gold if gold > 0 else 0.0
    if precision + recall > 0:
        return precision, recall, 2 * precision * recall / (precision + recall)
    return precision, recall, 0.0


def length_buckets(lengths, count: int = 5):
    """Inclusive (lo, hi) length ranges splitting the corpus near-evenly.

    Duplicate boundaries collapse, so fewer than ``count`` buckets come back
    when the corpus has too few distinct lengths.
    """
    if len(lengths) == 0:
        return []
    ordered = sorted(lengths)
    n = len(ordered)
    highs = []
    for b in range(1, count + 1):
        hi = ordered[min(n, math.ceil(b * n / count)) - 1]
        if not highs or hi > highs[-1]:
            highs.append(hi)
    lo = ordered[0]
    out = []
    for hi in highs:
        out.append((lo, hi))
        lo = hi + 1
    return out


def _segment_counts(gold_labels, pred_labels, positions=None):
    gold_segments = extract_segments(gold_labels)
    pred_segments = extract_segments(pred_labels)
    if positions is not None:
        keep = set(positions)
        gold_segments = [s for s in gold_segments if s[0] in keep]
        pred_segments = [s for s in pred_segments if s[0] in keep]
    correct = len(set(gold_segments) & set(pred_segments))
    return correct, len(pred_segments), len(gold_segments)


def span_f1(golds, preds, uncertainties=None, drafts=None) -> EvalReport:
    """Exact-match span scores of predicted label sequences against gold.

    ``golds`` and ``preds`` are aligned lists of label-string sequences.
    Passing per-token ``uncertainties`` and draft labels additionally fills
    the refinement audit.
    """
    if len(golds) != len(preds):
        raise ValueError(f"{len(golds)} gold sentences vs {len(preds)} predicted")
    correct = predicted = gold_total = 0
    token_hits = token_total = 0
    confusion: dict = {}
    per_sentence = []
    for idx, (gold, pred) in enumerate(zip(golds, preds)):
        gold = list(gold)
        pred = list(pred)
        if len(gold) != len(pred):
            raise ValueError(
                f"sentence {idx}: {len(gold)} gold labels vs {len(pred)} predicted"
            )
        c, p, g = _segment_counts(gold, pred)
        per_sentence.append((len(gold), c, p, g))
        correct += c
        predicted += p
        gold_total += g
        token_total += len(gold)
        for a, b in zip(gold, pred):
            token_hits += a == b
            confusion[(a, b)] = confusion.get((a, b), 0) + 1

    buckets = []
    for lo, hi in length_buckets([row[0] for row in per_sentence]):
        rows = [row for row in per_sentence if lo <= row[0] <= hi]
        if rows:
            _, _, f1 = _prf(sum(r[1] for r in rows), sum(r[2] for r in rows),
                            sum(r[3] for r in rows))
        else:
            f1 = None
        buckets.append(BucketScore(lo=lo, hi=hi, sentences=len(rows), f1=f1))

    precision, recall, f1 = _prf(correct, predicted, gold_total)
    audit = None
    if uncertainties is not None and drafts is not None:
        audit = uncertainty_audit(drafts, uncertainties, preds, golds)
    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        token_accuracy=token_hits / token_total if token_total else 1.0,
        correct_segments=correct,
        predicted_segments=predicted,
        gold_segments=gold_total,
        buckets=tuple(buckets),
        confusion=confusion,
        audit=audit,
    )


def span_f1_at_positions(golds, preds, position_sets) -> float:
    """Span F1 restricted to segments starting at the given positions."""
    if not (len(golds) == len(preds) == len(position_sets)):
        raise ValueError("golds, preds, and position sets must align")
    correct = predicted = gold_total = 0
    for gold, pred, positions in zip(golds, preds, position_sets):
        c, p, g = _segment_counts(list(gold), list(pred), positions)
        correct += c
        predicted += p
        gold_total += g
    return _prf(correct, predicted, gold_total)[2]


def uncertainty_audit(drafts, uncertainties, finals, golds) -> UncertaintyAudit:
    """Flip bookkeeping between draft and final labels against gold.

    All four arguments are aligned per-sentence sequences; labels compare
    by equality, so ids and strings both work as long as drafts and finals
    use the same coding.
    """
    u_correct, u_incorrect = [], []
    c2w = w2c = w2w = unchanged = total = 0
    for draft, u_values, final, gold in zip(drafts, uncertainties, finals, golds):
        draft = list(draft)
        final = list(final)
        gold = list(gold)
        u_values = list(u_values)
        if not (len(draft) == len(final) == len(gold) == len(u_values)):
            raise ValueError("audit inputs must align per token")
        for d, u, f, g in zip(draft, u_values, final, gold):
            total += 1
            (u_correct if d == g else u_incorrect).append(u)
            if f == d:
                unchanged += 1
            elif d == g:
                c2w += 1
            elif f == g:
                w2c += 1
            else:
                w2w += 1
    return UncertaintyAudit(
        mean_u_correct=float(np.mean(u_correct)) if u_correct else None,
        mean_u_incorrect=float(np.mean(u_incorrect)) if u_incorrect else None,
        correct_to_wrong=c2w,
        wrong_to_correct=w2c,
        wrong_to_wrong=w2w,
        unchanged=unchanged,
        total=total,
    )


def default_gamma_grid(num_labels: int, step: float = 0.05) -> np.ndarray:
    """0, step, 2*step, ... capped with ln C (the entropy ceiling) itself."""
    ceiling = math.log(num_labels)
    grid = list(np.arange(0.0, ceiling, step))
    grid.append(ceiling)
    return np.array(grid)


def gamma_sweep(drafts, refineds, golds, scheme: TagScheme, grid=None) -> SweepResult:
    """Mixed-decode span F1 across a threshold grid on cached predictions.

    ``drafts`` and ``refineds`` are per-sentence prediction objects from the
    two stages; nothing is recomputed, only the mixing threshold varies.
    Ties on F1 resolve toward the smallest threshold.
    """
    if grid is None:
        grid = default_gamma_grid(scheme.size)
    gold_names = [list(g) for g in golds]
    points = []
    for gamma in grid:
        mixed = [
            scheme.decode(threshold_mix(d, r, float(gamma)).labels)
            for d, r in zip(drafts, refineds)
        ]
        points.append((float(gamma), span_f1(gold_names, mixed).f1))
    base = points[0][1]
    best_gamma, best_f1 = points[0]
    for gamma, f1 in points[1:]:
        if f1 > best_f1:
            best_gamma, best_f1 = gamma, f1
    return SweepResult(
        points=tuple(SweepPoint(gamma=g, f1=f, delta=f - base) for g, f in points),
        best_gamma=best_gamma,
        best_f1=best_f1,
    )


def format_eval_report(report: EvalReport) -> str:
    """Plain-text summary, one finding per line."""
    lines = [
        f"precision {report.precision:.4f}",
        f"recall    {report.recall:.4f}",
        f"f1        {report.f1:.4f}",
        f"token_acc {report.token_accuracy:.4f}",
        f"segments  correct={report.correct_segments} "
        f"predicted={report.predicted_segments} gold={report.gold_segments}",
    ]
    for bucket in report.buckets:
        shown = "n/a" if bucket.f1 is None else f"{bucket.f1:.4f}"
        lines.append(f"length {bucket.lo:>3}-{bucket.hi:<3} sentences={bucket.sentences:<4} f1={shown}")
    if report.audit is not None:
        audit = report.audit
        mean_c = "n/a" if audit.mean_u_correct is None else f"{audit.mean_u_correct:.4f}"
        mean_i = "n/a" if audit.mean_u_incorrect is None else f"{audit.mean_u_incorrect:.4f}"
        lines.append(f"uncertainty mean: draft-correct={mean_c} draft-incorrect={mean_i}")
        lines.append(
            f"flips: correct->wrong={audit.correct_to_wrong} "
            f"wrong->correct={audit.wrong_to_correct} "
            f"wrong->wrong={audit.wrong_to_wrong} unchanged={audit.unchanged}"
        )
    return "\n".join(lines) + "\n"


def write_eval_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["section", "key", "value"])
        for key in ("precision", "recall", "f1", "token_accuracy"):
            writer.writerow(["overall", key, f"{getattr(report, key):.6f}"])
        for key in ("correct_segments", "predicted_segments", "gold_segments"):
            writer.writerow(["overall", key, getattr(report, key)])
        for bucket in report.buckets:
            shown = "" if bucket.f1 is None else f"{bucket.f1:.6f}"
            writer.writerow(["bucket", f"{bucket.lo}-{bucket.hi}", shown])
        if report.audit is not None:
            audit = report.audit
            for key in ("correct_to_wrong", "wrong_to_correct",
                        "wrong_to_wrong", "unchanged"):
                writer.writerow(["flips", key, getattr(audit, key)])
            for key in ("mean_u_correct", "mean_u_incorrect"):
                value = getattr(audit, key)
                writer.writerow(["uncertainty", key,
                                 "" if value is None else f"{value:.6f}"])


def write_sweep_csv(sweep: SweepResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["gamma", "f1", "delta_vs_all_refined"])
        for point in sweep.points:
            writer.writerow([f"{point.gamma:.6f}", f"{point.f1:.6f}",
                             f"{point.delta:.6f}"])
        writer.writerow([])
        writer.writerow([f"best_gamma={sweep.best_gamma:.6f}",
                         f"best_f1={sweep.best_f1:.6f}", ""])
