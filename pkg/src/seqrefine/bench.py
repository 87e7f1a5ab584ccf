"""Decoding throughput benchmarks: the threshold mixer vs the Viterbi baseline.

Workloads are synthesized once, outside the timed region, so timings cover
decoding alone. Each number is a median over repeated passes, and the
repetition count grows automatically until one sample clears the clock's
resolution floor. Measurements run single-threaded for a fair algorithm
comparison; an optional worker pool adds a parallel-mix column, since the
mixer's per-position selections are independent.
"""

from __future__ import annotations

import csv
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .decoders import greedy_labels, threshold_mix, viterbi
from .encoder import DraftPrediction
from .evaluation import SweepResult, length_buckets
from .refiner import RefinedPrediction

DEFAULT_C_RANGE = (5, 10, 20, 40, 80)


@dataclass(frozen=True)
class BenchConfig:
    repeats: int = 5
    target_time: float = 0.02
    gamma: float = 0.35
    workers: int = 1
    scaling_length: int = 30
    scaling_sentences: int = 6

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")
        if self.target_time <= 0:
            raise ValueError(f"target_time must be > 0, got {self.target_time}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class BucketThroughput:
    lo: int
    hi: int
    sentences: int
    sentences_per_second: dict


@dataclass(frozen=True)
class ScalingPoint:
    num_labels: int
    per_token_seconds: dict


@dataclass(frozen=True)
class BenchReport:
    buckets: tuple
    scaling: tuple
    exponents: dict
    environment: dict


def environment_fingerprint() -> dict:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "machine": platform.machine(),
        "cpus": str(os.cpu_count() or 1),
    }


def _measure_seconds(fn, config: BenchConfig) -> float:
    """Median seconds per call, growing the loop count past clock resolution."""
    floor = max(config.target_time,
                1000.0 * time.get_clock_info("perf_counter").resolution)
    loops = 1
    while True:
        started = time.perf_counter()
        for _ in range(loops):
            fn()
        elapsed = time.perf_counter() - started
        if elapsed >= floor:
            break
        grow = math.ceil(loops * floor / max(elapsed, 1e-9))
        loops = max(loops * 2, grow)
    samples = []
    for _ in range(config.repeats):
        started = time.perf_counter()
        for _ in range(loops):
            fn()
        samples.append((time.perf_counter() - started) / loops)
    return float(np.median(samples))


@dataclass(frozen=True)
class _Workload:
    emissions: np.ndarray
    transitions: np.ndarray
    probs: np.ndarray
    draft: DraftPrediction
    refined: RefinedPrediction


def _make_workloads(lengths, num_labels: int, rng) -> list:
    transitions = rng.standard_normal((num_labels + 2, num_labels + 2))
    out = []
    ceiling = math.log(num_labels) if num_labels > 1 else 1.0
    for n in lengths:
        emissions = rng.standard_normal((n, num_labels))
        shifted = np.exp(emissions - emissions.max(axis=1, keepdims=True))
        probs = shifted / shifted.sum(axis=1, keepdims=True)
        draft = DraftPrediction(
            probs=probs,
            labels=np.argmax(probs, axis=1),
            uncertainty=rng.uniform(0.0, ceiling, n),
        )
        refined = RefinedPrediction(
            probs=probs,
            labels=rng.integers(0, num_labels, n),
        )
        out.append(_Workload(emissions=emissions, transitions=transitions,
                             probs=probs, draft=draft, refined=refined))
    return out


def _decoder_passes(workloads, gamma: float):
    """Callables that decode the whole workload list once, by decoder name."""
    return {
        "softmax": lambda: [greedy_labels(w.probs) for w in workloads],
        "viterbi": lambda: [viterbi(w.emissions, w.transitions) for w in workloads],
        "mix": lambda: [threshold_mix(w.draft, w.refined, gamma) for w in workloads],
    }


def _parallel_mix_pass(workloads, gamma: float, pool: ThreadPoolExecutor):
    def run():
        list(pool.map(lambda w: threshold_mix(w.draft, w.refined, gamma), workloads))
    return run


def fit_exponent(c_values, times) -> float:
    """Log-log slope of time against label-set size."""
    if len(c_values) < 2:
        raise ValueError("exponent fit needs at least two label-set sizes")
    return float(np.polyfit(np.log(np.asarray(c_values, dtype=float)),
                            np.log(np.asarray(times, dtype=float)), 1)[0])


def decode_throughput(lengths, num_labels: int, c_range=DEFAULT_C_RANGE,
                      rng=None, config: BenchConfig = BenchConfig()) -> BenchReport:
    """Bucketed sentences/second per decoder plus the time-vs-C scaling study."""
    environment = environment_fingerprint()
    lengths = list(lengths)
    if not lengths:
        return BenchReport(buckets=(), scaling=(), exponents={}, environment=environment)
    if rng is None:
        rng = np.random.default_rng(0)
    workloads = _make_workloads(lengths, num_labels, rng)
    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        buckets = []
        for lo, hi in length_buckets(lengths):
            subset = [w for w in workloads if lo <= w.emissions.shape[0] <= hi]
            passes = _decoder_passes(subset, config.gamma)
            if pool is not None:
                passes[f"mix@{config.workers}w"] = _parallel_mix_pass(
                    subset, config.gamma, pool)
            for fn in passes.values():
                fn()  # warmup
            rates = {name: len(subset) / _measure_seconds(fn, config)
                     for name, fn in passes.items()}
            buckets.append(BucketThroughput(lo=lo, hi=hi, sentences=len(subset),
                                            sentences_per_second=rates))

        scaling = []
        times = {name: [] for name in ("softmax", "viterbi", "mix")}
        tokens = config.scaling_length * config.scaling_sentences
        for c in c_range:
            study = _make_workloads([config.scaling_length] * config.scaling_sentences,
                                    c, rng)
            passes = _decoder_passes(study, config.gamma)
            per_token = {}
            for name, fn in passes.items():
                fn()  # warmup
                per_token[name] = _measure_seconds(fn, config) / tokens
                times[name].append(per_token[name])
            scaling.append(ScalingPoint(num_labels=c, per_token_seconds=per_token))
        exponents = {}
        if len(c_range) >= 2:
            exponents = {name: fit_exponent(c_range, series)
                         for name, series in times.items()}
    finally:
        if pool is not None:
            pool.shutdown()
    return BenchReport(buckets=tuple(buckets), scaling=tuple(scaling),
                       exponents=exponents, environment=environment)


# ---------------------------------------------------------------------------
# report output


def write_bench_csv(report: BenchReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["section", "key", "decoder", "value"])
        for bucket in report.buckets:
            span = f"{bucket.lo}-{bucket.hi}"
            for name in sorted(bucket.sentences_per_second):
                writer.writerow(["throughput", span, name,
                                 f"{bucket.sentences_per_second[name]:.6g}"])
        for point in report.scaling:
            for name in sorted(point.per_token_seconds):
                writer.writerow(["scaling", point.num_labels, name,
                                 f"{point.per_token_seconds[name]:.6g}"])
        for name in sorted(report.exponents):
            writer.writerow(["exponent", "", name, f"{report.exponents[name]:.4f}"])
        for key in sorted(report.environment):
            writer.writerow(["environment", key, "", report.environment[key]])


def format_bench_report(report: BenchReport) -> str:
    lines = []
    for bucket in report.buckets:
        rates = "  ".join(f"{name}={bucket.sentences_per_second[name]:.1f}/s"
                          for name in sorted(bucket.sentences_per_second))
        lines.append(f"length {bucket.lo:>3}-{bucket.hi:<3} "
                     f"sentences={bucket.sentences:<4} {rates}")
    for point in report.scaling:
        times = "  ".join(f"{name}={point.per_token_seconds[name]:.3e}s"
                          for name in sorted(point.per_token_seconds))
        lines.append(f"C={point.num_labels:<3} per-token {times}")
    for name in sorted(report.exponents):
        lines.append(f"exponent {name} {report.exponents[name]:.3f}")
    for key in sorted(report.environment):
        lines.append(f"env {key} {report.environment[key]}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# svg plotting (no plotting dependency; straight polyline charts)

_PALETTE = ("#1f6fb2", "#c23b22", "#2e8b57", "#8a2be2", "#b8860b")


def _svg_chart(series, path, title, x_label, y_label, log_log=False) -> None:
    """``series`` is a list of (name, xs, ys) triples."""
    width, height = 480, 320
    left, right, top, bottom = 64, 16, 28, 44
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if log_log:
        xs_all = [math.log10(x) for x in xs_all]
        ys_all = [math.log10(y) for y in ys_all]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def place(x, y):
        if log_log:
            x, y = math.log10(x), math.log10(y)
        px = left + (x - x_lo) / x_span * (width - left - right)
        py = height - bottom - (y - y_lo) / y_span * (height - top - bottom)
        return px, py

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="16" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" '
        f'y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="11">{x_label}</text>',
        f'<text x="14" y="{height / 2}" font-size="11" '
        f'transform="rotate(-90 14 {height / 2})" text-anchor="middle">{y_label}</text>',
    ]
    for i, (name, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join("{:.1f},{:.1f}".format(*place(x, y)) for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - right - 4}" y="{top + 14 * (i + 1)}" '
                     f'text-anchor="end" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(parts) + "\n")


def render_scaling_svg(report: BenchReport, path) -> None:
    """Log-log per-token decode time against label-set size."""
    if not report.scaling:
        raise ValueError("report has no scaling points to plot")
    c_values = [p.num_labels for p in report.scaling]
    series = []
    for name in sorted(report.scaling[0].per_token_seconds):
        series.append((name, c_values,
                       [p.per_token_seconds[name] for p in report.scaling]))
    _svg_chart(series, path, "per-token decode time vs label count",
               "labels (log)", "seconds (log)", log_log=True)


def render_sweep_svg(sweep: SweepResult, path) -> None:
    """Span F1 across the threshold grid."""
    gammas = [p.gamma for p in sweep.points]
    f1s = [p.f1 for p in sweep.points]
    _svg_chart([("span F1", gammas, f1s)], path,
               "dev F1 against mixing threshold", "threshold (nats)", "span F1")
