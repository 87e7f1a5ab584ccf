"""Command-line entry point for the two-stage tagging system.

Subcommands cover the whole workflow: synth writes a deterministic corpus,
train fits and checkpoints the model pair, predict and eval run a decoder
over a column-format file, sweep retunes the mixing threshold, and bench
times the decoders. Every run writes a resolved-config snapshot into the
output directory; that file plus the seed pins every artifact byte. Logs go
to stderr only, with the level taken from ``SEQREFINE_LOG``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bench import (
    BenchConfig,
    decode_throughput,
    format_bench_report,
    render_scaling_svg,
    render_sweep_svg,
    write_bench_csv,
)
from .config import ConfigError, apply_overrides, load_config, write_snapshot
from .data import read_conll, write_conll, write_predictions
from .decoders import DECODE_MODES, DecodeConfig
from .encoder import EncoderConfig
from .evaluation import format_eval_report, gamma_sweep, span_f1, write_eval_csv, write_sweep_csv
from .inference import predict_sentences
from .refiner import RefinerConfig
from .synthetic import SyntheticSpec, generate_splits
from .training import (
    TrainConfig,
    encode_corpus,
    fit_crf_transitions,
    load_model,
    make_drafts,
    save_model,
    train,
)

LOG = logging.getLogger("seqrefine")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class MissingInput(Exception):
    """A required input artifact is absent; treated as a config-class error."""


def _parse(argv):
    parser = argparse.ArgumentParser(
        prog="seqrefine",
        description="Uncertainty-gated two-stage sequence labeling.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, text in (
        ("synth", "write a deterministic synthetic corpus"),
        ("train", "fit the draft encoder and the refiner, then checkpoint"),
        ("predict", "label a corpus with a trained checkpoint"),
        ("eval", "predict and score against gold labels"),
        ("sweep", "rescan the mixing threshold on cached predictions"),
        ("bench", "time the decoders on synthetic workloads"),
    ):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--config", default=None, help="JSON config file")
        cmd.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config key (dotted path)")
        cmd.add_argument("--out", default="out", help="output directory")
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--workers", type=int, default=None)
        cmd.add_argument("--decoder", choices=DECODE_MODES, default=None)
        cmd.add_argument("--gamma", type=float, default=None)
        cmd.add_argument("--samples", type=int, default=None)
        cmd.add_argument("--legalize", action="store_true")
    return parser.parse_args(argv)


def _fold_flags(config, args):
    """Flags win over file values so the snapshot reflects the actual run."""
    if args.seed is not None:
        config["seed"] = args.seed
    if args.workers is not None:
        config["workers"] = args.workers
    if args.decoder is not None:
        config["decode"]["mode"] = args.decoder
    if args.gamma is not None:
        config["decode"]["gamma"] = args.gamma
    if args.samples is not None:
        config["decode"]["samples"] = args.samples
        config["train"]["samples"] = args.samples
    if args.legalize:
        config["decode"]["legalize"] = True


def _required_file(value, key) -> Path:
    if not value:
        raise MissingInput(f"config key '{key}' is not set")
    path = Path(value)
    if not path.exists():
        raise MissingInput(f"{key} file not found: {path}")
    return path


def _checkpoint_path(config, out: Path) -> Path:
    value = config["paths"]["checkpoint"]
    return Path(value) if value else out / "model.json"


def _load_checkpoint(config, out: Path):
    path = _checkpoint_path(config, out)
    if not path.exists():
        raise MissingInput(f"checkpoint not found: {path}")
    return load_model(path)


def _synth_spec(config) -> SyntheticSpec:
    synth = config["synth"]
    return SyntheticSpec(
        num_types=synth["num_types"], vocab_size=synth["vocab_size"],
        min_length=synth["min_length"], max_length=synth["max_length"],
        constraint_rules=tuple(tuple(r) for r in synth["constraint_rules"]),
        ambiguous_mention_prob=synth["ambiguous_mention_prob"],
        seed=config["seed"])


def _decode_config(config, fallback_gamma: float) -> DecodeConfig:
    decode = config["decode"]
    gamma = decode["gamma"] if decode["gamma"] is not None else fallback_gamma
    return DecodeConfig(mode=decode["mode"], gamma=gamma,
                        samples=decode["samples"], legalize=decode["legalize"])


def _labeled_corpus(path: Path, key: str):
    sentences = read_conll(path)
    if any(s.labels is None for s in sentences):
        raise MissingInput(f"{key} file {path} lacks gold labels")
    return sentences


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(config, out: Path) -> None:
    spec = _synth_spec(config)
    splits = generate_splits(spec, dict(config["synth"]["sizes"]))
    for name, (sentences, sites) in splits.items():
        corpus_path = out / f"{name}.conll"
        write_conll(corpus_path, sentences)
        with open(out / f"{name}.sites.json", "w", encoding="utf-8") as handle:
            json.dump([{"evidence": [int(p) for p in site.evidence],
                        "dependent": [int(p) for p in site.dependent]}
                       for site in sites], handle)
            handle.write("\n")
        LOG.info("synth: %d sentences -> %s", len(sentences), corpus_path)


def cmd_train(config, out: Path) -> None:
    train_sentences = _labeled_corpus(
        _required_file(config["data"]["train"], "data.train"), "data.train")
    dev_sentences = _labeled_corpus(
        _required_file(config["data"]["dev"], "data.dev"), "data.dev")
    train_config = TrainConfig(seed=config["seed"], **config["train"])
    encoder_config = EncoderConfig(**config["encoder"])
    refiner_config = RefinerConfig(model_dim=encoder_config.input_dim,
                                   **config["refiner"])

    def log_epoch(record):
        LOG.info("epoch %(phase)s/%(epoch)d loss=%(loss).4f "
                 "dev=%(dev_metric)s lr=%(learning_rate).5f "
                 "%(seconds).1fs", record)

    result = train(train_config, encoder_config, refiner_config,
                   train_sentences, dev_sentences, log=log_epoch)
    crf = None
    if config["decode"]["mode"] == "crf":
        examples = encode_corpus(train_sentences, result.vocab, result.scheme)
        crf = fit_crf_transitions(
            result.encoder, examples, result.scheme,
            epochs=config["crf"]["epochs"], lr=config["crf"]["lr"],
            seed=config["seed"], legalize=config["decode"]["legalize"])
    gamma = config["decode"]["gamma"]
    gamma = result.gamma if gamma is None else float(gamma)
    checkpoint = _checkpoint_path(config, out)
    checkpoint.parent.mkdir(parents=True, exist_ok=True)
    save_model(checkpoint, result, extra_metadata={"gamma": gamma}, crf=crf)

    write_sweep_csv(result.sweep, out / "sweep.csv")
    render_sweep_svg(result.sweep, out / "sweep.svg")
    with open(out / "history.csv", "w", encoding="utf-8") as handle:
        handle.write("phase,epoch,loss,dev_metric,learning_rate\n")
        for record in result.history:
            dev = "" if record.dev_metric is None else f"{record.dev_metric:.6f}"
            handle.write(f"{record.phase},{record.epoch},{record.loss:.6f},"
                         f"{dev},{record.learning_rate:.6f}\n")
    LOG.info("train: dev F1 draft=%.4f refined=%.4f mixed=%.4f gamma=%.2f -> %s",
             result.dev_f1_draft, result.dev_f1_refined, result.dev_f1_mixed,
             gamma, checkpoint)


def _predict_split(config, out: Path, key: str = "test"):
    model = _load_checkpoint(config, out)
    path = _required_file(config["data"][key], f"data.{key}")
    sentences = read_conll(path)
    decode = _decode_config(config, model.gamma)
    predictions = predict_sentences(
        model.encoder, model.refiner, model.vocab, model.scheme, sentences,
        decode, crf=model.crf, seed=config["seed"], workers=config["workers"])
    write_predictions(out / "predictions.conll", sentences,
                      [p.labels for p in predictions],
                      [p.uncertainty for p in predictions],
                      [p.sources for p in predictions])
    return model, sentences, predictions, decode


def cmd_predict(config, out: Path) -> None:
    _, sentences, _, decode = _predict_split(config, out)
    LOG.info("predict: %d sentences decoded with %s -> %s",
             len(sentences), decode.mode, out / "predictions.conll")


def cmd_eval(config, out: Path) -> None:
    _, sentences, predictions, decode = _predict_split(config, out)
    if any(s.labels is None for s in sentences):
        raise MissingInput(f"data.test file {config['data']['test']} lacks gold labels")
    golds = [list(s.labels) for s in sentences]
    report = span_f1(golds, [list(p.labels) for p in predictions],
                     uncertainties=[p.uncertainty for p in predictions],
                     drafts=[list(p.draft_labels) for p in predictions])
    with open(out / "eval.txt", "w", encoding="utf-8") as handle:
        handle.write(format_eval_report(report))
    write_eval_csv(report, out / "eval.csv")
    LOG.info("eval: %s F1=%.4f (P=%.4f R=%.4f) -> %s",
             decode.mode, report.f1, report.precision, report.recall, out / "eval.txt")


def cmd_sweep(config, out: Path) -> None:
    model = _load_checkpoint(config, out)
    split = config["sweep"]["split"]
    if split not in config["data"]:
        raise ConfigError(f"unknown config key 'sweep.split' value {split!r}")
    sentences = _labeled_corpus(
        _required_file(config["data"][split], f"data.{split}"), f"data.{split}")
    examples = encode_corpus(sentences, model.vocab, model.scheme)
    drafts = make_drafts(model.encoder, examples, config["decode"]["samples"],
                         np.random.default_rng(config["seed"]))
    refineds = [model.refiner.predict_refined(d.word_repr, d.draft.labels)
                for d in drafts]
    golds = [model.scheme.decode(d.gold) for d in drafts]
    sweep = gamma_sweep([d.draft for d in drafts], refineds, golds, model.scheme)
    write_sweep_csv(sweep, out / "sweep.csv")
    render_sweep_svg(sweep, out / "sweep.svg")
    LOG.info("sweep: best gamma=%.4f F1=%.4f over %d points on %s -> %s",
             sweep.best_gamma, sweep.best_f1, len(sweep.points), split,
             out / "sweep.csv")


def cmd_bench(config, out: Path) -> None:
    bench = config["bench"]
    rng = np.random.default_rng(config["seed"])
    lengths = rng.integers(bench["min_length"], bench["max_length"] + 1,
                           bench["sentences"]).tolist()
    gamma = config["decode"]["gamma"]
    bench_config = BenchConfig(
        repeats=bench["repeats"], target_time=bench["target_time"],
        gamma=0.35 if gamma is None else float(gamma),
        workers=config["workers"])
    report = decode_throughput(lengths, bench["num_labels"],
                               tuple(bench["c_range"]), rng, bench_config)
    write_bench_csv(report, out / "bench.csv")
    with open(out / "bench.txt", "w", encoding="utf-8") as handle:
        handle.write(format_bench_report(report))
    if report.scaling:
        render_scaling_svg(report, out / "scaling.svg")
    LOG.info("bench: %d sentences, C in %s -> %s",
             len(lengths), bench["c_range"], out / "bench.csv")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = _parse(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=os.environ.get("SEQREFINE_LOG", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    try:
        config = load_config(args.config)
        apply_overrides(config, args.set)
        _fold_flags(config, args)
    except ConfigError as err:
        print(f"seqrefine: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(config, out / "config.json")
    try:
        COMMANDS[args.subcommand](config, out)
    except (ConfigError, MissingInput) as err:
        print(f"seqrefine: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001 - boundary: report and set status
        LOG.error("%s failed: %s", args.subcommand, err)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
