"""Command-line entry point: ``psrspoof <subcommand> [options] [key=value ...]``.

Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config
from .dataset import Corpus, CorruptFileError, generate_corpus
from .features import QuantizerFormatError, QuantizerParams, compress, second_difference
from .nn.model import CheckpointError, DetectorModel
from .pipeline import fit_quantizer, load_testset, load_training_pairs
from .signal import DegenerateScenario
from .train import (NumericFailure, TrainConfig, evaluate, layer_sweep, model_config,
                    sequence_scores, sweep_csv, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _layers(text: str) -> list[int]:
    """``"1..3"`` or ``"1,2,4"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            out = list(range(int(lo), int(hi) + 1))
        else:
            out = [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer range {text!r}") from None
    if not out or min(out) < 1 or max(out) > 8:
        raise argparse.ArgumentTypeError("layer counts must lie in 1..8")
    return out


def _variants(text: str) -> list[str]:
    out = [v.strip().lower() for v in text.split(",") if v.strip()]
    allowed = {"mha-early", "mha-late", "lstm-early", "lstm-late"}
    bad = [v for v in out if v not in allowed]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"unknown variant(s) {bad}; choose from {sorted(allowed)}")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psrspoof", description="Spoofing detection on simulated pseudo-range sequences.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_corpus=True):
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
        p.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap for parallel stages (default: available cores)")
        if needs_corpus:
            p.add_argument("--corpus", type=Path, required=True, help="corpus directory with manifest.txt")
        p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")

    p = sub.add_parser("generate", help="write a training/test corpus")
    common(p, needs_corpus=False)
    p.add_argument("--train", type=int, default=1000, help="training pairs (default: 1000)")
    p.add_argument("--test", type=int, default=200, help="test sequences (default: 200)")

    p = sub.add_parser("pretrain-quantizer", help="fit the soft quantizer on corpus features")
    common(p)

    p = sub.add_parser("train", help="train one detector")
    common(p)
    p.add_argument("--quantizer", type=Path, required=True, help="quantizer file")

    p = sub.add_parser("evaluate", help="score the test split of a corpus")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="detector checkpoint")
    p.add_argument("--threshold", type=float, default=None, help="decision threshold (default: config)")

    p = sub.add_parser("sweep", help="train and evaluate variants across block counts")
    common(p)
    p.add_argument("--quantizer", type=Path, required=True, help="quantizer file")
    p.add_argument("--variants", type=_variants, default=["mha-early", "lstm-late"],
                   help="comma-separated variants (default: mha-early,lstm-late)")
    p.add_argument("--layers", type=_layers, default=list(range(1, 9)), help="block counts, e.g. 1..8 or 1,2,4")
    p.add_argument("--threshold", type=float, default=None, help="decision threshold (default: config)")

    p = sub.add_parser("export-plot-data", help="write score traces and PSR difference series")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="detector checkpoint")
    p.add_argument("--index", type=int, default=0, help="test sequence for the PSR series (default: 0)")
    return parser


def _parse_overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _write_info(out: Path, cfg: Config, args, extra: dict | None = None) -> None:
    lines = [f"command = {args.command}", f"seed = {args.seed}", f"config_hash = {cfg.hash()}",
             f"generator_hash = {cfg.generator_hash()}"]
    lines += [f"{k} = {v}" for k, v in (extra or {}).items()]
    (out / f"{args.command}_info.txt").write_text("\n".join(lines) + "\n" + cfg.render())


def _check_corpus(corpus: Corpus, cfg: Config) -> None:
    if corpus.manifest.config_hash != cfg.generator_hash():
        print(f"warning: corpus was generated with config hash {corpus.manifest.config_hash}, "
              f"current generator config hashes to {cfg.generator_hash()}", file=sys.stderr)


def _threshold(args, cfg: Config) -> float:
    return cfg.threshold if args.threshold is None else args.threshold


def cmd_generate(args, cfg):
    if args.train < 1 or args.test < 1:
        raise UsageError("--train and --test must be at least 1")
    m = generate_corpus(cfg, args.train, args.test, args.seed, args.out, args.threads)
    _write_info(args.out, cfg, args, {"test_spoofed_fraction": repr(m.test_spoofed_fraction)})
    print(f"wrote {args.train} training pairs and {args.test} test sequences to {args.out}; "
          f"test spoofed-epoch fraction {100 * m.test_spoofed_fraction:.2f}%")


def cmd_pretrain_quantizer(args, cfg):
    corpus = Corpus.open(args.corpus)
    _check_corpus(corpus, cfg)
    pairs = load_training_pairs(corpus)
    q, rmse = fit_quantizer(pairs, cfg.quantizer_levels, cfg.quantizer_epochs, cfg.quantizer_samples, args.seed)
    q.save(args.out / "quantizer.qntz")
    _write_info(args.out, cfg, args, {"reconstruction_rmse": repr(rmse)})
    print(f"quantizer with {q.N} levels, reconstruction RMSE {rmse:.5f}")


def cmd_train(args, cfg):
    corpus = Corpus.open(args.corpus)
    _check_corpus(corpus, cfg)
    q = QuantizerParams.load(args.quantizer)
    if q.N != cfg.quantizer_levels:
        cfg = cfg.replace(quantizer_levels=q.N)
    pairs = load_training_pairs(corpus)
    model = DetectorModel(model_config(cfg, args.seed), quantizer=q)
    meta = {"config_hash": cfg.hash(), "corpus_hash": corpus.manifest.config_hash}
    tcfg = TrainConfig.from_config(cfg, args.seed)

    def progress(step, loss):
        if step % 100 == 0 or step == tcfg.max_steps - 1:
            print(f"step {step:6d}  loss {loss:.5f}", flush=True)

    result = train(model, pairs, q, tcfg, checkpoint_dir=args.out, metadata=meta, progress=progress)
    model.save(args.out / "model.psrd", meta)
    (args.out / "loss_curve.csv").write_text(result.loss_curve_csv())
    _write_info(args.out, cfg, args, {"final_loss": repr(result.losses[-1]) if result.losses else "nan"})


def cmd_evaluate(args, cfg):
    corpus = Corpus.open(args.corpus)
    model, _ = DetectorModel.load(args.checkpoint)
    if model.quantizer is None:
        raise CheckpointError(f"{args.checkpoint} carries no quantizer")
    report = evaluate(model, load_testset(corpus), _threshold(args, cfg))
    (args.out / "metrics.csv").write_text(report.to_csv())
    _write_info(args.out, cfg, args, {"checkpoint": args.checkpoint, "threshold": report.threshold})
    print(report.table())


def cmd_sweep(args, cfg):
    corpus = Corpus.open(args.corpus)
    _check_corpus(corpus, cfg)
    q = QuantizerParams.load(args.quantizer)
    cfg = cfg.replace(quantizer_levels=q.N)
    rows = layer_sweep(load_training_pairs(corpus), load_testset(corpus), q, cfg, args.variants, args.layers,
                       args.seed, _threshold(args, cfg), progress=lambda msg: print(msg, flush=True))
    (args.out / "sweep.csv").write_text(sweep_csv(rows))
    _write_info(args.out, cfg, args, {"variants": ",".join(args.variants),
                                      "layers": ",".join(map(str, args.layers))})


def cmd_export_plot_data(args, cfg):
    corpus = Corpus.open(args.corpus)
    model, _ = DetectorModel.load(args.checkpoint)
    entries_seqs = list(corpus.test_sequences())
    if not 0 <= args.index < len(entries_seqs):
        raise UsageError(f"--index must lie in [0, {len(entries_seqs)})")
    testset = load_testset(corpus)
    scores = sequence_scores(model, testset, model.quantizer)
    with open(args.out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "kind", "member", "epoch", "label", "score"])
        for (entry, _), s, sc in zip(entries_seqs, testset, scores):
            for k in range(sc.shape[0]):
                w.writerow([entry.index, entry.kind.value, entry.member, k, int(s.labels[k]), repr(float(sc[k]))])
    entry, seq = entries_seqs[args.index]
    d2, defined = second_difference(seq.psr_m, seq.present)
    present = seq.present
    d1 = np.zeros_like(seq.psr_m)
    has_d1 = np.zeros_like(present)
    d1[1:] = seq.psr_m[1:] - seq.psr_m[:-1]
    has_d1[1:] = present[1:] & present[:-1]
    with open(args.out / "series.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "channel", "label", "psr_m", "delta_m", "delta2_m", "compressed_delta2"])
        K, L = seq.psr_m.shape
        for k in range(K):
            for ch in range(L):
                if not present[k, ch]:
                    continue
                w.writerow([k, ch, int(seq.labels[k]), repr(float(seq.psr_m[k, ch])),
                            repr(float(d1[k, ch])) if has_d1[k, ch] else "",
                            repr(float(d2[k, ch])) if defined[k, ch] else "",
                            repr(float(compress(d2[k, ch]))) if defined[k, ch] else ""])
    _write_info(args.out, cfg, args, {"checkpoint": args.checkpoint, "index": args.index})


COMMANDS = {"generate": cmd_generate, "pretrain-quantizer": cmd_pretrain_quantizer, "train": cmd_train,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep, "export-plot-data": cmd_export_plot_data}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.config is not None and not args.config.is_file():
            raise UsageError(f"config file {args.config} does not exist")
        cfg = load_config(args.config, _parse_overrides(args.overrides))
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be at least 1")
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorruptFileError, QuantizerFormatError, CheckpointError, DegenerateScenario,
            OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
