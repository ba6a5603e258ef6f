"""Command-line entry point: ``seco gen-data | train | probe | gradcheck``.

Exit codes: 0 success, 1 I/O error, 2 config/format error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import data
from .config import Config, load_config
from .errors import ConfigurationError, DataError, DivergenceError, FormatError

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _print_config(cfg: Config) -> None:
    print("# resolved config")
    print(cfg.dump())
    sys.stdout.flush()


def cmd_gen_data(args, cfg: Config) -> int:
    records = data.generate_dataset(cfg.gen())
    outputs = [(records, Path(args.out))]
    if args.eval_out:
        train, held = data.split_dataset(records, cfg["gen.eval_per_class"])
        outputs = [(train, Path(args.out)), (held, Path(args.eval_out))]
    for recs, path in outputs:
        data.write_dataset(recs, path)
        print(f"wrote {len(recs)} sequences to {path} ({path.stat().st_size} bytes)")
    return EXIT_OK


def cmd_train(args, cfg: Config) -> int:
    from .trainer import train

    tcfg = cfg.train()
    tcfg.data_path = args.data
    tcfg.out_dir = args.out_dir
    result = train(tcfg)
    out = Path(args.out_dir)
    print(f"trained {len(result.metrics)} epochs, {result.state.step} steps")
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    print(f"metrics: {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_probe(args, cfg: Config) -> int:
    from .evaluation import extract_features, linear_probe, order_accuracy, write_probe_report
    from .trainer import load_checkpoint

    for p in (args.checkpoint, args.train_data, args.eval_data):
        if not Path(p).is_file():
            raise FileNotFoundError(f"no such file: {p}")
    train_recs = data.read_dataset(args.train_data)
    eval_recs = data.read_dataset(args.eval_data)
    raw_dim = train_recs[0].frames.shape[1]
    expect = None
    if args.config is not None:
        tcfg = cfg.train()
        dims = [raw_dim, *tcfg.backbone_widths, tcfg.head_hidden, tcfg.embed_dim]
        expect = list(zip(dims, dims[1:]))
    ckpt = load_checkpoint(args.checkpoint, expect)
    for name, recs in (("train", train_recs), ("eval", eval_recs)):
        width = recs[0].frames.shape[1]
        if width != ckpt.query.raw_dim:
            raise ConfigurationError(
                f"{name} data raw_dim {width} does not match checkpoint input width {ckpt.query.raw_dim}")
    pcfg = cfg.probe()
    result = linear_probe(extract_features(ckpt.query, train_recs), extract_features(ckpt.query, eval_recs), pcfg)
    acc = order_accuracy(ckpt.query, ckpt.key, ckpt.order, eval_recs, pcfg.order_samples, pcfg.seed,
                         cfg.augment())
    classes = sorted({r.class_id for r in train_recs})
    report = write_probe_report(result, classes, acc, args.out)
    print(report, end="")
    return EXIT_OK


def cmd_gradcheck(args, cfg: Config) -> int:
    from .gradcheck import main_report

    fault = args.inject_fault or os.environ.get("SECO_INJECT_FAULT") or None
    ok, text = main_report(args.points, args.seed, fault)
    print(text)
    print("gradcheck", "PASSED" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seco", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic sequence dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="dataset file (all sequences, or the train split)")
    p.add_argument("--eval-out", help="also split: hold out gen.eval_per_class sequences per class here")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train encoders on a dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", help="linear probe + order accuracy for a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train-data", required=True)
    p.add_argument("--eval-data", required=True)
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient path")
    p.add_argument("--config")
    p.add_argument("--points", type=int, default=100, help="random points per target")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", metavar="OP", help="sign-flip the backward rule of OP (checker sanity)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        _print_config(cfg)
        return args.func(args, cfg)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, DataError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        name = getattr(exc, "filename", None)
        print(f"error: {exc.strerror or exc}{f': {name}' if name else ''}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
