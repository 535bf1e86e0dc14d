"""Command-line entry point.

Subcommands: ``run`` (full experiment, writes a metrics CSV), ``compare``
(report across metrics files), ``pretrain-ae`` (save a pretrained
autoencoder) and ``gen-data`` (write the synthetic dataset as text).

Exit status classes: 0 success, 2 config error, 3 runtime error, 4 I/O
error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .harness import (
    ConfigError,
    ExperimentConfig,
    compare_runs,
    load_config,
    prepare_dataset,
    pretrain_autoencoder_for,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = int(args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = int(args.epochs)
    if getattr(args, "out", None) is not None:
        cfg.output_dir = str(args.out)
    return cfg


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    path = run_experiment(cfg)
    print(path)
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    if args.thresholds:
        thresholds = [float(t) for t in args.thresholds.split(",")]
    elif args.config:
        thresholds = load_config(args.config).compare_thresholds
    else:
        thresholds = [0.6, 0.8]
    print(compare_runs(args.metrics, thresholds))
    return EXIT_OK


def _cmd_pretrain_ae(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    ae = pretrain_autoencoder_for(cfg)
    assert ae.encoder is not None
    arrays = {}
    for part, model in (("enc", ae.encoder), ("dec", ae.decoder)):
        for l, (W, b) in enumerate(zip(model.weights, model.biases)):
            arrays[f"{part}|W{l}"] = W
            arrays[f"{part}|b{l}"] = b
    out = Path(args.out or "autoencoder.npz")
    with open(out, "wb") as fh:
        np.savez(fh, **arrays)
    print(out)
    return EXIT_OK


def _cmd_gen_data(args: argparse.Namespace) -> int:
    from .data import save_dataset

    cfg = _apply_overrides(load_config(args.config), args)
    train, test = prepare_dataset(cfg)
    out = Path(args.out or "dataset")
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out / "train.txt", train)
    save_dataset(out / "test.txt", test)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedagg",
        description="Deterministic simulator of agglomerative federated learning "
        "over end-edge-cloud trees",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment and write a metrics CSV")
    run_p.add_argument("--config", required=True, help="path to the JSON experiment config")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.add_argument("--epochs", type=int, default=None, help="override the epoch count")
    run_p.add_argument("--out", default=None, help="override the output directory")
    run_p.set_defaults(func=_cmd_run)

    cmp_p = sub.add_parser("compare", help="summarize and compare metrics files")
    cmp_p.add_argument("metrics", nargs="+", help="metrics CSV files")
    cmp_p.add_argument("--config", default=None, help="config supplying accuracy thresholds")
    cmp_p.add_argument("--thresholds", default=None, help="comma-separated accuracy thresholds")
    cmp_p.set_defaults(func=_cmd_compare)

    ae_p = sub.add_parser("pretrain-ae", help="pretrain and save the shared autoencoder")
    ae_p.add_argument("--config", required=True)
    ae_p.add_argument("--seed", type=int, default=None)
    ae_p.add_argument("--out", default=None, help="output .npz path")
    ae_p.set_defaults(func=_cmd_pretrain_ae)

    gen_p = sub.add_parser("gen-data", help="generate and save the dataset as text")
    gen_p.add_argument("--config", required=True)
    gen_p.add_argument("--seed", type=int, default=None)
    gen_p.add_argument("--out", default=None, help="output directory")
    gen_p.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
