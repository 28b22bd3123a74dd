"""Command-line entry points: train, eval, matrix, plot, inspect-messages."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from refgame.analysis import analyze_messages, message_records
from refgame.config import ExperimentConfig
from refgame.data import load_cifar10
from refgame.errors import CheckpointError, RefgameError
from refgame.matrix import load_matrix, run_matrix
from refgame.metrics import dump_outcomes
from refgame.plotting import emit_plots
from refgame.training import Trainer


def _peek_config(ckpt_path: str) -> ExperimentConfig:
    if not Path(ckpt_path).exists():
        raise CheckpointError(f"checkpoint not found: {ckpt_path}")
    payload = torch.load(ckpt_path, map_location="cpu", weights_only=False)
    return ExperimentConfig.from_dict(payload["config"])


def _print_report(report) -> None:
    d = report.to_dict()
    meta = d.pop("meta", {})
    for key in sorted(d):
        if d[key] is not None:
            print(f"{key:>24}: {d[key]}")
    if meta.get("config_hash"):
        print(f"{'config_hash':>24}: {meta['config_hash']}")


def cmd_train(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.output_dir = args.out
    if args.data is not None:
        config.data.path = args.data
    config.validate()
    data = load_cifar10(config.resolved_data_path())
    if args.resume:
        trainer = Trainer.load_checkpoint(args.resume, data, config=config)
    else:
        trainer = Trainer(config, data)
    trainer.train()
    report = trainer.evaluate()
    out = Path(config.output_dir)
    report.save(out / "report.json")
    emit_plots([out / "metrics.jsonl"], out)
    print(f"run complete: {out}")
    _print_report(report)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _peek_config(args.ckpt)
    if args.data is not None:
        config.data.path = args.data
    data = load_cifar10(config.resolved_data_path())
    trainer = Trainer.load_checkpoint(args.ckpt, data)
    report, outcomes = trainer.evaluate(
        eval_games=args.games, greedy=args.greedy, collect_outcomes=True
    )
    out = Path(args.out) if args.out else Path(args.ckpt).parent
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "eval-report.json")
    if args.dump_outcomes:
        dump_outcomes(outcomes, out / "outcomes.jsonl")
    _print_report(report)
    return 0


def cmd_matrix(args: argparse.Namespace) -> int:
    rows = load_matrix(args.config)
    for row in rows:
        if args.data is not None:
            row.config.data.path = args.data
        if args.seed is not None:
            row.config.seed = args.seed
    results = run_matrix(
        rows, args.out, parallelism=args.parallelism, force=args.force
    )
    print((Path(args.out) / "results.txt").read_text(), end="")
    failed = [r.name for r in results if r.error]
    if failed:
        print(f"failed rows: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    written = emit_plots(args.logs, args.out)
    for path in written:
        print(path)
    return 0


def cmd_inspect_messages(args: argparse.Namespace) -> int:
    config = _peek_config(args.ckpt)
    if args.data is not None:
        config.data.path = args.data
    data = load_cifar10(config.resolved_data_path())
    trainer = Trainer.load_checkpoint(args.ckpt, data)
    report, outcomes = trainer.evaluate(
        eval_games=args.games, greedy=args.greedy, collect_outcomes=True
    )
    out = Path(args.out) if args.out else Path(args.ckpt).parent
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "messages.jsonl", "w") as fh:
        for record in message_records(outcomes):
            fh.write(json.dumps(record) + "\n")
    summary = analyze_messages(
        outcomes,
        vocab_size=trainer.config.channel.vocab_size,
        rng=np.random.default_rng(trainer.config.seed),
        n_shuffles=args.shuffles,
    )
    summary["config_hash"] = trainer.config.config_hash()
    summary["greedy"] = args.greedy
    (out / "mi-summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for key in ("games", "comm_rate", "unique_messages", "token_class_mi",
                "null_mi_mean", "hash_like"):
        print(f"{key:>18}: {summary[key]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refgame",
        description="Image referential signalling games with discrete messages.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="override output_dir")
    p.add_argument("--data", default=None, help="override dataset path")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--games", type=int, default=None)
    p.add_argument("--greedy", action="store_true",
                   help="argmax decoding instead of sampled tokens")
    p.add_argument("--out", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--dump-outcomes", action="store_true")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("matrix", help="run a named set of experiments")
    p.add_argument("--config", required=True, help="matrix file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--force", action="store_true",
                   help="rerun rows even when a report already exists")
    p.set_defaults(handler=cmd_matrix)

    p = sub.add_parser("plot", help="render training curves from metrics logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_plot)

    p = sub.add_parser("inspect-messages",
                       help="dump messages and token/class association stats")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--games", type=int, default=1000)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--out", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--shuffles", type=int, default=20)
    p.set_defaults(handler=cmd_inspect_messages)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except RefgameError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
