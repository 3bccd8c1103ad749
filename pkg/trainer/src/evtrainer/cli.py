"""Command line interface: train, ppl, decode.

Errors print one machine-readable JSON object to stderr ({"error", "detail"})
and exit 2 for missing inputs, 1 otherwise, mirroring the retrieval CLI.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import TrainerError
from .evaluate import DEFAULT_MAX_NEW_TOKENS, decode, evaluate_ppl, write_hyps
from .train import TrainSpec, train


def cmd_train(args) -> int:
    spec = TrainSpec(
        mode=args.mode,
        seed=args.seed,
        base=args.base,
        max_input_len=args.max_input_len,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
    )
    result = train(spec, args.export, args.out_dir)
    losses = " ".join(f"{loss:.4f}" for loss in result.epoch_losses)
    print(
        f"train: {result.n_examples} examples, vocab {result.vocab_size}, "
        f"losses [{losses}] -> {result.checkpoint}"
    )
    return 0


def cmd_ppl(args) -> int:
    ppl = evaluate_ppl(args.checkpoint, args.export)
    payload = {"ppl": ppl}
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")
    print(json.dumps(payload))
    return 0


def cmd_decode(args) -> int:
    hyps = decode(args.checkpoint, args.export, args.max_new_tokens)
    write_hyps(hyps, args.output)
    print(f"decode: {len(hyps)} hypotheses -> {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evtrainer",
        description="Toy evidence-aware trainer over formatted exports.",
    )
    subparsers = parser.add_subparsers(dest="command")

    sub = subparsers.add_parser("train", help="fit a fresh model on a formatted export")
    sub.add_argument("--export", required=True, help="formatted-export JSONL path")
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--mode", required=True, choices=["gpt_concat", "fid"])
    sub.add_argument("--seed", type=int, required=True)
    sub.add_argument("--base", default="tiny", choices=["tiny", "small"])
    sub.add_argument("--max-input-len", type=int, default=64)
    sub.add_argument("--epochs", type=int, default=2)
    sub.add_argument("--batch-size", type=int, default=16)
    sub.add_argument("--lr", type=float, default=3e-4)
    sub.set_defaults(func=cmd_train)

    sub = subparsers.add_parser("ppl", help="target-token perplexity on an export")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--export", required=True)
    sub.add_argument("--output", help="write {'ppl': value} JSON here")
    sub.set_defaults(func=cmd_ppl)

    sub = subparsers.add_parser("decode", help="greedy hypotheses as id/hyp JSONL")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--export", required=True)
    sub.add_argument("--output", required=True)
    sub.add_argument("--max-new-tokens", type=int, default=DEFAULT_MAX_NEW_TOKENS)
    sub.set_defaults(func=cmd_decode)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(json.dumps({"error": "input not found", "detail": str(exc)}), file=sys.stderr)
        return 2
    except (TrainerError, OSError, ValueError) as exc:
        print(json.dumps({"error": "error", "detail": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
