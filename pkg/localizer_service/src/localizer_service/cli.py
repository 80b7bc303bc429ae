"""Command-line entry points: train a model directory, then serve it."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from localizer_service.model import new_model, save_model
from localizer_service.service import serve
from localizer_service.training import (
    FULL_SCALE_RECIPE,
    QUERY_TEMPLATE,
    build_training_set,
    fine_tune,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="localizer-service",
        description="Train and serve the reference field-localization model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fine-tune on canonical corpora")
    train.add_argument("--corpus", action="append", required=True,
                       help="canonical corpus root (repeatable)")
    train.add_argument("--out", required=True, help="model directory to write")
    train.add_argument("--steps", type=int, default=500)
    train.add_argument("--batch-size", type=int, default=8)
    train.add_argument("--learning-rate", type=float, default=3e-3)
    train.add_argument("--seed", type=int, default=0)

    server = sub.add_parser("serve", help="serve a trained model directory")
    server.add_argument("--model", required=True, help="model directory")
    server.add_argument("--host", default="127.0.0.1")
    server.add_argument("--port", type=int, default=8731)
    return parser


def cmd_train(args: argparse.Namespace) -> int:
    examples = build_training_set([Path(c) for c in args.corpus])
    model = new_model(seed=args.seed)
    losses = fine_tune(
        model, examples, steps=args.steps, batch_size=args.batch_size,
        learning_rate=args.learning_rate, seed=args.seed,
    )
    metadata = {
        "full_scale_recipe": FULL_SCALE_RECIPE,
        "desk_scale_overrides": {
            "base_model": "compact from-scratch convolutional grounding model",
            "steps": args.steps,
            "batch_size": args.batch_size,
            "learning_rate": args.learning_rate,
            "schedule": "cosine",
            "train_examples": len(examples),
            "seed": args.seed,
        },
        "query_template": QUERY_TEMPLATE,
        "decoding": "deterministic regression (no sampling)",
        "final_loss": losses[-1],
    }
    save_model(Path(args.out), model, metadata)
    print(
        f"trained on {len(examples)} examples for {args.steps} steps; "
        f"final loss {losses[-1]:.4f}; model written to {args.out}"
    )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    serve(Path(args.model), host=args.host, port=args.port)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "train":
        return cmd_train(args)
    return cmd_serve(args)


if __name__ == "__main__":
    sys.exit(main())
