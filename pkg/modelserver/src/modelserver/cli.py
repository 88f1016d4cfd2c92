"""`condec-modelserver` entry point: serve the wire protocol or train the
toy reasoner on exported pairs."""

from __future__ import annotations

import argparse
import json
import sys

from .seq2seq import load_pairs, save_checkpoint, train_reasoner
from .server import ServerConfig, create_app


def cmd_serve(args) -> int:
    if not (args.generator_model or args.checker_model or args.scorer_model):
        print("serve needs at least one of --generator-model, "
              "--checker-model, --scorer-model", file=sys.stderr)
        return 1
    config = ServerConfig(
        generator_model=args.generator_model,
        checker_model=args.checker_model,
        scorer_model=args.scorer_model,
        device=args.device,
        port=args.port,
        max_tokens=args.max_tokens,
    )
    import uvicorn
    uvicorn.run(create_app(config), host=args.host, port=config.port)
    return 0


def cmd_train_reasoner(args) -> int:
    pairs = load_pairs(args.pairs)
    if not pairs:
        print(f"no training pairs in {args.pairs}", file=sys.stderr)
        return 1
    model, vocab, losses = train_reasoner(
        pairs, epochs=args.epochs, lr=args.lr, seed=args.seed,
        emb_dim=args.emb_dim, hidden=args.hidden, device=args.device)
    save_checkpoint(args.output, model, vocab)
    print(json.dumps({"pairs": len(pairs), "epochs": args.epochs,
                      "first_loss": losses[0], "last_loss": losses[-1],
                      "checkpoint": args.output}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condec-modelserver")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("serve", help="serve /v1/generate, /v1/check, /v1/similarity")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8400)
    p.add_argument("--generator-model", help="reasoner checkpoint path")
    p.add_argument("--checker-model", help="'builtin' or weights JSON path")
    p.add_argument("--scorer-model", help="'builtin'")
    p.add_argument("--device", default="cpu")
    p.add_argument("--max-tokens", type=int, default=128)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("train-reasoner", help="train the toy reasoner")
    p.add_argument("--pairs", required=True,
                   help="line-delimited {input, target} records")
    p.add_argument("--output", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emb-dim", type=int, default=64)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_train_reasoner)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
