"""Command-line entry points: train a policy on a demonstration dataset,
serve a checkpoint over the bridge protocol."""

from __future__ import annotations

import argparse
import sys

from .networks import NetworkConfig


def _cmd_train(args: argparse.Namespace) -> int:
    from .data import windows_from_dataset
    from .training import save_checkpoint, train_policy

    windows = windows_from_dataset(args.dataset, args.t_o, args.t_a)
    if not windows:
        print("dataset yields no training windows", file=sys.stderr)
        return 1
    size = windows[0].ego.shape[-1]
    n_max = windows[0].features.shape[-2]
    config = NetworkConfig(ego_size=size, patch=args.patch, n_max=n_max,
                           d_model=args.d_model, t_o=args.t_o, t_a=args.t_a)
    print(f"{len(windows)} windows, ego {size}x{size}, {n_max} slots")
    checkpoint = train_policy(windows, args.model, config, steps=args.steps,
                              batch_size=args.batch_size, lr=args.lr,
                              seed=args.seed, schedule_steps=args.diffusion_steps,
                              log_every=args.log_every)
    save_checkpoint(args.out, checkpoint)
    print(f"wrote {args.out} (final loss {checkpoint['losses'][-1]:.5f})")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .serve import serve_checkpoint

    return serve_checkpoint(args.checkpoint, mode=args.mode, seed=args.seed,
                            reply_log=args.reply_log, name=args.name)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="trackpolicy")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy on a demonstration dataset")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--model", required=True, choices=("diffusion", "bc"))
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-o", type=int, default=2)
    p.add_argument("--t-a", type=int, default=16)
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--diffusion-steps", type=int, default=50)
    p.add_argument("--log-every", type=int, default=200)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("serve", help="serve a checkpoint over the bridge protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("diffusion", "bc"), default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reply-log", default=None,
                   help="optional JSON file recording every action reply")
    p.add_argument("--name", default="trackpolicy")
    p.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
