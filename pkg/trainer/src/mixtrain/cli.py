"""Command line front end: train, eval, serve-policy, plot."""

from __future__ import annotations

import argparse
import sys

from .protocol import ProtocolError


def _add_episode_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--endpoint", required=True, metavar="HOST:PORT",
                   help="address of a running `mixsim serve`")
    p.add_argument("--scenario", required=True,
                   help="scenario name or file path, resolved by the server")
    p.add_argument("--rv-rate", type=float, default=1.0)
    p.add_argument("--horizon", type=int, default=300)
    p.add_argument("--warmup", type=float, default=0.0)
    p.add_argument("--action-interval", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixtrain",
        description="Train, evaluate, serve, and plot Stop/Go policies "
                    "against the traffic simulator's wire protocol.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a policy over the wire")
    _add_episode_args(p)
    p.add_argument("--out", required=True, help="checkpoint/curve directory")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--steps-per-iteration", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--discount", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--replay-capacity", type=int, default=None)
    p.add_argument("--min-buffer", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("eval", help="compare a checkpoint with all-Stop")
    _add_episode_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seeds", default="1:10",
                   help="inclusive seed range LO:HI (default 1:10)")

    p = sub.add_parser("serve-policy", help="host a checkpoint for "
                       "`--policy external:HOST:PORT`")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--listen", default="127.0.0.1:0", metavar="HOST:PORT")

    p = sub.add_parser("plot", help="render figures from a results directory")
    p.add_argument("report_dir")
    p.add_argument("--out", default=None, help="figure directory "
                   "(default: alongside the results)")
    return parser


def _train_config(args) -> "TrainConfig":
    from .train import TrainConfig

    overrides = {}
    for field in ("iterations", "steps_per_iteration", "learning_rate",
                  "discount", "batch_size", "replay_capacity", "min_buffer",
                  "seed"):
        val = getattr(args, field)
        if val is not None:
            overrides[field] = val
    overrides.update(rv_rate=args.rv_rate, horizon=args.horizon,
                     warmup=args.warmup, action_interval=args.action_interval)
    return TrainConfig(**overrides)


def _parse_seed_range(text: str) -> list[int]:
    lo, sep, hi = text.partition(":")
    if not sep:
        raise ValueError(f"seed range must be LO:HI, got {text!r}")
    return list(range(int(lo), int(hi) + 1))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            from .train import train

            ckpt = train(args.endpoint, args.scenario, _train_config(args),
                         args.out)
            print(f"checkpoint written to {ckpt}")
        elif args.command == "eval":
            from .train import evaluate_checkpoint

            seeds = _parse_seed_range(args.seeds)
            res = evaluate_checkpoint(
                args.endpoint, args.scenario, args.checkpoint, seeds,
                rv_rate=args.rv_rate, horizon=args.horizon,
                warmup=args.warmup, action_interval=args.action_interval)
            print(f"trained mean return  {res['trained_mean']:.3f}")
            print(f"all-Stop mean return {res['all_stop_mean']:.3f}")
        elif args.command == "serve-policy":
            from .serve_policy import PolicyServer

            server = PolicyServer(args.listen, args.checkpoint)
            host, port = server.address
            print(f"policy listening on {host}:{port}", flush=True)
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                pass
            finally:
                server.shutdown()
        elif args.command == "plot":
            from .plots import plot_results

            written = plot_results(args.report_dir, args.out)
            for path in written:
                print(path)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ProtocolError, ConnectionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
