"""Command-line entry point: ``probnerf {train,render,uncertainty,eval,make-scene}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .commands import ArgumentValueError

EXIT_USAGE = 1
EXIT_FAILURE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    p = _Parser(prog="probnerf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)

    for name in ("render", "uncertainty"):
        r = sub.add_parser(name, help=f"{name} a view from a checkpoint")
        r.add_argument("--checkpoint", required=True)
        r.add_argument("--pose", type=int, help="pose index (default 0)")
        r.add_argument("--pose-file", help="pose list to index instead of the training poses")
        r.add_argument("--dataset", help="dataset for poses/intrinsics (default: from config)")
        r.add_argument("--out", required=True)
        r.add_argument("--seed", type=int, default=0)
        r.add_argument("--n-samples", type=int, help="samples per ray (default: from config)")
        if name == "render":
            r.add_argument("--stochastic", action="store_true")
            r.add_argument("--samples", type=int, default=1)
        else:
            r.add_argument("--samples", type=int, required=True)

    e = sub.add_parser("eval", help="PSNR, SSIM and AUSE on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", required=True, help="file of view indices")
    e.add_argument("--samples", type=int, required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--n-samples", type=int)

    s = sub.add_parser("make-scene", help="render a synthetic dataset from a scene file")
    s.add_argument("--spec", required=True, help="scene description file")
    s.add_argument("--views", type=int, required=True)
    s.add_argument("--size", required=True, help="WxH")
    s.add_argument("--out", required=True)
    return p


def run(args):
    from . import commands
    from .config import TrainConfig
    from .train import train

    if args.command == "train":
        result = train(TrainConfig.load(args.config))
        print(f"wrote {result.checkpoint} and {result.metrics}")
    elif args.command == "render":
        files = commands.render_cmd(args.checkpoint, args.out, args.pose, args.pose_file,
                                    args.dataset, args.stochastic, args.samples, args.seed,
                                    args.n_samples)
        print(f"wrote {len(files)} image(s) to {args.out}")
    elif args.command == "uncertainty":
        umap = commands.uncertainty_cmd(args.checkpoint, args.out, args.samples, args.pose,
                                        args.pose_file, args.dataset, args.seed, args.n_samples)
        print(f"mean color variance {umap.color_var.mean():.6g}")
    elif args.command == "eval":
        rows = commands.eval_cmd(args.checkpoint, args.dataset, args.split, args.samples,
                                 args.out, args.seed, args.n_samples)
        print(f"mean PSNR {rows[-1]['psnr']:.3f} dB over {len(rows) - 1} view(s)")
    elif args.command == "make-scene":
        data = commands.make_scene_cmd(args.spec, args.views, args.size, args.out)
        print(f"wrote {len(data)} view(s) to {args.out}")


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        run(args)
    except ArgumentValueError as exc:
        print(f"probnerf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001  runtime failures map to exit code 2
        print(f"probnerf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
