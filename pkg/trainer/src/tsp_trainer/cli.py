"""Command line: dataset export, training runs, gradient checking.

Exit codes: 0 on success, 1 when a requested check fails, 2 on bad
arguments or input.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import data, formats, labels
from .gradcheck import gradient_check
from .train import DEFAULT_SCALE_MIX, TrainConfig, train


def parse_mix(text: str) -> tuple[tuple[int, int], ...]:
    """Parse '10:1,12:2' into ((10, 1), (12, 2))."""
    pairs = []
    for part in text.split(","):
        scale, _, prop = part.partition(":")
        try:
            pairs.append((int(scale), int(prop)))
        except ValueError:
            raise ValueError(f"bad mix entry {part!r}, want scale:proportion") from None
    if not pairs:
        raise ValueError("empty scale mix")
    return tuple(pairs)


def _config_from(args) -> TrainConfig:
    return TrainConfig(
        dataset_size=args.size,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr_max=args.lr_max,
        scale_mix=parse_mix(args.mix) if args.mix else DEFAULT_SCALE_MIX,
        seed=args.seed,
        layers=args.layers,
        width=args.width,
    )


def cmd_dataset(args) -> int:
    cfg = _config_from(args)
    cases = data.build_mixed_dataset(cfg, pseudo_label_budget=args.label_budget)
    formats.write_labeled([(c.coords, c.perm) for c in cases], args.out)
    print(f"wrote {len(cases)} labeled cases to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    if args.dataset:
        raw = formats.load_labeled(args.dataset)
        dataset = [data.prepare_case(coords, perm) for coords, perm in raw]
    else:
        dataset = data.build_mixed_dataset(cfg, pseudo_label_budget=args.label_budget)
    result = train(cfg, dataset, args.weights_out, args.log_out)
    state = "aborted" if result.aborted else "finished"
    print(
        f"training {state}: {len(result.records)} steps, "
        f"final loss {result.final_loss:.6f}, weights at {result.weights_path}"
    )
    return 1 if result.aborted else 0


def cmd_gradcheck(args) -> int:
    from .model import HeatmapNet

    rng = np.random.default_rng(args.seed)
    cases = []
    for _ in range(args.cases):
        coords = rng.random((args.n, 2))
        cases.append(data.prepare_case(coords, labels.held_karp_perm(coords)))
    net = HeatmapNet(l=args.layers, h=args.width, seed=args.seed)
    report = gradient_check(net, cases, count=args.count, seed=args.seed)
    print(report.summary())
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsp-trainer", description="train sparse TSP heatmap networks"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="build and export a labeled dataset")
    ds.add_argument("--size", type=int, required=True)
    ds.add_argument("--mix", help="scale mix as 'n:prop,n:prop,...'")
    ds.add_argument("--seed", type=int, default=0)
    ds.add_argument("--label-budget", default=labels.PSEUDO_LABEL_BUDGET)
    ds.add_argument("--out", required=True)
    ds.add_argument("--epochs", type=int, default=3, help=argparse.SUPPRESS)
    ds.add_argument("--batch-size", type=int, default=32, help=argparse.SUPPRESS)
    ds.add_argument("--lr-max", type=float, default=5e-4, help=argparse.SUPPRESS)
    ds.add_argument("--layers", type=int, default=6, help=argparse.SUPPRESS)
    ds.add_argument("--width", type=int, default=128, help=argparse.SUPPRESS)
    ds.set_defaults(func=cmd_dataset)

    tr = sub.add_parser("train", help="train a network and export weights")
    tr.add_argument("--size", type=int, required=True)
    tr.add_argument("--mix", help="scale mix as 'n:prop,n:prop,...'")
    tr.add_argument("--epochs", type=int, default=3)
    tr.add_argument("--batch-size", type=int, default=32)
    tr.add_argument("--lr-max", type=float, default=5e-4)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--layers", type=int, default=6)
    tr.add_argument("--width", type=int, default=128)
    tr.add_argument("--dataset", help="reuse an existing labeled dataset file")
    tr.add_argument("--label-budget", default=labels.PSEUDO_LABEL_BUDGET)
    tr.add_argument("--weights-out", required=True)
    tr.add_argument("--log-out", required=True)
    tr.set_defaults(func=cmd_train)

    gc = sub.add_parser("gradcheck", help="verify gradients on a micro-batch")
    gc.add_argument("--n", type=int, default=8)
    gc.add_argument("--cases", type=int, default=2)
    gc.add_argument("--layers", type=int, default=2)
    gc.add_argument("--width", type=int, default=8)
    gc.add_argument("--count", type=int, default=50)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, labels.LabelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
