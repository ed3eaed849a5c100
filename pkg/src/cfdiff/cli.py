"""Command line entry point: ``cfdiff {generate-dataset,train,evaluate,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .config import load_config
from .errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfdiff", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("generate-dataset", "write train/test/healthy phantom splits"),
                        ("train", "train the tiny mask-conditioned (and Palette) denoisers"),
                        ("evaluate", "run every configured editing method and score it"),
                        ("sweep", "re-run evaluation over a grid of one parameter")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value config file (defaults to the desk-200 preset)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", required=True, help="output directory")
        if name in ("train", "evaluate", "sweep"):
            p.add_argument("--dataset", help="dataset directory (overrides dataset_dir)")
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=sorted(harness.SWEEP_AXES))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "generate-dataset":
            harness.cmd_generate_dataset(cfg, args.out, args.seed)
        elif args.command == "train":
            harness.cmd_train(cfg, args.out, args.seed, args.dataset)
        elif args.command == "evaluate":
            res = harness.cmd_evaluate(cfg, args.out, args.seed, args.dataset)
            _print_summary(res["summary"])
        else:
            harness.cmd_sweep(cfg, args.axis, args.out, args.seed, args.dataset)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to one exit code
        logging.getLogger("cfdiff").debug("runtime failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _print_summary(summary):
    if not summary:
        print("no methods evaluated")
        return
    print(f"{'method':<16}{'(1-Dice)*FD':>12}{'FD':>10}{'Dice':>8}{'IndErr':>9}{'HealthyMAE':>12}")
    for r in summary:
        print(f"{r['method']:<16}{r['combined']:>12.4f}{r['frechet']:>10.4f}{r['dice']:>8.3f}"
              f"{r['indirect_error']:>9.2f}{r['healthy_mae']:>12.4f}")


if __name__ == "__main__":
    sys.exit(main())
