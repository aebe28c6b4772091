"""Command-line entry point: ``asldld {phantom,train,denoise,evaluate,gradcheck}``.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure, 3 gradcheck failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import ConfigError, load_config

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_flags(suppress: bool) -> argparse.ArgumentParser:
    # flags may appear before or after the subcommand; the subcommand copy must
    # not reset values given before it
    common = argparse.ArgumentParser(add_help=False,
                                     argument_default=argparse.SUPPRESS if suppress else None)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="master seed (u64)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--overwrite", action="store_true", help="replace existing outputs")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    if not suppress:
        common.set_defaults(overwrite=False, verbose=False, set=[])
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="asldld", description=__doc__.splitlines()[0],
                     parents=[_common_flags(False)])
    common = _common_flags(True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [
        ("phantom", "generate synthetic subjects and a manifest"),
        ("train", "train the denoiser on the training subjects"),
        ("denoise", "denoise the held-out subjects' meanCBF-10 volumes"),
        ("evaluate", "write metrics.csv comparing denoising methods"),
        ("gradcheck", "finite-difference check of every backward pass"),
        ("dump-config", "print the effective configuration"),
    ]:
        sub.add_parser(name, help=help_, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            print("asldld: error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_USAGE
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        print(f"asldld: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "phantom":
            pipeline.cmd_phantom(cfg, args.overwrite)
        elif args.command == "train":
            pipeline.cmd_train(cfg, args.overwrite)
        elif args.command == "denoise":
            pipeline.cmd_denoise(cfg, args.overwrite)
        elif args.command == "evaluate":
            pipeline.cmd_evaluate(cfg, args.overwrite)
        elif args.command == "gradcheck":
            return EXIT_OK if pipeline.cmd_gradcheck(cfg) else EXIT_GRADCHECK
        elif args.command == "dump-config":
            sys.stdout.write(cfg.dumps())
    except ConfigError as exc:
        print(f"asldld: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - surfaced as exit status 2
        logging.getLogger("asldld").debug("runtime failure", exc_info=True)
        print(f"asldld: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
