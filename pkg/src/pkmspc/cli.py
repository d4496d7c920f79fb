"""Command-line entry point ``pkmspc``.

Every subcommand accepts the same run options; values given on the command
line override those from ``--config``. Stage subcommands pick up the files a
previous stage left in the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import config as config_module
from .config import load_config
from .errors import InputError, PkmspcError, StageError
from .pipeline import STAGES, run_pipeline

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_COMMANDS = {
    "calibrate": (("fit",), "deterministic calibration on labelled data (gpc or kpcr route)"),
    "tune-unsupervised": (("fit",), "label-free lengthscale selection and pseudo-labels"),
    "sample": (("sample",), "draw the posterior chain around theta_hat"),
    "propagate": (("propagate",), "per-draw charts, limits and contributions"),
    "chart": (("plot",), "render the chart and contribution files as SVG"),
    "evaluate": (("evaluate",), "FAR, FDR, CI, AUC and F1 against the monitor labels"),
    "run": (STAGES, "all stages end to end"),
}


def _key_help() -> dict:
    """One-line help per config key, taken from the config module's key table."""
    table = {}
    for line in (config_module.__doc__ or "").splitlines():
        parts = line.split(None, 1)
        if len(parts) == 2 and parts[0] in config_module.KEYS:
            table[parts[0]] = parts[1].strip()
    return table


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    helps = _key_help()
    for key in config_module.KEYS:
        common.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="VALUE",
                            help=helps.get(key))
    common.add_argument("--no-plots", dest="plots", action="store_const", const="false",
                        help="same as --plots false")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="pkmspc", description="Probabilistic kernel-PCA process monitoring.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in _COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {key: getattr(args, key) for key in config_module.KEYS}
    try:
        cfg = load_config(args.config, **overrides)
        unsupervised = cfg.unsupervised_method is not None
        if args.command == "calibrate" and unsupervised:
            raise InputError("calibrate needs route gpc or kpcr; use tune-unsupervised")
        if args.command == "tune-unsupervised" and not unsupervised:
            raise InputError("tune-unsupervised needs route unsupervised:M1..M10")
        manifest = run_pipeline(cfg, _COMMANDS[args.command][0])
    except StageError as exc:
        print(f"pkmspc: stage {exc.stage!r} failed: {exc.cause}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc.cause, InputError) else EXIT_FAILURE
    except InputError as exc:
        print(f"pkmspc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PkmspcError as exc:
        print(f"pkmspc: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.command == "evaluate" and manifest.get("metrics"):
        print(json.dumps(manifest["metrics"], indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
