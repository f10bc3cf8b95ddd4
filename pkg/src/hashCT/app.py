"""
This module sets up the command-line interface of hashCT.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from hashCT.api.v1.cmd import (
    CmdException,
    cmd_ablate,
    cmd_eval,
    cmd_fdk,
    cmd_reconstruct,
    cmd_simulate,
    cmd_train,
    exit_code,
)
from hashCT.models.v1.trainer import TrainMode
from hashCT.util.v1.config import ENV_LOG_LEVEL, load_config

logger = logging.getLogger("hashCT")

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hashct",
        description="Hash-encoded neural field reconstruction for truncated-FOV CT.",
    )
    parser.add_argument("--log-level", default=None, help="Logging level.")
    commands = parser.add_subparsers(dest="command", required=True)

    def _command(name, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("config", help="TOML run configuration.")
        sub.add_argument("--output-dir", default=None, help="Overrides output_dir.")
        sub.add_argument("--seed", type=int, default=None, help="Overrides seed.")
        return sub

    _command("simulate", "Project a phantom into a sinogram.")
    train = _command("train", "Train the neural field.")
    train.add_argument(
        "--mode", choices=[m.value for m in TrainMode], default=None
    )
    train.add_argument("--resume", action="store_true", help="Continue a checkpoint.")
    _command("reconstruct", "Evaluate a trained field on the voxel grid.")
    fdk = _command("fdk", "Reconstruct with the FDK baseline.")
    fdk.add_argument(
        "--extrapolate",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Extend truncated rows before filtering.",
    )
    evaluate = _command("eval", "Score volumes against the ground truth.")
    evaluate.add_argument("volumes", nargs="+", help="Volume containers.")
    _command("ablate", "Sweep restricted levels and outer step sizes.")
    return parser


def run(args: argparse.Namespace):
    overrides = {}
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        config = load_config(args.config, overrides)
    except Exception as e:
        raise CmdException(exit_code(e), str(e)) from e

    if args.command == "simulate":
        return cmd_simulate(config)
    if args.command == "train":
        mode = TrainMode(args.mode) if args.mode else None
        return cmd_train(config, mode=mode, resume=args.resume)
    if args.command == "reconstruct":
        return cmd_reconstruct(config)
    if args.command == "fdk":
        return cmd_fdk(config, extrapolate=args.extrapolate)
    if args.command == "eval":
        return cmd_eval(config, args.volumes)
    return cmd_ablate(config)


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the ``hashct`` console script.

    Returns:
        int: 0 on success, 2 for configuration errors, 3 for numerical
        failures, 1 otherwise.
    """
    # Load environment variables from a .env file
    load_dotenv(override=True)
    args = build_parser().parse_args(argv)
    level = args.log_level or os.getenv(ENV_LOG_LEVEL, "INFO")
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT)

    try:
        response = run(args)
    except CmdException as e:
        logger.error("%s failed: %s", args.command, e.detail)
        return e.code
    print(response.model_dump_json(indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
