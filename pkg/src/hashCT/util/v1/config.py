"""
This module loads run configurations from TOML, applies environment
overrides and writes run manifests.
"""

import hashlib
import json
import logging
import os
import platform
import tomllib
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import scipy

import hashCT
from hashCT.models.v1.cmd import RunConfig
from hashCT.util.v1.errors import ConfigError

logger = logging.getLogger(__name__)

ENV_WORKERS = "HASHCT_WORKERS"
ENV_OUTPUT_DIR = "HASHCT_OUTPUT_DIR"
ENV_LOG_LEVEL = "HASHCT_LOG_LEVEL"


def env_overrides() -> dict:
    """Top-level keys taken from the environment."""
    overrides = {}
    workers = os.getenv(ENV_WORKERS)
    if workers:
        try:
            overrides["workers"] = int(workers)
        except ValueError as e:
            raise ConfigError(f"{ENV_WORKERS} must be an integer, got {workers!r}") from e
    output_dir = os.getenv(ENV_OUTPUT_DIR)
    if output_dir:
        overrides["output_dir"] = output_dir
    return overrides


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Read a TOML run configuration.

    Args:
        path: TOML file.
        overrides (dict, optional): Top-level keys replacing file values,
            applied after the environment.

    Returns:
        RunConfig: The validated configuration.

    Raises:
        ConfigError: If the file is missing or not valid TOML.
        pydantic.ValidationError: If any section violates its invariants.
    """
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError as e:
        raise ConfigError(f"config file {path} not found") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config file {path} is not valid TOML: {e}") from e
    data.update(env_overrides())
    data.update(overrides or {})
    config = RunConfig.model_validate(data)
    logger.info("Loaded config %s", path)
    return config


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the resolved configuration as canonical JSON."""
    payload = json.dumps(config.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def write_manifest(
    output_dir, command: str, config: RunConfig, wall_clock_s: float, files: Iterable
) -> Path:
    """Record what produced the artifacts of a run.

    Args:
        output_dir: Run directory.
        command (str): Command name.
        config (RunConfig): Resolved configuration.
        wall_clock_s (float): Duration of the command.
        files: Paths written by the command.

    Returns:
        Path: The manifest file.
    """
    output_dir = Path(output_dir)
    manifest = {
        "command": command,
        "config_sha256": config_hash(config),
        "config": config.model_dump(mode="json"),
        "seed": config.seed,
        "versions": {
            "hashCT": hashCT.__version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "wall_clock_s": wall_clock_s,
        "files": sorted(str(Path(f).name) for f in files),
    }
    path = output_dir / "manifest.json"
    with open(path, "w") as handle:
        json.dump(manifest, handle, indent=2)
    return path
