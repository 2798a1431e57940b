"""Shared utilities for the mutually-aligned diffusion (mam) package.

This module provides the ambient pieces every other module leans on:

Classes:
    - MamError: Root of the package exception hierarchy, carries a CLI exit code
    - ConfigError, DataError, NumericalError, CheckpointError: Concrete failures

Functions:
    - setup_logging: Install a rich log handler on the package logger
    - num_threads: Worker cap read from ``MAM_NUM_THREADS``
    - seed_everything: Seed python, numpy and torch global generators
    - write_json / read_json: Stable, sorted JSON artifacts
    - file_digest: SHA-256 of a file, used for provenance checks

Example:
    ```python
    >>> from mam.utils import console, setup_logging
    >>> setup_logging(verbose=True)
    >>> console.print("[green]ready[/green]")
    ```
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
from pathlib import Path
from typing import Any

import numpy as np
import torch
from rich.console import Console
from rich.logging import RichHandler

__all__ = [
    "CheckpointError",
    "ConfigError",
    "CorruptCheckpointError",
    "DataError",
    "MamError",
    "NumericalError",
    "SchemaVersionError",
    "console",
    "file_digest",
    "num_threads",
    "read_json",
    "seed_everything",
    "setup_logging",
    "write_json",
]

console = Console()

logger = logging.getLogger("mam")

THREADS_ENV_VAR = "MAM_NUM_THREADS"


class MamError(Exception):
    """Base class for all errors raised by the package."""

    exit_code: int = 1


class ConfigError(MamError, ValueError):
    """Invalid configuration, flag or override."""

    exit_code = 2


class DataError(MamError, ValueError):
    """Missing, malformed or inconsistent input data."""

    exit_code = 3


class NumericalError(MamError, ArithmeticError):
    """Non-finite loss, divergent trajectory or similar numerical failure."""

    exit_code = 4


class CheckpointError(MamError):
    """Checkpoint could not be read."""

    exit_code = 3


class CorruptCheckpointError(CheckpointError):
    """The checkpoint container is truncated or unreadable."""


class SchemaVersionError(CheckpointError):
    """The manifest was written by a newer, unsupported schema."""


def setup_logging(verbose: bool = False) -> None:
    """Route the package logger through a rich handler.

    Args:
        verbose: Log at DEBUG level instead of INFO.
    """
    level = logging.DEBUG if verbose else logging.INFO
    logger.setLevel(level)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(console=console, show_path=False, markup=True)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
    logger.propagate = False


def num_threads(default: int = 1) -> int:
    """Return the worker cap from ``MAM_NUM_THREADS``.

    Args:
        default: Value used when the variable is unset.

    Returns:
        int: A positive worker count.

    Raises:
        ConfigError: If the variable is set but is not a positive integer.
    """
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError as e:
        ce = f"{THREADS_ENV_VAR} must be a positive integer, got {raw!r}"
        raise ConfigError(ce) from e
    if value < 1:
        ce = f"{THREADS_ENV_VAR} must be a positive integer, got {raw!r}"
        raise ConfigError(ce)
    return value


def apply_thread_cap() -> int:
    """Cap torch intra-op parallelism to ``MAM_NUM_THREADS`` when it is set."""
    threads = num_threads(default=torch.get_num_threads())
    torch.set_num_threads(threads)
    return threads


def seed_everything(seed: int) -> None:
    """Seed the python, numpy and torch global generators."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def write_json(path: Path, payload: dict[str, Any]) -> None:
    """Write ``payload`` as indented JSON with sorted keys.

    Sorted keys keep artifacts byte-identical across runs.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")


def read_json(path: Path) -> dict[str, Any]:
    """Read a JSON object from ``path``."""
    with path.open(encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, dict):
        ve = f"Expected a JSON object in {path}"
        raise ValueError(ve)
    return data


def file_digest(path: Path) -> str:
    """Return the hex SHA-256 digest of a file."""
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
