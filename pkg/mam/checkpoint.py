"""Checkpoint directories.

Layout::

    <dir>/manifest.json   sorted-key JSON: schema_version, configs, step, metrics
    <dir>/arrays.pt       named CPU tensors (model_x.*, model_y.*, alpha.*, ema.*)
    <dir>/rng_state.pt    training generator and global torch RNG state
    <dir>/optimizer.pt    optimizer state (resume only)

The manifest is written last and records the SHA-256 of ``arrays.pt``, so a
directory without a manifest is incomplete and a truncated container is
detected before it is unpickled.
"""

from __future__ import annotations

import logging
import pickle
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import torch
from torch import Tensor

from mam.utils import (
    CorruptCheckpointError,
    SchemaVersionError,
    file_digest,
    read_json,
    write_json,
)

__all__ = ["SCHEMA_VERSION", "CheckpointData", "latest_checkpoint", "load_checkpoint", "save_checkpoint"]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

MANIFEST = "manifest.json"
ARRAYS = "arrays.pt"
RNG_STATE = "rng_state.pt"
OPTIMIZER = "optimizer.pt"


@dataclass
class CheckpointData:
    """Everything read back from a checkpoint directory."""

    manifest: dict[str, Any]
    arrays: dict[str, Tensor]
    rng_state: dict[str, Any]
    optimizer_state: Optional[dict[str, Any]]


def save_checkpoint(
    path: Path,
    arrays: dict[str, Tensor],
    manifest: dict[str, Any],
    rng_state: dict[str, Any],
    optimizer_state: Optional[dict[str, Any]] = None,
) -> Path:
    """Write a checkpoint directory and return it."""
    path.mkdir(parents=True, exist_ok=True)
    cpu_arrays = {name: t.detach().cpu().contiguous() for name, t in arrays.items()}
    torch.save(cpu_arrays, path / ARRAYS)
    torch.save(rng_state, path / RNG_STATE)
    if optimizer_state is not None:
        torch.save(optimizer_state, path / OPTIMIZER)
    full = dict(manifest)
    full["schema_version"] = SCHEMA_VERSION
    full["arrays_sha256"] = file_digest(path / ARRAYS)
    write_json(path / MANIFEST, full)
    logger.debug("Saved checkpoint %s (%d arrays)", path, len(cpu_arrays))
    return path


def _load_container(path: Path, weights_only: bool = True) -> Any:  # noqa: ANN401
    try:
        return torch.load(path, map_location="cpu", weights_only=weights_only)
    except (RuntimeError, EOFError, OSError, pickle.UnpicklingError, zipfile.BadZipFile) as e:
        ce = f"Corrupt checkpoint container {path}: {e}"
        raise CorruptCheckpointError(ce) from e


def load_checkpoint(path: Path) -> CheckpointData:
    """Read a checkpoint directory.

    Raises:
        CorruptCheckpointError: Missing files, digest mismatch or unreadable
            containers.
        SchemaVersionError: The manifest was written by a newer schema.
    """
    manifest_path = path / MANIFEST
    if not manifest_path.is_file():
        ce = f"No checkpoint manifest in {path}"
        raise CorruptCheckpointError(ce)
    try:
        manifest = read_json(manifest_path)
    except ValueError as e:
        ce = f"Unreadable checkpoint manifest {manifest_path}: {e}"
        raise CorruptCheckpointError(ce) from e

    version = manifest.get("schema_version")
    if not isinstance(version, int):
        ce = f"Checkpoint manifest {manifest_path} has no schema version"
        raise CorruptCheckpointError(ce)
    if version > SCHEMA_VERSION:
        se = f"Checkpoint schema version {version} is newer than supported {SCHEMA_VERSION}"
        raise SchemaVersionError(se)

    arrays_path = path / ARRAYS
    if not arrays_path.is_file():
        ce = f"Checkpoint {path} has no {ARRAYS}"
        raise CorruptCheckpointError(ce)
    if file_digest(arrays_path) != manifest.get("arrays_sha256"):
        ce = f"Checkpoint container {arrays_path} does not match its manifest digest"
        raise CorruptCheckpointError(ce)

    arrays = _load_container(arrays_path)
    rng_state = _load_container(path / RNG_STATE) if (path / RNG_STATE).is_file() else {}
    optimizer_state = (
        _load_container(path / OPTIMIZER) if (path / OPTIMIZER).is_file() else None
    )
    return CheckpointData(manifest, arrays, rng_state, optimizer_state)


def latest_checkpoint(run_dir: Path) -> Optional[Path]:
    """Newest complete ``step_*`` checkpoint under ``run_dir/checkpoints``."""
    root = run_dir / "checkpoints"
    if not root.is_dir():
        return None
    complete = [p for p in root.glob("step_*") if (p / MANIFEST).is_file()]
    if not complete:
        return None
    return max(complete, key=lambda p: int(p.name.removeprefix("step_")))
