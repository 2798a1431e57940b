"""Paired sequences, their torch dataset view and on-disk dataset directories.

A dataset directory holds ``manifest.json`` (sorted keys), ``arrays.pt``
(``x``, ``y``, ``labels``) and, for synthetic data, ``hidden.pt`` with the
hidden trajectories. The hidden sidecar is never read by training code.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import Dataset

from mam.utils import DataError, file_digest, read_json, write_json

__all__ = [
    "DATASET_SCHEMA_VERSION",
    "PairDataset",
    "SequencePair",
    "load_dataset",
    "load_hidden",
    "save_dataset",
    "stack_pairs",
]

DATASET_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SequencePair:
    """One paired sample of two temporally aligned modalities.

    Attributes:
        x: First modality, ``[L, d_x]``.
        y: Second modality, ``[L, d_y]``.
        subject_id: Subject the sample was recorded from.
        profile_label: Task profile (synthetic: regime index).
        normalized: Whether fold statistics were already applied.
    """

    x: np.ndarray
    y: np.ndarray
    subject_id: str
    profile_label: int
    normalized: bool = False

    def __post_init__(self) -> None:
        if self.x.ndim != 2 or self.y.ndim != 2:  # noqa: PLR2004
            de = f"Pair arrays must be [L, d], got {self.x.shape} and {self.y.shape}"
            raise DataError(de)
        if self.x.shape[0] != self.y.shape[0]:
            de = f"Pair is not aligned: {self.x.shape[0]} vs {self.y.shape[0]} steps"
            raise DataError(de)

    @property
    def length(self) -> int:
        return self.x.shape[0]

    def with_arrays(self, x: np.ndarray, y: np.ndarray, normalized: bool) -> SequencePair:
        return replace(self, x=x, y=y, normalized=normalized)


def stack_pairs(pairs: Sequence[SequencePair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack pairs into ``x [N, L, d_x]``, ``y [N, L, d_y]`` and labels ``[N]``."""
    if not pairs:
        de = "No sequence pairs to stack"
        raise DataError(de)
    lengths = {p.length for p in pairs}
    if len(lengths) != 1:
        de = f"Pairs have inconsistent lengths: {sorted(lengths)}"
        raise DataError(de)
    x = np.stack([p.x for p in pairs]).astype(np.float32)
    y = np.stack([p.y for p in pairs]).astype(np.float32)
    labels = np.asarray([p.profile_label for p in pairs], dtype=np.int64)
    return x, y, labels


class PairDataset(Dataset):
    """Torch view of a list of pairs: ``(x, y, label)`` per item."""

    def __init__(self, pairs: Sequence[SequencePair]) -> None:
        x, y, labels = stack_pairs(pairs)
        self.x = torch.from_numpy(x)
        self.y = torch.from_numpy(y)
        self.labels = torch.from_numpy(labels)

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, index: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.x[index], self.y[index], self.labels[index]


def save_dataset(
    path: Path,
    pairs: Sequence[SequencePair],
    metadata: dict[str, Any],
    hidden: Optional[np.ndarray] = None,
) -> Path:
    """Write a dataset directory and return it."""
    path.mkdir(parents=True, exist_ok=True)
    x, y, labels = stack_pairs(pairs)
    arrays = {
        "x": torch.from_numpy(x),
        "y": torch.from_numpy(y),
        "labels": torch.from_numpy(labels),
    }
    torch.save(arrays, path / "arrays.pt")
    if hidden is not None:
        torch.save({"hidden": torch.from_numpy(np.ascontiguousarray(hidden))}, path / "hidden.pt")
    manifest = {
        "schema_version": DATASET_SCHEMA_VERSION,
        "n_sequences": len(pairs),
        "seq_len": int(x.shape[1]),
        "d_x": int(x.shape[2]),
        "d_y": int(y.shape[2]),
        "subjects": [p.subject_id for p in pairs],
        "normalized": [p.normalized for p in pairs],
        "arrays_sha256": file_digest(path / "arrays.pt"),
        "metadata": metadata,
    }
    write_json(path / "manifest.json", manifest)
    return path


def load_dataset(path: Path) -> tuple[list[SequencePair], dict[str, Any]]:
    """Read a dataset directory written by :func:`save_dataset`.

    Returns:
        tuple: The pairs and the manifest.

    Raises:
        DataError: If the directory is missing, incomplete or inconsistent.
    """
    manifest_path = path / "manifest.json"
    arrays_path = path / "arrays.pt"
    if not manifest_path.is_file() or not arrays_path.is_file():
        de = f"{path} is not a dataset directory (manifest.json or arrays.pt missing)"
        raise DataError(de)
    try:
        manifest = read_json(manifest_path)
        arrays = torch.load(arrays_path, map_location="cpu", weights_only=True)
    except (OSError, ValueError, RuntimeError) as e:
        de = f"Cannot read dataset {path}: {e}"
        raise DataError(de) from e
    if manifest.get("schema_version") != DATASET_SCHEMA_VERSION:
        de = f"Unsupported dataset schema version {manifest.get('schema_version')!r}"
        raise DataError(de)

    x, y, labels = arrays["x"].numpy(), arrays["y"].numpy(), arrays["labels"].numpy()
    subjects = manifest["subjects"]
    normalized = manifest.get("normalized", [False] * len(subjects))
    if not len(subjects) == x.shape[0] == y.shape[0] == labels.shape[0]:
        de = f"Dataset {path} has inconsistent lengths"
        raise DataError(de)
    pairs = [
        SequencePair(x[i], y[i], str(subjects[i]), int(labels[i]), bool(normalized[i]))
        for i in range(x.shape[0])
    ]
    return pairs, manifest


def load_hidden(path: Path) -> np.ndarray:
    """Hidden trajectories ``[N, L, h]`` of a synthetic dataset."""
    sidecar = path / "hidden.pt"
    if not sidecar.is_file():
        de = f"{path} has no hidden-state sidecar"
        raise DataError(de)
    return torch.load(sidecar, map_location="cpu", weights_only=True)["hidden"].numpy()
