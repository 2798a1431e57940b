"""Canonical CSV ingestion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from mam.data.dataset import SequencePair
from mam.data.schema import (
    N_PROFILES,
    PROFILE_COLUMN,
    SUBJECT_COLUMN,
    TIME_COLUMN,
    ModalitySchema,
)
from mam.utils import DataError

__all__ = ["MAX_NAN_RUN", "IngestReport", "ingest_csv", "longest_nan_run"]

logger = logging.getLogger(__name__)

MAX_NAN_RUN = 5


@dataclass
class IngestReport:
    """Windows produced from a CSV and what was left out."""

    pairs: list[SequencePair] = field(default_factory=list)
    dropped_samples: int = 0
    rejected_windows: int = 0


def longest_nan_run(values: np.ndarray) -> int:
    """Longest run of consecutive NaNs in any column of ``values``."""
    longest = 0
    for column in np.atleast_2d(values.T):
        run = 0
        for missing in np.isnan(column):
            run = run + 1 if missing else 0
            longest = max(longest, run)
    return longest


def _check_sampling(stream: pd.DataFrame, key: tuple[str, int]) -> None:
    if TIME_COLUMN not in stream.columns or len(stream) < 3:  # noqa: PLR2004
        return
    steps = np.diff(stream[TIME_COLUMN].to_numpy(dtype=float))
    if not np.allclose(steps, steps[0], rtol=1e-3, atol=1e-9) or steps[0] <= 0:
        de = f"Stream {key} is not uniformly sampled"
        raise DataError(de)


def _window_arrays(
    window: pd.DataFrame, schema_x: ModalitySchema, schema_y: ModalitySchema
) -> tuple[np.ndarray, np.ndarray] | None:
    channels = list(schema_x.channels) + list(schema_y.channels)
    values = window[channels].to_numpy(dtype=float)
    if longest_nan_run(values) > MAX_NAN_RUN:
        return None
    if np.isnan(values).any():
        filled = pd.DataFrame(values).interpolate(limit_direction="both")
        values = filled.to_numpy()
    x = values[:, : schema_x.width].astype(np.float32)
    y = values[:, schema_x.width :].astype(np.float32)
    return x, y


def ingest_csv(
    path: Path,
    schema_x: ModalitySchema,
    schema_y: ModalitySchema,
    seq_len: int = 300,
) -> IngestReport:
    """Segment a canonical CSV into aligned, non-overlapping windows.

    Each (subject, profile) stream is cut into ``len // seq_len`` windows; the
    remainder is dropped and counted. Gaps of at most five consecutive NaNs
    are linearly interpolated; windows with a longer gap are rejected.
    Normalization happens later, per fold, with training statistics.

    Args:
        path: CSV file in the canonical layout.
        schema_x: First modality.
        schema_y: Second modality.
        seq_len: Window length L.

    Returns:
        IngestReport: Windows in file order plus drop counts.

    Raises:
        DataError: On missing columns, bad profiles or uneven sampling.
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        de = f"Cannot read {path}: {e}"
        raise DataError(de) from e

    required = [SUBJECT_COLUMN, PROFILE_COLUMN, *schema_x.channels, *schema_y.channels]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        de = f"{path} is missing columns: {', '.join(missing)}"
        raise DataError(de)
    profiles = frame[PROFILE_COLUMN]
    if profiles.isna().any() or not profiles.between(0, N_PROFILES - 1).all():
        de = f"{path} has profile values outside [0, {N_PROFILES})"
        raise DataError(de)

    report = IngestReport()
    frame[SUBJECT_COLUMN] = frame[SUBJECT_COLUMN].astype(str)
    for (subject, profile), stream in frame.groupby(
        [SUBJECT_COLUMN, PROFILE_COLUMN], sort=False
    ):
        _check_sampling(stream, (subject, int(profile)))
        count = len(stream) // seq_len
        report.dropped_samples += len(stream) - count * seq_len
        for i in range(count):
            window = stream.iloc[i * seq_len : (i + 1) * seq_len]
            arrays = _window_arrays(window, schema_x, schema_y)
            if arrays is None:
                report.rejected_windows += 1
                continue
            report.pairs.append(SequencePair(*arrays, str(subject), int(profile)))

    logger.info(
        "Ingested %d windows from %s (%d samples dropped, %d windows rejected)",
        len(report.pairs),
        path,
        report.dropped_samples,
        report.rejected_windows,
    )
    if not report.pairs:
        de = f"{path} yielded no complete windows of length {seq_len}"
        raise DataError(de)
    return report
