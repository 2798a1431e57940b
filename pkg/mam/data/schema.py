"""Canonical channel layout of the gait biomechanics modalities.

A canonical CSV has one row per sample and the columns::

    subject_id, profile[, time], <channels of every modality used>

``profile`` is the locomotion task index in ``[0, 27)`` built from the
treadmill speed and incline grid by :func:`profile_index`. ``time`` is
optional; when present it must be uniformly spaced within each
(subject, profile) stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import pandas as pd

from mam.utils import DataError

__all__ = [
    "INCLINES",
    "MODALITIES",
    "SPEEDS",
    "ModalitySchema",
    "get_schema",
    "profile_index",
    "to_canonical_frame",
]

SUBJECT_COLUMN = "subject_id"
PROFILE_COLUMN = "profile"
TIME_COLUMN = "time"

SPEEDS = (0.8, 1.0, 1.2)
INCLINES = (-10.0, -7.5, -5.0, -2.5, 0.0, 2.5, 5.0, 7.5, 10.0)
N_PROFILES = len(SPEEDS) * len(INCLINES)

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class ModalitySchema:
    """Named modality and its ordered channel columns."""

    name: str
    channels: tuple[str, ...]

    @property
    def width(self) -> int:
        return len(self.channels)


def _channels(kind: str, parts: tuple[str, ...]) -> tuple[str, ...]:
    return tuple(f"{part}_{kind}_{axis}" for part in parts for axis in AXES)


MODALITIES: dict[str, ModalitySchema] = {
    "kinematics": ModalitySchema(
        "kinematics", _channels("angle", ("hip", "knee", "ankle", "foot", "pelvis"))
    ),
    "kinetics": ModalitySchema("kinetics", _channels("moment", ("hip", "knee", "ankle"))),
    "grf": ModalitySchema("grf", tuple(f"grf_{axis}" for axis in AXES)),
}


def get_schema(name: str) -> ModalitySchema:
    """Look up a modality by name."""
    try:
        return MODALITIES[name]
    except KeyError:
        de = f"Unknown modality {name!r}; choose from {', '.join(MODALITIES)}"
        raise DataError(de) from None


def profile_index(speed: float, incline: float) -> int:
    """Task profile of a (speed [m/s], incline [deg]) pair, in ``[0, 27)``."""
    speeds = np.asarray(SPEEDS)
    inclines = np.asarray(INCLINES)
    si = int(np.argmin(np.abs(speeds - speed)))
    ii = int(np.argmin(np.abs(inclines - incline)))
    if not np.isclose(speeds[si], speed) or not np.isclose(inclines[ii], incline):
        de = f"({speed} m/s, {incline} deg) is not on the task grid"
        raise DataError(de)
    return si * len(INCLINES) + ii


def to_canonical_frame(
    wide: pd.DataFrame,
    subject_id: str,
    speed: float,
    incline: float,
    column_map: Mapping[str, str],
) -> pd.DataFrame:
    """Convert one recording to the canonical CSV layout.

    Args:
        wide: One (subject, task) recording, one row per sample.
        subject_id: Subject identifier to stamp on every row.
        speed: Treadmill speed in m/s.
        incline: Treadmill incline in degrees.
        column_map: Source column name to canonical channel name.

    Returns:
        pd.DataFrame: Frame with ``subject_id``, ``profile`` and the mapped
        channels, in that order.
    """
    missing = sorted(set(column_map) - set(wide.columns))
    if missing:
        de = f"Source columns not found: {', '.join(missing)}"
        raise DataError(de)
    frame = wide[list(column_map)].rename(columns=dict(column_map))
    frame.insert(0, PROFILE_COLUMN, profile_index(speed, incline))
    frame.insert(0, SUBJECT_COLUMN, str(subject_id))
    if TIME_COLUMN in wide.columns and TIME_COLUMN not in frame.columns:
        frame.insert(2, TIME_COLUMN, wide[TIME_COLUMN].to_numpy())
    return frame.reset_index(drop=True)
