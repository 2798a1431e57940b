"""Per-channel min-max scaling fitted on a training split."""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np
from sklearn.preprocessing import MinMaxScaler

from mam.data.dataset import SequencePair
from mam.utils import DataError

__all__ = ["MinMaxNormalizer"]


def _scaler_from_bounds(lo: Sequence[float], hi: Sequence[float]) -> MinMaxScaler:
    scaler = MinMaxScaler()
    scaler.fit(np.vstack([np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)]))
    return scaler


class MinMaxNormalizer:
    """Maps each channel of both modalities to ``[0, 1]`` on the fitted split.

    Pairs carry a ``normalized`` flag, so applying the normalizer to a split
    twice leaves it unchanged.

    Example:
        ```python
        >>> norm = MinMaxNormalizer.fit(train_pairs)
        >>> train, test = norm.apply(train_pairs), norm.apply(test_pairs)
        ```
    """

    def __init__(self, scaler_x: MinMaxScaler, scaler_y: MinMaxScaler) -> None:
        self.scaler_x = scaler_x
        self.scaler_y = scaler_y

    @classmethod
    def fit(cls, pairs: Sequence[SequencePair]) -> MinMaxNormalizer:
        """Fit channel ranges on ``pairs`` (the training split)."""
        if not pairs:
            de = "Cannot fit normalization statistics on an empty split"
            raise DataError(de)
        if any(p.normalized for p in pairs):
            de = "Normalization statistics must be fitted on raw pairs"
            raise DataError(de)
        scaler_x = MinMaxScaler().fit(np.concatenate([p.x for p in pairs]))
        scaler_y = MinMaxScaler().fit(np.concatenate([p.y for p in pairs]))
        return cls(scaler_x, scaler_y)

    def apply(self, pairs: Sequence[SequencePair]) -> list[SequencePair]:
        """Scale every raw pair; already normalized pairs pass through."""
        out = []
        for pair in pairs:
            if pair.normalized:
                out.append(pair)
                continue
            x = self.scaler_x.transform(pair.x).astype(np.float32)
            y = self.scaler_y.transform(pair.y).astype(np.float32)
            out.append(pair.with_arrays(x, y, normalized=True))
        return out

    def to_dict(self) -> dict[str, Any]:
        """Frozen statistics for the fold manifest."""
        return {
            "x_min": self.scaler_x.data_min_.tolist(),
            "x_max": self.scaler_x.data_max_.tolist(),
            "y_min": self.scaler_y.data_min_.tolist(),
            "y_max": self.scaler_y.data_max_.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MinMaxNormalizer:
        """Rebuild a normalizer from :meth:`to_dict` output."""
        return cls(
            _scaler_from_bounds(data["x_min"], data["x_max"]),
            _scaler_from_bounds(data["y_min"], data["y_max"]),
        )
