"""Denoising, energy and joint objective terms."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from mam.config import ObjectiveConfig
from mam.utils import NumericalError

__all__ = [
    "LOG_COLUMNS",
    "AlphaParam",
    "LossBreakdown",
    "denoise_loss",
    "energy",
    "energy_loss",
    "total_loss",
]

GAMMA = ObjectiveConfig.GAMMA


def _same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        ve = f"Shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}"
        raise ValueError(ve)


def denoise_loss(x0: Tensor, x0_hat: Tensor) -> Tensor:
    """Mean squared error between the clean sample and its estimate."""
    _same_shape(x0, x0_hat)
    return F.mse_loss(x0_hat, x0)


def energy(x: Tensor) -> Tensor:
    """Kinetic energy per step, ``0.5 * (x[l + 1] - x[l]) ** 2`` along time.

    Time is the second-to-last axis, so both ``[L, d]`` and ``[B, L, d]``
    inputs work; the result has one step fewer.
    """
    if x.dim() < 2 or x.shape[-2] < 2:  # noqa: PLR2004
        ve = f"energy needs at least 2 time steps, got shape {tuple(x.shape)}"
        raise ValueError(ve)
    velocity = x[..., 1:, :] - x[..., :-1, :]
    return 0.5 * velocity.pow(2)


def energy_loss(x0: Tensor, x0_hat: Tensor) -> Tensor:
    """Mean squared error between the energies of two sequences."""
    _same_shape(x0, x0_hat)
    return F.mse_loss(energy(x0_hat), energy(x0))


class AlphaParam(nn.Module):
    """Learned alignment weight.

    ``softplus`` weighs the alignment term by ``softplus(raw)``.
    ``uncertainty`` contributes ``exp(-raw) * align + raw``, which keeps the
    weight from collapsing to zero at no cost.
    """

    def __init__(self, mode: str = "uncertainty", init: float = 0.0) -> None:
        super().__init__()
        if mode not in ("softplus", "uncertainty"):
            ve = f"Unknown alpha mode {mode!r}"
            raise ValueError(ve)
        self.mode = mode
        self.raw = nn.Parameter(torch.tensor(float(init)))

    @property
    def effective(self) -> Tensor:
        """Multiplier currently applied to the alignment loss."""
        if self.mode == "softplus":
            return F.softplus(self.raw)
        return torch.exp(-self.raw)

    def forward(self, align: Tensor) -> Tensor:
        weighted = self.effective.to(align.dtype) * align
        if self.mode == "uncertainty":
            weighted = weighted + self.raw.to(align.dtype)
        return weighted


@dataclass
class LossBreakdown:
    """All parts of the joint objective for one batch."""

    denoise_x: Tensor
    denoise_y: Tensor
    energy_x: Tensor
    energy_y: Tensor
    align: Tensor
    alpha_effective: Tensor
    total: Tensor

    def as_row(self) -> dict[str, float]:
        """Plain floats keyed by the training-log column names."""
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}


LOG_COLUMNS = ("step", *(f.name for f in fields(LossBreakdown)))


def total_loss(
    denoise_x: Tensor,
    denoise_y: Tensor,
    energy_x: Tensor,
    energy_y: Tensor,
    align: Tensor,
    alpha: AlphaParam,
    use_align: bool = True,
    use_energy: bool = True,
) -> LossBreakdown:
    """Assemble the joint objective.

    ``total = denoise_x + denoise_y + alpha(align) + GAMMA * (energy_x + energy_y)``
    with ``GAMMA = 1``. ``use_align=False`` removes the alpha term entirely
    (the unaligned baseline) and ``use_energy=False`` removes the energy term.

    Raises:
        NumericalError: If any part or the total is not finite.
    """
    total = denoise_x + denoise_y
    if use_align:
        total = total + alpha(align)
    if use_energy:
        total = total + GAMMA * (energy_x + energy_y)

    parts = LossBreakdown(
        denoise_x=denoise_x,
        denoise_y=denoise_y,
        energy_x=energy_x,
        energy_y=energy_y,
        align=align,
        alpha_effective=alpha.effective.detach(),
        total=total,
    )
    bad = [name for name, value in parts.as_row().items() if not math.isfinite(value)]
    if bad:
        ne = f"Non-finite loss terms: {', '.join(bad)}"
        raise NumericalError(ne)
    return parts
