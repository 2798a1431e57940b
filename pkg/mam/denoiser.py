"""Conditional transformer denoiser for one modality.

The noisy input is projected to the model width, combined with positional
and timestep embeddings and run through an encoder stack; the encoder output
is the latent trajectory used for alignment. The clean other-modality
condition is embedded the same way and decoded with cross-attention that
queries the encoded noisy input, then projected back to the input width.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor, nn

from mam.config import DenoiserConfig

__all__ = [
    "Denoiser",
    "LatentTrajectory",
    "TimestepEmbedder",
    "count_params",
    "denoise_forward",
    "extract_windows",
    "sinusoidal_embedding",
    "sinusoidal_table",
]

logger = logging.getLogger(__name__)


def sinusoidal_embedding(values: Tensor, dim: int, max_period: float = 10000.0) -> Tensor:
    """Embed a batch of scalars into ``dim`` sine/cosine features."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float32) / max(half, 1)
    ).to(values.device)
    args = values.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def sinusoidal_table(max_len: int, dim: int) -> Tensor:
    """Fixed positional table of shape ``[max_len, dim]``."""
    return sinusoidal_embedding(torch.arange(max_len), dim)


class TimestepEmbedder(nn.Module):
    """Sinusoidal step embedding followed by a SiLU MLP."""

    def __init__(self, d_model: int, num_steps: int) -> None:
        super().__init__()
        self.d_model = d_model
        self.num_steps = num_steps
        self.mlp = nn.Sequential(
            nn.Linear(d_model, d_model),
            nn.SiLU(),
            nn.Linear(d_model, d_model),
        )

    def forward(self, t: Tensor) -> Tensor:
        if t.numel() and (int(t.min()) < 1 or int(t.max()) > self.num_steps):
            ve = f"Timestep out of range [1, {self.num_steps}]: {t.tolist()}"
            raise ValueError(ve)
        emb = sinusoidal_embedding(t, self.d_model)
        return self.mlp(emb.to(self.mlp[0].weight.dtype))


class Denoiser(nn.Module):
    """Conditional x0-predicting denoiser.

    Args:
        config: Architecture bound to this modality's widths.

    Example:
        ```python
        >>> cfg = DenoiserConfig(d_in=6, d_cond=4, num_steps=50)
        >>> model = Denoiser(cfg)
        >>> x0_hat, z = model(x_t, y, t)
        ```
    """

    def __init__(self, config: DenoiserConfig) -> None:
        super().__init__()
        self.config = config
        self.num_steps = config.num_steps
        self.d_out = config.d_in

        self.input_proj = nn.Linear(config.d_in, config.d_model)
        self.cond_embed = nn.Linear(config.d_cond, config.d_model)
        self.time_embed = TimestepEmbedder(config.d_model, config.num_steps)
        self.register_buffer(
            "positions", sinusoidal_table(config.max_len, config.d_model), persistent=False
        )

        enc_layer = nn.TransformerEncoderLayer(
            d_model=config.d_model,
            nhead=config.n_heads,
            dim_feedforward=config.ffn_width,
            dropout=config.dropout,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            enc_layer, num_layers=config.n_layers_enc, enable_nested_tensor=False
        )
        dec_layer = nn.TransformerDecoderLayer(
            d_model=config.d_model,
            nhead=config.n_heads,
            dim_feedforward=config.ffn_width,
            dropout=config.dropout,
            batch_first=True,
        )
        self.decoder = nn.TransformerDecoder(dec_layer, num_layers=config.n_layers_dec)
        self.output_proj = nn.Linear(config.d_model, config.d_in)

    def _check_inputs(self, x_t: Tensor, cond: Tensor, t: Tensor) -> None:
        cfg = self.config
        if x_t.dim() != 3 or x_t.shape[-1] != cfg.d_in:  # noqa: PLR2004
            ve = f"x_t must be [B, L, {cfg.d_in}], got {tuple(x_t.shape)}"
            raise ValueError(ve)
        if cond.shape[:2] != x_t.shape[:2] or cond.shape[-1] != cfg.d_cond:
            ve = (
                f"cond must be [{x_t.shape[0]}, {x_t.shape[1]}, {cfg.d_cond}], "
                f"got {tuple(cond.shape)}"
            )
            raise ValueError(ve)
        if x_t.shape[1] > cfg.max_len:
            ve = f"Sequence length {x_t.shape[1]} exceeds max_len {cfg.max_len}"
            raise ValueError(ve)
        if t.shape != (x_t.shape[0],):
            ve = f"t must hold one step per batch element, got {tuple(t.shape)}"
            raise ValueError(ve)

    def encode(self, x_t: Tensor, t: Tensor) -> Tensor:
        """Latent trajectory ``h(x_t, t)`` of shape ``[B, L, d_model]``."""
        steps = self.time_embed(t)[:, None, :]
        h = self.input_proj(x_t)
        pos = self.positions[: x_t.shape[1]].to(h.dtype)
        return self.encoder(h + pos + steps)

    def forward(self, x_t: Tensor, cond: Tensor, t: Tensor) -> tuple[Tensor, Tensor]:
        """Predict the clean sequence and return it with the encoder latent."""
        t = torch.as_tensor(t, dtype=torch.long, device=x_t.device)
        self._check_inputs(x_t, cond, t)
        z = self.encode(x_t, t)
        steps = self.time_embed(t)[:, None, :]
        pos = self.positions[: x_t.shape[1]].to(z.dtype)
        queries = self.cond_embed(cond) + pos + steps
        decoded = self.decoder(queries, z)
        return self.output_proj(decoded), z

    def predict_x0(self, x_t: Tensor, cond: Tensor, t: Tensor) -> Tensor:
        """Clean-signal estimate only (sampler interface)."""
        return self.forward(x_t, cond, t)[0]


@dataclass(frozen=True)
class LatentTrajectory:
    """Latent sequence and its partition into contiguous windows.

    Attributes:
        z: Latents of shape ``[B, L, d_Z]``.
        window_len: Window length C.
        windows: View of shape ``[B, M, C, d_Z]`` with ``M = L // C``.
        dropped: Trailing steps left out of the partition.
    """

    z: Tensor
    window_len: int
    windows: Tensor
    dropped: int

    @property
    def num_windows(self) -> int:
        return self.windows.shape[1]


def extract_windows(z: Tensor, window_len: int) -> LatentTrajectory:
    """Partition ``z`` into ``L // window_len`` non-overlapping windows.

    Raises:
        ValueError: If ``window_len`` is not in ``[1, L]``.
    """
    if z.dim() != 3:  # noqa: PLR2004
        ve = f"Latents must be [B, L, d], got {tuple(z.shape)}"
        raise ValueError(ve)
    batch, length, width = z.shape
    if window_len < 1 or window_len > length:
        ve = f"window_len must lie in [1, {length}], got {window_len}"
        raise ValueError(ve)
    count = length // window_len
    dropped = length - count * window_len
    if dropped:
        logger.debug("Dropping %d trailing latent steps (L=%d, C=%d)", dropped, length, window_len)
    windows = z[:, : count * window_len].reshape(batch, count, window_len, width)
    return LatentTrajectory(z=z, window_len=window_len, windows=windows, dropped=dropped)


def denoise_forward(
    model: Denoiser,
    x_t: Tensor,
    cond: Tensor,
    t: Tensor,
    window_len: Optional[int] = None,
) -> tuple[Tensor, LatentTrajectory]:
    """Run the denoiser and wrap its latent into windows.

    Args:
        model: The denoiser.
        x_t: Noisy batch ``[B, L, d_in]``.
        cond: Clean condition ``[B, L, d_cond]``.
        t: Steps ``[B]`` in ``[1, num_steps]``.
        window_len: Window length; defaults to the whole sequence.

    Returns:
        tuple: ``(x0_hat, LatentTrajectory)``.
    """
    x0_hat, z = model(x_t, cond, t)
    return x0_hat, extract_windows(z, window_len or x_t.shape[1])


def count_params(module: nn.Module) -> int:
    """Number of trainable scalars in ``module``."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
