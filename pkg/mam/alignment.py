"""Latent alignment losses.

``llma`` is the local latent manifold alignment loss: a window-level
contrastive term plus a window-level covariance term. The remaining losses
are baselines (NT-Xent, cross-correlation, variance-invariance-covariance and
plain latent MSE) applied to the same pooled window embeddings so the
comparison only differs in the loss.
"""

from __future__ import annotations

import logging

import torch
import torch.nn.functional as F
from torch import Tensor

from mam.config import AlignmentConfig
from mam.denoiser import LatentTrajectory

__all__ = [
    "alignment_loss",
    "barlow_align",
    "contrastive_align",
    "covariance_align",
    "latent_mse_align",
    "llma",
    "pool_windows",
    "simclr_align",
    "vicreg_align",
    "window_covariance",
]

logger = logging.getLogger(__name__)

NORM_EPS = 1e-8
VAR_EPS = 1e-12


def _check_pair(zx: LatentTrajectory, zy: LatentTrajectory) -> None:
    if zx.windows.shape != zy.windows.shape:
        ve = (
            f"Latent window shapes differ: {tuple(zx.windows.shape)} "
            f"vs {tuple(zy.windows.shape)}"
        )
        raise ValueError(ve)


def _check_pooled(zx: Tensor, zy: Tensor, minimum: int) -> None:
    if zx.dim() != 2 or zx.shape != zy.shape:  # noqa: PLR2004
        ve = f"Expected two [N, d] batches of equal shape, got {tuple(zx.shape)} and {tuple(zy.shape)}"
        raise ValueError(ve)
    if zx.shape[0] < minimum:
        ve = f"Need at least {minimum} embeddings, got {zx.shape[0]}"
        raise ValueError(ve)


def pool_windows(trajectory: LatentTrajectory) -> Tensor:
    """Mean-pool every window over its time steps, giving ``[B * M, d]``."""
    pooled = trajectory.windows.mean(dim=2)
    return pooled.reshape(-1, pooled.shape[-1])


def _normalize(v: Tensor) -> Tensor:
    return v / (v.norm(dim=-1, keepdim=True) + NORM_EPS)


def contrastive_align(
    zx: LatentTrajectory, zy: LatentTrajectory, tau: float, symmetrize: bool = False
) -> Tensor:
    """Window-level contrastive loss with X windows as anchors.

    Each anchor window of ``zx`` is scored against every window of ``zy`` in
    the batch by cosine similarity over ``tau``; the time-matched window of
    the same sequence is the positive.

    Args:
        zx: Latent windows of the first modality.
        zy: Latent windows of the second modality.
        tau: Temperature, positive.
        symmetrize: Also use Y windows as anchors and average both sides.

    Returns:
        Tensor: Scalar loss, mean over all ``B * M`` anchors.
    """
    _check_pair(zx, zy)
    if tau <= 0:
        ve = f"tau must be positive, got {tau}"
        raise ValueError(ve)
    ux = _normalize(pool_windows(zx))
    uy = _normalize(pool_windows(zy))
    logits = ux @ uy.T / tau
    targets = torch.arange(logits.shape[0], device=logits.device)
    loss = F.cross_entropy(logits, targets)
    if symmetrize:
        loss = 0.5 * (loss + F.cross_entropy(logits.T, targets))
    return loss


def window_covariance(trajectory: LatentTrajectory) -> Tensor:
    """Unbiased per-window covariance, shape ``[B, M, d, d]``."""
    if trajectory.window_len < 2:  # noqa: PLR2004
        ve = f"Covariance needs windows of at least 2 steps, got {trajectory.window_len}"
        raise ValueError(ve)
    windows = trajectory.windows
    centered = windows - windows.mean(dim=2, keepdim=True)
    return centered.transpose(-1, -2) @ centered / (trajectory.window_len - 1)


def covariance_align(zx: LatentTrajectory, zy: LatentTrajectory) -> Tensor:
    """Mean squared difference between matched window covariances."""
    _check_pair(zx, zy)
    return (window_covariance(zx) - window_covariance(zy)).pow(2).mean()


def llma(zx: LatentTrajectory, zy: LatentTrajectory, config: AlignmentConfig) -> Tensor:
    """Contrastive plus covariance alignment, summed without weights.

    ``config.use_contrast`` and ``config.use_cov`` drop either term for
    ablations; with both off the loss is a constant zero.
    """
    _check_pair(zx, zy)
    loss = zx.z.new_zeros(())
    if config.use_contrast:
        loss = loss + contrastive_align(zx, zy, config.temperature, config.symmetrize)
    if config.use_cov:
        loss = loss + covariance_align(zx, zy)
    return loss


def simclr_align(zx_pooled: Tensor, zy_pooled: Tensor, tau: float) -> Tensor:
    """NT-Xent over the ``2N`` embeddings of both modalities.

    Row ``i`` of each batch forms a positive pair; every other embedding is a
    negative and self-similarity is excluded. The loss averages all ``2N``
    anchors.
    """
    _check_pooled(zx_pooled, zy_pooled, minimum=1)
    if tau <= 0:
        ve = f"tau must be positive, got {tau}"
        raise ValueError(ve)
    n = zx_pooled.shape[0]
    if n < 2:  # noqa: PLR2004
        logger.warning("NT-Xent with a single pair has no negatives; loss is degenerate")
    u = _normalize(torch.cat([zx_pooled, zy_pooled], dim=0))
    logits = u @ u.T / tau
    self_mask = torch.eye(2 * n, dtype=torch.bool, device=u.device)
    logits = logits.masked_fill(self_mask, float("-inf"))
    idx = torch.arange(n, device=u.device)
    targets = torch.cat([idx + n, idx])
    return F.cross_entropy(logits, targets)


def barlow_align(zx_pooled: Tensor, zy_pooled: Tensor, lam: float = 5e-3) -> Tensor:
    """Cross-correlation loss: diagonal towards 1, off-diagonal towards 0."""
    _check_pooled(zx_pooled, zy_pooled, minimum=2)
    n = zx_pooled.shape[0]

    def standardize(z: Tensor) -> Tensor:
        return (z - z.mean(dim=0)) / (z.std(dim=0, unbiased=False) + NORM_EPS)

    corr = standardize(zx_pooled).T @ standardize(zy_pooled) / n
    diag = torch.diagonal(corr)
    on_diag = (1.0 - diag).pow(2).sum()
    off_diag = corr.pow(2).sum() - diag.pow(2).sum()
    return on_diag + lam * off_diag


def _off_diagonal_cov(z: Tensor) -> Tensor:
    centered = z - z.mean(dim=0)
    cov = centered.T @ centered / (z.shape[0] - 1)
    return cov.pow(2).sum() - torch.diagonal(cov).pow(2).sum()


def _variance_hinge(z: Tensor, gamma_v: float) -> Tensor:
    std = torch.sqrt(z.var(dim=0) + VAR_EPS)
    return torch.clamp(gamma_v - std, min=0.0).pow(2).sum()


def vicreg_align(
    zx_pooled: Tensor,
    zy_pooled: Tensor,
    weights: tuple[float, float, float] = (25.0, 25.0, 1.0),
    gamma_v: float = 1.0,
) -> Tensor:
    """Variance-invariance-covariance loss.

    Args:
        zx_pooled: First batch ``[N, d]``.
        zy_pooled: Second batch ``[N, d]``.
        weights: ``(invariance, variance, covariance)`` weights.
        gamma_v: Floor on each dimension's standard deviation.

    Returns:
        Tensor: Weighted sum of the three terms; the variance and covariance
        terms are averaged over the two batches.
    """
    _check_pooled(zx_pooled, zy_pooled, minimum=2)
    lam_inv, lam_var, lam_cov = weights
    invariance = F.mse_loss(zx_pooled, zy_pooled)
    variance = 0.5 * (_variance_hinge(zx_pooled, gamma_v) + _variance_hinge(zy_pooled, gamma_v))
    covariance = 0.5 * (_off_diagonal_cov(zx_pooled) + _off_diagonal_cov(zy_pooled))
    return lam_inv * invariance + lam_var * variance + lam_cov * covariance


def latent_mse_align(zx: Tensor, zy: Tensor) -> Tensor:
    """Elementwise MSE between two full latent trajectories."""
    if zx.shape != zy.shape:
        ve = f"Latent shapes differ: {tuple(zx.shape)} vs {tuple(zy.shape)}"
        raise ValueError(ve)
    return F.mse_loss(zx, zy)


def alignment_loss(
    zx: LatentTrajectory, zy: LatentTrajectory, config: AlignmentConfig
) -> Tensor:
    """Dispatch to the configured alignment method.

    ``none`` returns a detached zero so it contributes neither value nor
    gradient.
    """
    method = config.method
    if method == "none":
        return zx.z.new_zeros(())
    if method == "llma":
        return llma(zx, zy, config)
    if method == "latent_mse":
        return latent_mse_align(zx.z, zy.z)

    _check_pair(zx, zy)
    px, py = pool_windows(zx), pool_windows(zy)
    if method == "simclr":
        return simclr_align(px, py, config.temperature)
    if method == "barlow":
        return barlow_align(px, py, config.barlow_lambda)
    if method == "vicreg":
        return vicreg_align(px, py, config.vicreg_weights, config.vicreg_gamma)
    ve = f"Unknown alignment method {method!r}"
    raise ValueError(ve)
