"""Forward noising, noise schedules and ancestral sampling for x0-prediction models.

Convention: ``beta[t]`` is the per-step *signal retention* coefficient, so one
forward step reads ``x_t = sqrt(beta_t) * x_{t-1} + sqrt(1 - beta_t) * eps`` and
the closed-form marginal is ``x_t = sqrt(beta_bar_t) * x0 + sqrt(1 - beta_bar_t) * eps``
with ``beta_bar_t`` the cumulative product. Steps are 1-based: ``t`` lies in
``[1, num_steps]`` and ``beta[t - 1]`` is the coefficient of step ``t``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Optional, Protocol

import torch
from torch import Tensor

__all__ = [
    "ConditionalDenoiser",
    "NoiseSchedule",
    "NoisySample",
    "ancestral_sample",
    "apply_noise",
    "forward_noise",
    "forward_step",
    "make_schedule",
    "posterior_coefficients",
    "posterior_mean",
]

logger = logging.getLogger(__name__)

COSINE_FLOOR = 1e-5


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step retention coefficients and their cumulative products.

    Attributes:
        kind: Schedule family the coefficients were built from.
        num_steps: Number of diffusion steps T'.
        retention_min: Terminal retention requested for the linear family.
        beta: Float64 tensor of shape ``[num_steps]``.
        beta_bar: Float64 tensor of shape ``[num_steps]``, ``cumprod(beta)``.
    """

    kind: str
    num_steps: int
    retention_min: float
    beta: Tensor
    beta_bar: Tensor

    def retention(self, t: Tensor) -> Tensor:
        """Return ``beta_bar_t`` for a batch of 1-based steps."""
        return self.beta_bar[t - 1]

    def retention_prev(self, t: Tensor) -> Tensor:
        """Return ``beta_bar_{t-1}`` with ``beta_bar_0 = 1``."""
        padded = torch.cat([self.beta_bar.new_ones(1), self.beta_bar])
        return padded[t - 1]

    def check_steps(self, t: Tensor) -> Tensor:
        """Validate a batch of steps and return it as an int64 tensor."""
        t = torch.as_tensor(t, dtype=torch.long)
        if t.numel() and (int(t.min()) < 1 or int(t.max()) > self.num_steps):
            ve = f"Diffusion step out of range [1, {self.num_steps}]: {t.tolist()}"
            raise ValueError(ve)
        return t

    def to_dict(self) -> dict[str, Any]:
        """Manifest form: the defining settings plus the materialized betas."""
        return {
            "kind": self.kind,
            "num_steps": self.num_steps,
            "retention_min": self.retention_min,
            "beta": self.beta.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> NoiseSchedule:
        """Rebuild a schedule from its manifest form."""
        beta = torch.tensor(data["beta"], dtype=torch.float64)
        if beta.numel() != data["num_steps"]:
            ve = "Schedule beta length does not match num_steps"
            raise ValueError(ve)
        return cls(
            kind=data["kind"],
            num_steps=int(data["num_steps"]),
            retention_min=float(data["retention_min"]),
            beta=beta,
            beta_bar=torch.cumprod(beta, dim=0),
        )


@dataclass(frozen=True)
class NoisySample:
    """A noised batch together with the draws that produced it."""

    x_t: Tensor
    t: Tensor
    epsilon: Tensor


def make_schedule(
    kind: str = "cosine", num_steps: int = 50, retention_min: float = 0.01
) -> NoiseSchedule:
    """Build a noise schedule.

    ``linear`` interpolates the cumulative retention linearly from 1 (at the
    virtual step 0) down to ``retention_min`` at step T'. ``cosine`` sets
    ``beta_bar_t = cos((t / T') * pi / 2) ** 2`` clipped below at 1e-5. In both
    cases the per-step betas are derived as ratios of consecutive cumulative
    values and the cumulative values are then recomputed from the betas, so
    ``beta_bar[t] == beta_bar[t - 1] * beta[t]`` holds exactly.

    Args:
        kind: ``linear`` or ``cosine``.
        num_steps: Number of diffusion steps, at least 1.
        retention_min: Terminal cumulative retention, in (0, 1).

    Returns:
        NoiseSchedule: The materialized schedule.

    Raises:
        ValueError: On an unknown kind or out-of-range arguments.
    """
    if isinstance(num_steps, bool) or not isinstance(num_steps, int) or num_steps < 1:
        ve = f"num_steps must be a positive integer, got {num_steps!r}"
        raise ValueError(ve)
    if not 0.0 < retention_min < 1.0:
        ve = f"retention_min must lie in (0, 1), got {retention_min!r}"
        raise ValueError(ve)

    steps = torch.arange(1, num_steps + 1, dtype=torch.float64)
    if kind == "linear":
        target = 1.0 - (steps / num_steps) * (1.0 - retention_min)
    elif kind == "cosine":
        target = torch.cos(steps / num_steps * (math.pi / 2)) ** 2
        target = target.clamp(min=COSINE_FLOOR)
    else:
        ve = f"Unknown schedule kind {kind!r}; expected 'linear' or 'cosine'"
        raise ValueError(ve)

    previous = torch.cat([target.new_ones(1), target[:-1]])
    beta = (target / previous).clamp(max=1.0)
    return NoiseSchedule(
        kind=kind,
        num_steps=num_steps,
        retention_min=retention_min,
        beta=beta,
        beta_bar=torch.cumprod(beta, dim=0),
    )


def _broadcast(values: Tensor, like: Tensor) -> Tensor:
    return values.to(like.dtype).reshape(-1, *([1] * (like.dim() - 1)))


def apply_noise(
    x0: Tensor, t: Tensor, schedule: NoiseSchedule, epsilon: Tensor
) -> Tensor:
    """Closed-form marginal ``sqrt(beta_bar_t) x0 + sqrt(1 - beta_bar_t) eps``."""
    if epsilon.shape != x0.shape:
        ve = f"epsilon shape {tuple(epsilon.shape)} != x0 shape {tuple(x0.shape)}"
        raise ValueError(ve)
    t = schedule.check_steps(t)
    if t.numel() != x0.shape[0]:
        ve = f"Expected one step per batch element, got {t.numel()} for {x0.shape[0]}"
        raise ValueError(ve)
    keep = _broadcast(schedule.retention(t), x0)
    return keep.sqrt() * x0 + (1.0 - keep).sqrt() * epsilon


def forward_noise(
    x0: Tensor,
    t: Tensor,
    schedule: NoiseSchedule,
    rng_seed: Optional[int] = None,
    generator: Optional[torch.Generator] = None,
) -> NoisySample:
    """Noise a clean batch to steps ``t``.

    The noise comes from ``generator`` when given, otherwise from a fresh
    generator seeded with ``rng_seed``, so the result is deterministic in
    ``(x0, t, schedule, rng_seed)``.

    Raises:
        ValueError: If ``x0`` is not finite or a step is out of range.
    """
    if not torch.isfinite(x0).all():
        ve = "forward_noise received a non-finite clean sample"
        raise ValueError(ve)
    if generator is None:
        generator = torch.Generator(device=x0.device)
        generator.manual_seed(0 if rng_seed is None else rng_seed)
    epsilon = torch.randn(
        x0.shape, generator=generator, dtype=x0.dtype, device=x0.device
    )
    t = schedule.check_steps(t)
    return NoisySample(x_t=apply_noise(x0, t, schedule, epsilon), t=t, epsilon=epsilon)


def forward_step(
    x_prev: Tensor, t: int, schedule: NoiseSchedule, epsilon: Tensor
) -> Tensor:
    """One step of the forward recursion from ``x_{t-1}`` to ``x_t``."""
    step = schedule.check_steps(torch.tensor([t]))
    keep = schedule.beta[step - 1].to(x_prev.dtype)
    return keep.sqrt() * x_prev + (1.0 - keep).sqrt() * epsilon


def posterior_coefficients(
    schedule: NoiseSchedule, t: Tensor
) -> tuple[Tensor, Tensor, Tensor]:
    """Coefficients of ``q(x_{t-1} | x_t, x0)``.

    Returns:
        tuple: ``(a, b, var)`` such that the posterior mean is
        ``a * x0 + b * x_t`` and its variance is ``var``; all float64.
    """
    t = schedule.check_steps(t)
    beta = schedule.beta[t - 1]
    bar = schedule.retention(t)
    bar_prev = schedule.retention_prev(t)
    denom = 1.0 - bar
    if bool((denom <= 0).any()):
        ve = "Posterior undefined where the cumulative retention equals 1"
        raise ValueError(ve)
    a = bar_prev.sqrt() * (1.0 - beta) / denom
    b = beta.sqrt() * (1.0 - bar_prev) / denom
    var = (1.0 - bar_prev) * (1.0 - beta) / denom
    return a, b, var


def posterior_mean(
    x0_hat: Tensor, x_t: Tensor, t: Tensor, schedule: NoiseSchedule
) -> Tensor:
    """Mean of the Gaussian posterior given a clean-signal estimate."""
    a, b, _ = posterior_coefficients(schedule, t)
    return _broadcast(a, x_t) * x0_hat + _broadcast(b, x_t) * x_t


class ConditionalDenoiser(Protocol):
    """Anything that predicts a clean sequence from a noisy one and a condition."""

    num_steps: int
    d_out: int

    def predict_x0(self, x_t: Tensor, cond: Tensor, t: Tensor) -> Tensor:
        """Return the clean-signal estimate for ``x_t`` at steps ``t``."""
        ...


@torch.no_grad()
def ancestral_sample(
    denoiser: ConditionalDenoiser,
    condition: Tensor,
    schedule: NoiseSchedule,
    rng_seed: int = 0,
) -> Tensor:
    """Generate a batch conditioned on ``condition``.

    Starts from standard normal noise at step T', predicts the clean signal
    at each step, samples the posterior for step ``t - 1`` and returns the
    clean-signal estimate of step 1 without adding noise. The denoiser is
    evaluated exactly ``num_steps`` times.

    Args:
        denoiser: Model implementing :class:`ConditionalDenoiser`.
        condition: Condition batch of shape ``[B, L, d_cond]``.
        schedule: Noise schedule the model was trained with.
        rng_seed: Seed of the sampling noise.

    Returns:
        Tensor: Generated batch of shape ``[B, L, d_out]``.

    Raises:
        ValueError: If the schedule and the denoiser disagree on the step count.
    """
    if denoiser.num_steps != schedule.num_steps:
        ve = (
            f"Denoiser was built for {denoiser.num_steps} steps but the "
            f"schedule has {schedule.num_steps}"
        )
        raise ValueError(ve)
    generator = torch.Generator(device=condition.device)
    generator.manual_seed(rng_seed)
    batch, length = condition.shape[0], condition.shape[1]
    shape = (batch, length, denoiser.d_out)
    x = torch.randn(shape, generator=generator, dtype=condition.dtype, device=condition.device)

    for step in range(schedule.num_steps, 0, -1):
        t = torch.full((batch,), step, dtype=torch.long, device=condition.device)
        x0_hat = denoiser.predict_x0(x, condition, t)
        if step == 1:
            return x0_hat
        _, _, var = posterior_coefficients(schedule, t)
        noise = torch.randn(shape, generator=generator, dtype=x.dtype, device=x.device)
        x = posterior_mean(x0_hat, x, t, schedule) + _broadcast(var.sqrt(), x) * noise

    ae = "unreachable: the sampling loop always returns at step 1"
    raise AssertionError(ae)
