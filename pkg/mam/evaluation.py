"""Cross-modal generation and metric collection for trained denoisers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import Tensor

from mam.config import EvalConfig
from mam.data.dataset import SequencePair, stack_pairs
from mam.denoiser import Denoiser
from mam.diffusion import NoiseSchedule, ancestral_sample, forward_noise
from mam.metrics import (
    MetricsReport,
    fid,
    generation_mse,
    latent_correlation,
    predictive_ratio,
    probe,
    window_features,
)
from mam.plots import plot_latent_pca, plot_overlays

__all__ = ["SplitEvaluation", "evaluate_split", "generate", "pooled_latents", "write_plots"]

logger = logging.getLogger(__name__)

GENERATION_CHUNK = 64


@torch.no_grad()
def generate(
    model: Denoiser, condition: Tensor, schedule: NoiseSchedule, seed: int
) -> Tensor:
    """Sample ``model`` for every condition row, in fixed-size chunks."""
    model.eval()
    chunks = [
        ancestral_sample(model, part, schedule, rng_seed=seed + i)
        for i, part in enumerate(torch.split(condition, GENERATION_CHUNK))
    ]
    return torch.cat(chunks)


@torch.no_grad()
def pooled_latents(
    model: Denoiser, data: Tensor, schedule: NoiseSchedule, seed: int
) -> np.ndarray:
    """Encoder output at the final reverse step (t = 1), mean-pooled over time."""
    model.eval()
    t = torch.ones(data.shape[0], dtype=torch.long)
    noisy = forward_noise(data, t, schedule, rng_seed=seed)
    return model.encode(noisy.x_t, t).mean(dim=1).double().numpy()


def _safe_probe(latents: np.ndarray, labels: np.ndarray, kind: str, config: EvalConfig) -> float:
    try:
        return probe(latents, labels, kind, test_size=config.probe_test_size, seed=config.seed)
    except ValueError as e:
        logger.warning("Skipping %s probe: %s", kind, e)
        return math.nan


@dataclass
class SplitEvaluation:
    """Reports for both directions of one split plus the arrays behind them."""

    reports: list[MetricsReport]
    generated: dict[str, np.ndarray] = field(default_factory=dict)
    latents: tuple[np.ndarray, np.ndarray] | None = None
    labels: np.ndarray | None = None


def evaluate_split(
    model_x: Denoiser,
    model_y: Denoiser,
    schedule: NoiseSchedule,
    pairs: Sequence[SequencePair],
    reference: Sequence[SequencePair],
    split: str,
    fold_index: int,
    modality_pair: str,
    config: EvalConfig,
) -> SplitEvaluation:
    """Generate each modality from the other and score it.

    ``X|Y`` samples the first modality conditioned on the real second one
    and ``Y|X`` the reverse. The predictive ratio's train-on-real baseline is
    fitted on ``reference`` (the fold's training split).

    Args:
        model_x: Denoiser of the first modality (EMA weights).
        model_y: Denoiser of the second modality (EMA weights).
        schedule: Shared noise schedule.
        pairs: Normalized pairs of the split being evaluated.
        reference: Normalized training pairs.
        split: ``train`` or ``test``.
        fold_index: Fold the models were trained on.
        modality_pair: Label such as ``kinematics-kinetics``.
        config: Evaluation settings.

    Returns:
        SplitEvaluation: Two reports and the generated arrays.
    """
    x, y, labels = (torch.from_numpy(a) for a in stack_pairs(pairs))
    ref_x, ref_y, _ = stack_pairs(reference)

    zx = pooled_latents(model_x, x, schedule, config.seed)
    zy = pooled_latents(model_y, y, schedule, config.seed)
    correlation = latent_correlation(zx, zy)
    label_array = labels.numpy()

    directions = (
        ("X|Y", model_x, y, x, ref_x, zx),
        ("Y|X", model_y, x, y, ref_y, zy),
    )
    result = SplitEvaluation(reports=[], latents=(zx, zy), labels=label_array)
    for direction, model, condition, target, ref_target, latents in directions:
        generated = generate(model, condition, schedule, config.seed)
        gen_np = generated.numpy()
        score, ratio = predictive_ratio(
            gen_np,
            ref_target,
            target.numpy(),
            horizon_frac=config.horizon_frac,
            epochs=config.predictor_epochs,
            hidden=config.predictor_hidden,
            seed=config.seed,
        )
        report = MetricsReport(
            modality_pair=modality_pair,
            direction=direction,
            fold_index=fold_index,
            split=split,
            mse=generation_mse(gen_np, target),
            fid=fid(
                window_features(target, config.fid_window),
                window_features(gen_np, config.fid_window),
            ),
            predictive=score,
            predictive_ratio=ratio,
            probe_linear=_safe_probe(latents, label_array, "linear", config),
            probe_nonlinear=_safe_probe(latents, label_array, "nonlinear", config),
            latent_correlation=correlation,
        )
        logger.info(
            "fold %d %s %s: mse=%.4f fid=%.4f pred=%.4f",
            fold_index,
            split,
            direction,
            report.mse,
            report.fid,
            report.predictive,
        )
        result.reports.append(report)
        result.generated[direction] = gen_np
    return result


def write_plots(
    evaluation: SplitEvaluation,
    pairs: Sequence[SequencePair],
    channel_names: tuple[Sequence[str], Sequence[str]],
    out_dir: Path,
    prefix: str,
) -> list[Path]:
    """Overlay plot per direction and one latent scatter."""
    x, y, _ = stack_pairs(pairs)
    targets = {"X|Y": (x, channel_names[0]), "Y|X": (y, channel_names[1])}
    paths = []
    for direction, generated in evaluation.generated.items():
        real, names = targets[direction]
        slug = direction.replace("|", "_given_")
        paths.append(
            plot_overlays(real, generated, names, out_dir / f"{prefix}_{slug}.png", f"{prefix} {direction}")
        )
    if evaluation.latents is not None and evaluation.labels is not None:
        zx, zy = evaluation.latents
        paths.append(
            plot_latent_pca(zx, zy, evaluation.labels, out_dir / f"{prefix}_latents.png", f"{prefix} latents")
        )
    return paths
