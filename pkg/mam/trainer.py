"""Joint training of the two conditional denoisers.

One training step:

1. sample one step ``t`` per batch element, shared by both modalities;
2. draw independent noise for each modality and noise both clean batches;
3. predict each clean modality conditioned on the clean other modality;
4. compute denoising and energy losses, and the alignment loss on the two
   encoder latents;
5. combine them with the learned alignment weight;
6. backpropagate the single total loss and update both denoisers and the
   weight with one AdamW optimizer;
7. update the EMA shadows of every learnable tensor.

Evaluation always uses the EMA shadows.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import pandas as pd
import torch
from torch import Tensor, nn
from torch.utils.data import DataLoader

from mam._progress import ProgressBarType, create_progress
from mam.alignment import alignment_loss
from mam.checkpoint import latest_checkpoint, load_checkpoint, save_checkpoint
from mam.config import RunConfig
from mam.data.dataset import PairDataset, SequencePair
from mam.data.folds import FoldSpec, split_fold
from mam.data.normalize import MinMaxNormalizer
from mam.data.schema import MODALITIES
from mam.denoiser import Denoiser, denoise_forward
from mam.diffusion import NoiseSchedule, apply_noise, make_schedule
from mam.evaluation import evaluate_split, write_plots
from mam.metrics import MetricsReport, write_metrics_csv
from mam.objective import LOG_COLUMNS, AlphaParam, LossBreakdown, denoise_loss, energy_loss, total_loss
from mam.utils import NumericalError, seed_everything, write_json

__all__ = [
    "FoldResult",
    "ParameterEMA",
    "Trainer",
    "append_train_log",
    "ema_update",
    "modality_labels",
    "run_fold",
    "truncate_train_log",
]

logger = logging.getLogger(__name__)


@torch.no_grad()
def ema_update(shadow: Tensor, live: Tensor, decay: float) -> Tensor:
    """In place: ``shadow <- decay * shadow + (1 - decay) * live``; returns ``shadow``."""
    if shadow.shape != live.shape:
        ve = f"EMA shape mismatch: {tuple(shadow.shape)} vs {tuple(live.shape)}"
        raise ValueError(ve)
    return shadow.mul_(decay).add_(live.detach(), alpha=1.0 - decay)


class ParameterEMA:
    """Shadow copies of named tensors, initialized to the live values."""

    def __init__(self, named: dict[str, Tensor], decay: float) -> None:
        self.decay = decay
        self.shadow = {name: t.detach().clone() for name, t in named.items()}

    def update(self, named: dict[str, Tensor]) -> None:
        for name, live in named.items():
            ema_update(self.shadow[name], live, self.decay)

    def state_dict(self) -> dict[str, Tensor]:
        return {f"ema.{name}": t for name, t in self.shadow.items()}

    def load_state_dict(self, arrays: dict[str, Tensor]) -> None:
        for name in self.shadow:
            self.shadow[name].copy_(arrays[f"ema.{name}"])


def append_train_log(path: Path, rows: Sequence[dict[str, float]]) -> None:
    """Append loss rows to the CSV training log, writing the header once."""
    if not rows:
        return
    frame = pd.DataFrame(list(rows), columns=list(LOG_COLUMNS))
    frame["step"] = frame["step"].astype(int)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)


def truncate_train_log(path: Path, step: int) -> None:
    """Drop log rows past ``step``, the step of the checkpoint being resumed."""
    if not path.exists():
        return
    frame = pd.read_csv(path)
    kept = frame[frame["step"] <= step]
    if len(kept) < len(frame):
        logger.info("Dropping %d log row(s) written after step %d", len(frame) - len(kept), step)
        kept.to_csv(path, index=False)


class Trainer:
    """Owns both denoisers, the alignment weight, the optimizer and the EMA.

    Args:
        config: Run configuration.
        d_x: Channel count of the first modality.
        d_y: Channel count of the second modality.

    Example:
        ```python
        >>> trainer = Trainer(preset("desk"), d_x=6, d_y=4)
        >>> parts = trainer.train_step(x, y)
        >>> parts.total
        ```
    """

    def __init__(self, config: RunConfig, d_x: int, d_y: int) -> None:
        self.config = config
        self.d_x = d_x
        self.d_y = d_y
        train = config.train
        # Dropout draws from the global generator, so seed it with the run.
        seed_everything(train.seed)

        self.schedule: NoiseSchedule = make_schedule(
            config.schedule.kind, config.schedule.num_steps, config.schedule.retention_min
        )
        steps = config.schedule.num_steps
        self.model_x = Denoiser(config.model.for_modality(d_x, d_y, steps))
        self.model_y = Denoiser(config.model.for_modality(d_y, d_x, steps))
        self.alpha = AlphaParam(config.objective.alpha_mode, config.objective.alpha_init)
        self.optimizer = torch.optim.AdamW(
            [
                {"params": self.model_x.parameters(), "lr": train.lr_theta},
                {"params": self.model_y.parameters(), "lr": train.lr_phi},
                {"params": self.alpha.parameters(), "lr": train.alpha_lr, "weight_decay": 0.0},
            ],
            betas=train.adam_betas,
            weight_decay=train.weight_decay,
        )
        self.generator = torch.Generator().manual_seed(train.seed)
        self.ema = ParameterEMA(self.learnables(), train.ema_decay)
        self.step = 0
        self.epoch = 0
        self.skipped_steps = 0
        self.last_row: dict[str, float] = {}

    def learnables(self) -> dict[str, Tensor]:
        """Every trainable tensor, keyed by its checkpoint name."""
        named: dict[str, Tensor] = {}
        for prefix, module in (("model_x", self.model_x), ("model_y", self.model_y), ("alpha", self.alpha)):
            named.update({f"{prefix}.{n}": p for n, p in module.named_parameters()})
        return named

    def train_step(self, x: Tensor, y: Tensor) -> Optional[LossBreakdown]:
        """Run one joint optimization step on a normalized batch.

        Returns:
            LossBreakdown: The step's losses, or ``None`` when the loss was
            not finite and the step was skipped (the noise draws still
            advance the generator).
        """
        cfg = self.config
        self.model_x.train()
        self.model_y.train()
        batch = x.shape[0]
        t = torch.randint(1, self.schedule.num_steps + 1, (batch,), generator=self.generator)
        eps_x = torch.randn(x.shape, generator=self.generator, dtype=x.dtype)
        eps_y = torch.randn(y.shape, generator=self.generator, dtype=y.dtype)
        x_t = apply_noise(x, t, self.schedule, eps_x)
        y_t = apply_noise(y, t, self.schedule, eps_y)

        window = cfg.alignment.window_len
        x0_hat, zx = denoise_forward(self.model_x, x_t, y, t, window)
        y0_hat, zy = denoise_forward(self.model_y, y_t, x, t, window)
        use_align = cfg.alignment.enabled
        align = alignment_loss(zx, zy, cfg.alignment) if use_align else x.new_zeros(())

        self.step += 1
        try:
            parts = total_loss(
                denoise_loss(x, x0_hat),
                denoise_loss(y, y0_hat),
                energy_loss(x, x0_hat),
                energy_loss(y, y0_hat),
                align,
                self.alpha,
                use_align=use_align,
                use_energy=cfg.objective.use_energy,
            )
        except NumericalError as e:
            self.skipped_steps += 1
            logger.warning("Skipping step %d: %s", self.step, e)
            return None

        self.optimizer.zero_grad(set_to_none=True)
        parts.total.backward()
        self.optimizer.step()
        self.ema.update(self.learnables())
        return parts

    def fit(
        self,
        pairs: Sequence[SequencePair],
        epochs: Optional[int] = None,
        log_path: Optional[Path] = None,
        checkpoint_root: Optional[Path] = None,
        manifest_extra: Optional[dict[str, Any]] = None,
        quiet: bool = False,
    ) -> list[dict[str, float]]:
        """Train until ``epochs`` epochs have run, resuming from ``self.epoch``.

        Raises:
            NumericalError: If every step of an epoch was skipped.
        """
        train = self.config.train
        epochs = train.epochs if epochs is None else epochs
        dataset = PairDataset(pairs)
        history: list[dict[str, float]] = []
        progress = create_progress(ProgressBarType.TRAIN, disable=quiet)
        with progress:
            task = progress.add_task("training", total=max(epochs - self.epoch, 0), status="")
            for epoch in range(self.epoch, epochs):
                loader = DataLoader(
                    dataset,
                    batch_size=train.batch_size,
                    shuffle=True,
                    generator=torch.Generator().manual_seed(train.seed * 1_000_003 + epoch),
                )
                rows = []
                for x, y, _ in loader:
                    parts = self.train_step(x, y)
                    if parts is not None:
                        rows.append({"step": self.step, **parts.as_row()})
                if not rows:
                    ne = f"Every step of epoch {epoch} produced a non-finite loss"
                    raise NumericalError(ne)
                if log_path is not None:
                    append_train_log(log_path, rows)
                history.extend(rows)
                self.last_row = rows[-1]
                self.epoch = epoch + 1
                progress.update(task, advance=1, status=f"loss {rows[-1]['total']:.4f}")
                every = train.checkpoint_every
                if checkpoint_root is not None and every and self.epoch % every == 0:
                    self.save(checkpoint_root / f"step_{self.step}", manifest_extra)
        return history

    def ema_models(self) -> tuple[Denoiser, Denoiser]:
        """Copies of both denoisers carrying the EMA weights, in eval mode."""
        copies = []
        for prefix, model in (("model_x", self.model_x), ("model_y", self.model_y)):
            shadow = copy.deepcopy(model)
            with torch.no_grad():
                for name, param in shadow.named_parameters():
                    param.copy_(self.ema.shadow[f"{prefix}.{name}"])
            copies.append(shadow.eval())
        return copies[0], copies[1]

    def arrays(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for prefix, module in (("model_x", self.model_x), ("model_y", self.model_y), ("alpha", self.alpha)):
            named.update({f"{prefix}.{k}": v for k, v in module.state_dict().items()})
        named.update(self.ema.state_dict())
        return named

    def save(self, path: Path, manifest_extra: Optional[dict[str, Any]] = None) -> Path:
        """Write a checkpoint directory for the current state."""
        manifest = {
            "config": self.config.to_dict(),
            "schedule": self.schedule.to_dict(),
            "d_x": self.d_x,
            "d_y": self.d_y,
            "step": self.step,
            "epoch": self.epoch,
            "skipped_steps": self.skipped_steps,
            "metrics": self.last_row,
            **(manifest_extra or {}),
        }
        rng_state = {"generator": self.generator.get_state(), "torch": torch.get_rng_state()}
        return save_checkpoint(path, self.arrays(), manifest, rng_state, self.optimizer.state_dict())

    @classmethod
    def from_checkpoint(cls, path: Path) -> Trainer:
        """Rebuild a trainer, including optimizer and RNG state, from ``path``."""
        data = load_checkpoint(path)
        manifest = data.manifest
        trainer = cls(RunConfig.from_dict(manifest["config"]), int(manifest["d_x"]), int(manifest["d_y"]))
        arrays = data.arrays
        for prefix, module in (("model_x", trainer.model_x), ("model_y", trainer.model_y), ("alpha", trainer.alpha)):
            state = {k.removeprefix(f"{prefix}."): v for k, v in arrays.items() if k.startswith(f"{prefix}.")}
            module.load_state_dict(state)
        trainer.ema.load_state_dict(arrays)
        if data.optimizer_state is not None:
            trainer.optimizer.load_state_dict(data.optimizer_state)
        if "generator" in data.rng_state:
            trainer.generator.set_state(data.rng_state["generator"])
        if "torch" in data.rng_state:
            torch.set_rng_state(data.rng_state["torch"])
        trainer.step = int(manifest["step"])
        trainer.epoch = int(manifest["epoch"])
        trainer.skipped_steps = int(manifest.get("skipped_steps", 0))
        trainer.last_row = dict(manifest.get("metrics", {}))
        return trainer


def modality_labels(config: RunConfig, d_x: int, d_y: int) -> tuple[str, list[str], list[str]]:
    """Pair label and channel names used in reports and plots."""
    data = config.data
    if data.is_synthetic:
        return "x-y", [f"x{i}" for i in range(d_x)], [f"y{i}" for i in range(d_y)]
    names_x = list(MODALITIES[data.modality_x].channels)
    names_y = list(MODALITIES[data.modality_y].channels)
    return f"{data.modality_x}-{data.modality_y}", names_x, names_y


@dataclass
class FoldResult:
    """Outputs of one cross-validation fold."""

    fold: FoldSpec
    fold_dir: Path
    checkpoint: Path
    reports: list[MetricsReport] = field(default_factory=list)


def evaluate_checkpoint_fold(
    trainer: Trainer,
    fold: FoldSpec,
    train_pairs: Sequence[SequencePair],
    test_pairs: Sequence[SequencePair],
    fold_dir: Path,
) -> list[MetricsReport]:
    """Evaluate the EMA weights on both splits and write the fold's files."""
    config = trainer.config
    pair_label, names_x, names_y = modality_labels(config, trainer.d_x, trainer.d_y)
    model_x, model_y = trainer.ema_models()
    reports: list[MetricsReport] = []
    for split, pairs in (("train", train_pairs), ("test", test_pairs)):
        evaluation = evaluate_split(
            model_x,
            model_y,
            trainer.schedule,
            pairs,
            train_pairs,
            split,
            fold.fold_index,
            pair_label,
            config.eval,
        )
        reports.extend(evaluation.reports)
        if config.eval.plots and split == "test":
            write_plots(evaluation, pairs, (names_x, names_y), fold_dir / "plots", f"fold{fold.fold_index}")
    write_metrics_csv(reports, fold_dir / "metrics.csv")
    return reports


def run_fold(
    fold: FoldSpec,
    config: RunConfig,
    pairs: Sequence[SequencePair],
    fold_dir: Path,
    resume: bool = False,
    quiet: bool = False,
) -> FoldResult:
    """Train on one fold, evaluate its EMA weights and write every artifact.

    The fold's normalization statistics are fitted on its training split
    only and frozen into ``fold.json`` and the checkpoint manifest.

    Raises:
        DataError: If the train or test split is empty.
    """
    train_raw, test_raw = split_fold(pairs, fold)
    normalizer = MinMaxNormalizer.fit(train_raw)
    train_pairs, test_pairs = normalizer.apply(train_raw), normalizer.apply(test_raw)
    fold_dir.mkdir(parents=True, exist_ok=True)
    extra = {"fold": fold.to_dict(), "normalization": normalizer.to_dict()}
    write_json(fold_dir / "fold.json", {**extra, "n_train": len(train_pairs), "n_test": len(test_pairs)})

    d_x, d_y = train_pairs[0].x.shape[1], train_pairs[0].y.shape[1]
    previous = latest_checkpoint(fold_dir) if resume else None
    if previous is not None:
        logger.info("Resuming fold %d from %s", fold.fold_index, previous)
        trainer = Trainer.from_checkpoint(previous)
        truncate_train_log(fold_dir / "train_log.csv", trainer.step)
    else:
        (fold_dir / "train_log.csv").unlink(missing_ok=True)
        trainer = Trainer(config, d_x, d_y)
    checkpoint_root = fold_dir / "checkpoints"
    trainer.fit(
        train_pairs,
        epochs=config.train.epochs,
        log_path=fold_dir / "train_log.csv",
        checkpoint_root=checkpoint_root,
        manifest_extra=extra,
        quiet=quiet,
    )
    final = checkpoint_root / f"step_{trainer.step}"
    if not (final / "manifest.json").is_file():
        trainer.save(final, extra)

    reports = evaluate_checkpoint_fold(trainer, fold, train_pairs, test_pairs, fold_dir)
    return FoldResult(fold=fold, fold_dir=fold_dir, checkpoint=final, reports=reports)
