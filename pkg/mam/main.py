"""Experiment commands behind the ``mam`` CLI.

Every command writes its resolved configuration into its output directory
before doing any work, then writes its artifacts next to it:

    make-synthetic  dataset directory (manifest.json, arrays.pt, hidden.pt)
    train           run directory with one sub-directory per fold
    evaluate        per-fold metrics, aggregate table and plots from checkpoints
    ablate          four loss-ablation variants plus a comparison table
    probe           linear and nonlinear probe accuracies per alignment method
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from functools import partial
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from mam._progress import track
from mam.checkpoint import latest_checkpoint
from mam.config import RunConfig, save_config
from mam.data.dataset import SequencePair, load_dataset, save_dataset, stack_pairs
from mam.data.folds import FoldSpec, make_folds, split_fold
from mam.data.ingest import ingest_csv
from mam.data.normalize import MinMaxNormalizer
from mam.data.schema import get_schema
from mam.data.synthetic import DYNAMICS, SyntheticSystem, generate_synthetic
from mam.evaluation import pooled_latents
from mam.metrics import (
    MetricsReport,
    above_chance,
    aggregate,
    format_mean_std,
    probe,
    render_table,
    write_markdown_table,
    write_metrics_csv,
)
from mam.runner import RunnerFactory, RunnerStrategy
from mam.trainer import Trainer, evaluate_checkpoint_fold, run_fold
from mam.utils import CheckpointError, ConfigError, DataError, console, read_json, write_json

__all__ = [
    "ABLATIONS",
    "cmd_ablate",
    "cmd_evaluate",
    "cmd_make_synthetic",
    "cmd_probe",
    "cmd_train",
    "data_digest",
    "load_pairs",
]

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
DATA_FILE = "data.json"
FOLDS_DIR = "folds"
PROBE_CHANCE_COLUMN = "3σ above chance"

# name, use_contrast, use_cov, use_energy
ABLATIONS = (
    ("full", True, True, True),
    ("no_contrast", False, True, True),
    ("no_cov", True, False, True),
    ("no_energy", True, True, False),
)


def _check_synthetic_name(source: str) -> str:
    name = source.partition(":")[2]
    if name not in DYNAMICS:
        ce = f"--data: unknown synthetic system {name!r}; choose from {', '.join(DYNAMICS)}"
        raise ConfigError(ce)
    return name


def load_pairs(config: RunConfig) -> tuple[list[SequencePair], dict[str, Any]]:
    """Load or generate the raw (unnormalized per fold) pairs of a run.

    Raises:
        ConfigError: On an unknown synthetic system.
        DataError: If the source does not exist or cannot be read.
    """
    data = config.data
    if data.is_synthetic:
        _check_synthetic_name(data.source)
        system = SyntheticSystem.from_config(data)
        result = generate_synthetic(system, data.n_sequences, data.seq_len)
        return result.pairs, {"source": data.source, "system": system.describe()}

    path = Path(data.source)
    if path.is_dir():
        pairs, manifest = load_dataset(path)
        if manifest["seq_len"] != data.seq_len:
            de = f"Dataset {path} has seq_len {manifest['seq_len']}, config asks for {data.seq_len}"
            raise DataError(de)
        return pairs, {"source": str(path), "metadata": manifest.get("metadata", {})}
    if path.is_file():
        report = ingest_csv(path, get_schema(data.modality_x), get_schema(data.modality_y), data.seq_len)
        meta = {
            "source": str(path),
            "dropped_samples": report.dropped_samples,
            "rejected_windows": report.rejected_windows,
        }
        return report.pairs, meta
    de = f"Data source {data.source} does not exist"
    raise DataError(de)


def data_digest(pairs: Sequence[SequencePair]) -> str:
    """SHA-256 over the stacked arrays and subject ids."""
    x, y, labels = stack_pairs(pairs)
    digest = hashlib.sha256()
    for array in (x, y, labels):
        digest.update(np.ascontiguousarray(array).tobytes())
    digest.update("\n".join(p.subject_id for p in pairs).encode("utf-8"))
    return digest.hexdigest()


def _make_folds(config: RunConfig, pairs: Sequence[SequencePair]) -> list[FoldSpec]:
    folds_cfg = config.folds
    try:
        folds = make_folds(
            pairs, folds_cfg.k_subjects, folds_cfg.k_profiles, folds_cfg.n_folds, folds_cfg.seed
        )
    except ValueError as e:
        ce = f"Invalid fold settings: {e}"
        raise ConfigError(ce) from e
    return folds[: folds_cfg.max_folds] if folds_cfg.max_folds else folds


def _summarize(reports: Sequence[MetricsReport], out: Path, title: str, quiet: bool = False) -> pd.DataFrame:
    frame = write_metrics_csv(reports, out / "metrics.csv")
    table = aggregate(frame)
    write_markdown_table(table, out / "aggregate.md", title)
    if not quiet:
        console.print(render_table(table, title))
    return table


def cmd_make_synthetic(config: RunConfig, out: Path) -> Path:
    """Generate a synthetic dataset directory from ``config.data``.

    Raises:
        ConfigError: If ``config.data.source`` does not name a synthetic system.
    """
    data = config.data
    if not data.is_synthetic:
        ce = f"--data must name a synthetic system (synthetic:NAME), got {data.source!r}"
        raise ConfigError(ce)
    _check_synthetic_name(data.source)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / CONFIG_FILE)

    system = SyntheticSystem.from_config(data)
    result = generate_synthetic(system, data.n_sequences, data.seq_len)
    metadata = {"source": data.source, "system": system.describe(), "seq_len": data.seq_len}
    save_dataset(out, result.pairs, metadata, hidden=result.hidden)
    logger.info("Wrote %d %s pairs to %s", len(result.pairs), system.dynamics, out)
    return out


def cmd_train(config: RunConfig, out: Path, resume: bool = False, quiet: bool = False) -> Path:
    """Train one model pair per fold and write the aggregate table.

    Returns:
        Path: The run directory.
    """
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / CONFIG_FILE)

    pairs, meta = load_pairs(config)
    folds = _make_folds(config, pairs)
    write_json(
        out / DATA_FILE,
        {**meta, "n_pairs": len(pairs), "data_sha256": data_digest(pairs), "folds": [f.to_dict() for f in folds]},
    )

    strategy = RunnerFactory.determine_best_strategy(len(folds), config)
    runner = RunnerFactory.create_runner(strategy, config)
    jobs = [
        partial(
            run_fold,
            fold,
            config,
            pairs,
            out / FOLDS_DIR / f"fold_{fold.fold_index}",
            resume,
            quiet or strategy == RunnerStrategy.PARALLEL,
        )
        for fold in folds
    ]
    logger.info("Training %d fold(s) with the %s runner", len(jobs), strategy)
    results = runner.run(jobs)
    reports = [report for result in results for report in result.reports]
    _summarize(reports, out, f"{config.name} ({config.alignment.method})", quiet)
    return out


def _fold_dirs(run_dir: Path) -> list[Path]:
    root = run_dir / FOLDS_DIR
    dirs = sorted(root.glob("fold_*"), key=lambda p: int(p.name.removeprefix("fold_"))) if root.is_dir() else []
    if not dirs:
        ce = f"{run_dir} has no trained folds"
        raise CheckpointError(ce)
    return dirs


def _restore_fold(
    fold_dir: Path, pairs: Sequence[SequencePair]
) -> tuple[Trainer, FoldSpec, list[SequencePair], list[SequencePair]]:
    checkpoint = latest_checkpoint(fold_dir)
    if checkpoint is None:
        ce = f"No checkpoint under {fold_dir}"
        raise CheckpointError(ce)
    info = read_json(fold_dir / "fold.json")
    fold = FoldSpec.from_dict(info["fold"])
    normalizer = MinMaxNormalizer.from_dict(info["normalization"])
    train_raw, test_raw = split_fold(pairs, fold)
    trainer = Trainer.from_checkpoint(checkpoint)
    return trainer, fold, normalizer.apply(train_raw), normalizer.apply(test_raw)


def _run_config(run_dir: Path) -> RunConfig:
    path = run_dir / CONFIG_FILE
    if not path.is_file():
        ce = f"{run_dir} is not a run directory ({CONFIG_FILE} missing)"
        raise CheckpointError(ce)
    return RunConfig.from_dict(read_json(path))


def cmd_evaluate(run_dir: Path, out: Optional[Path] = None, data: Optional[str] = None) -> Path:
    """Re-evaluate every fold of ``run_dir`` from its latest checkpoint.

    Outputs are a function of the checkpoints and the data only, so running
    twice reproduces the same tables.

    Args:
        run_dir: Directory written by :func:`cmd_train`.
        out: Output directory; defaults to ``run_dir/evaluation``.
        data: Replaces the configured data source.
    """
    config = _run_config(run_dir)
    if data is not None:
        config = config.with_overrides([f"data.source={json.dumps(data)}"])
    out = out or run_dir / "evaluation"
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / CONFIG_FILE)

    pairs, _ = load_pairs(config)
    reports: list[MetricsReport] = []
    for fold_dir in _fold_dirs(run_dir):
        trainer, fold, train_pairs, test_pairs = _restore_fold(fold_dir, pairs)
        reports.extend(
            evaluate_checkpoint_fold(trainer, fold, train_pairs, test_pairs, out / fold_dir.name)
        )
    _summarize(reports, out, f"{config.name} evaluation")
    return out


def _variant_config(config: RunConfig, name: str, contrast: bool, cov: bool, energy: bool) -> RunConfig:
    overrides = [
        f"name={json.dumps(f'{config.name}-{name}')}",
        "alignment.method=llma",
        f"alignment.use_contrast={json.dumps(contrast)}",
        f"alignment.use_cov={json.dumps(cov)}",
        f"objective.use_energy={json.dumps(energy)}",
    ]
    return config.with_overrides(overrides)


def cmd_ablate(config: RunConfig, out: Path) -> pd.DataFrame:
    """Train the full alignment objective and its three single-term ablations.

    Variants differ only in the three loss switches; seeds, folds and data
    are shared.

    Raises:
        DataError: If the variants did not see identical data.
    """
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / CONFIG_FILE)

    strategy = RunnerFactory.determine_best_strategy(len(ABLATIONS), config)
    inner_runner = "sequential" if strategy == RunnerStrategy.PARALLEL else config.runner
    variants = {
        name: _variant_config(config, name, *flags).with_overrides([f"runner={json.dumps(inner_runner)}"])
        for name, *flags in ABLATIONS
    }
    jobs = [
        partial(cmd_train, variant, out / name, False, strategy == RunnerStrategy.PARALLEL)
        for name, variant in variants.items()
    ]
    RunnerFactory.create_runner(strategy, config).run(jobs)

    digests = {read_json(out / name / DATA_FILE)["data_sha256"] for name in variants}
    if len(digests) != 1:
        de = "Ablation variants were trained on different data"
        raise DataError(de)

    rows = []
    medians: dict[str, float] = {}
    for name, contrast, cov, energy in ABLATIONS:
        frame = pd.read_csv(out / name / "metrics.csv")
        test = frame[frame["split"] == "test"]
        row: dict[str, object] = {
            "variant": name,
            "contrast": "✓" if contrast else "✗",
            "covariance": "✓" if cov else "✗",
            "energy": "✓" if energy else "✗",
        }
        for direction, group in test.groupby("direction", sort=True):
            row[f"mse {direction}"] = format_mean_std(group["mse"].mean(), group["mse"].std(ddof=0))
        rows.append(row)
        medians[name] = float(test["mse"].median())

    table = pd.DataFrame(rows)
    table.to_csv(out / "ablation.csv", index=False)
    write_markdown_table(table, out / "ablation.md", f"{config.name} ablation")
    console.print(render_table(table, f"{config.name} ablation"))
    worse = [n for n, m in medians.items() if n != "full" and m < medians["full"]]
    if worse:
        logger.warning("Full objective has higher median MSE than: %s", ", ".join(worse))
    return table


def _probe_fold(trainer: Trainer, test_pairs: Sequence[SequencePair]) -> dict[tuple[str, str], float]:
    """Linear and nonlinear probe accuracies of both modalities on one fold."""
    x, y, labels = (torch.from_numpy(a) for a in stack_pairs(test_pairs))
    model_x, model_y = trainer.ema_models()
    eval_cfg = trainer.config.eval
    scores: dict[tuple[str, str], float] = {}
    for modality, model, data in (("X", model_x, x), ("Y", model_y, y)):
        latents = pooled_latents(model, data, trainer.schedule, eval_cfg.seed)
        for kind in ("linear", "nonlinear"):
            try:
                scores[kind, modality] = probe(
                    latents, labels.numpy(), kind, eval_cfg.probe_test_size, eval_cfg.seed
                )
            except ValueError as e:
                logger.warning("Skipping %s probe on %s: %s", kind, modality, e)
    return scores


def cmd_probe(run_dirs: Sequence[Path], out: Path) -> pd.DataFrame:
    """Probe held-out latents of every run for each alignment method present.

    Returns:
        pd.DataFrame: One row per (method, probe kind, modality).
    """
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / CONFIG_FILE, {"runs": [str(p) for p in run_dirs]})

    scores: dict[tuple[str, str, str], list[float]] = {}
    chance: dict[str, float] = {}
    n_eval: dict[str, int] = {}
    for run_dir in run_dirs:
        config = _run_config(run_dir)
        method = config.alignment.method
        pairs, _ = load_pairs(config)
        chance[method] = 1.0 / len({p.profile_label for p in pairs})
        for fold_dir in track(_fold_dirs(run_dir), f"Probing {run_dir.name}"):
            trainer, _, _, test_pairs = _restore_fold(fold_dir, pairs)
            held = math.ceil(trainer.config.eval.probe_test_size * len(test_pairs))
            n_eval[method] = n_eval.get(method, 0) + held
            for (kind, modality), value in _probe_fold(trainer, test_pairs).items():
                scores.setdefault((method, kind, modality), []).append(value)

    rows = []
    for (method, kind, modality), values in sorted(scores.items()):
        accuracy = float(np.mean(values))
        clear = above_chance(accuracy, chance[method], n_eval[method])
        if method != "none" and kind == "linear" and not clear:
            logger.warning("%s linear probe on %s is within 3 sigma of chance", method, modality)
        rows.append(
            {
                "method": method,
                "probe": kind,
                "modality": modality,
                "accuracy": format_mean_std(accuracy, float(np.std(values))),
                "chance": f"{chance[method]:.2f}",
                PROBE_CHANCE_COLUMN: "✓" if clear else "✗",
            }
        )
    columns = ["method", "probe", "modality", "accuracy", "chance", PROBE_CHANCE_COLUMN]
    table = pd.DataFrame(rows, columns=columns)
    table.to_csv(out / "probe.csv", index=False)
    write_markdown_table(table, out / "probe.md", "Latent probing")
    console.print(render_table(table, "Latent probing"))
    return table

