"""Generative-quality and representation metrics.

Functions:
    - generation_mse: Error against the paired ground truth
    - fid: Frechet distance between Gaussian fits of two feature sets
    - predictive_score / predictive_ratio: Train-on-generated, test-on-real MAE
    - probe: Linear or one-hidden-layer classifier accuracy on latents
    - latent_correlation: Linear centered kernel alignment

Reports are collected in :class:`MetricsReport` rows and aggregated into
``mean±std`` tables.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
import torch
from rich.table import Table
from scipy import linalg
from scipy.stats import binom
from sklearn.linear_model import LogisticRegression
from sklearn.metrics.pairwise import linear_kernel
from sklearn.model_selection import train_test_split
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import KernelCenterer, StandardScaler
from torch import nn

__all__ = [
    "METRIC_COLUMNS",
    "REPORT_COLUMNS",
    "MetricsReport",
    "above_chance",
    "aggregate",
    "chance_sigma",
    "fid",
    "format_mean_std",
    "generation_mse",
    "latent_correlation",
    "predictive_ratio",
    "predictive_score",
    "probe",
    "render_table",
    "window_features",
    "write_markdown_table",
    "write_metrics_csv",
]

logger = logging.getLogger(__name__)

EIG_CLIP = 1e-8


def _as_numpy(values: np.ndarray | torch.Tensor) -> np.ndarray:
    if isinstance(values, torch.Tensor):
        return values.detach().cpu().double().numpy()
    return np.asarray(values, dtype=np.float64)


def generation_mse(generated: np.ndarray | torch.Tensor, ground_truth: np.ndarray | torch.Tensor) -> float:
    """Mean squared error between generated and paired real sequences."""
    gen, real = _as_numpy(generated), _as_numpy(ground_truth)
    if gen.shape != real.shape:
        ve = f"Shape mismatch: {gen.shape} vs {real.shape}"
        raise ValueError(ve)
    return float(np.mean((gen - real) ** 2))


def window_features(sequences: np.ndarray | torch.Tensor, window: int) -> np.ndarray:
    """Flatten non-overlapping sub-windows of ``[N, L, d]`` into ``[N * M, window * d]``."""
    seqs = _as_numpy(sequences)
    n, length, width = seqs.shape
    count = length // window
    if count < 1:
        ve = f"Window {window} is longer than the sequences ({length})"
        raise ValueError(ve)
    return seqs[:, : count * window].reshape(n * count, window * width)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = linalg.eigh(matrix)
    eigvals = np.where(np.abs(eigvals) < EIG_CLIP, 0.0, eigvals).clip(min=0.0)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def fid(real_feats: np.ndarray | torch.Tensor, gen_feats: np.ndarray | torch.Tensor) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    ``||mu - mu'||^2 + tr(S + S' - 2 (S S')^{1/2})``. The trace of the matrix
    square root is taken through the symmetric product ``S^{1/2} S' S^{1/2}``,
    which has the same eigenvalues as ``S S'``; eigenvalues below 1e-8 in
    magnitude are clipped to zero.

    Raises:
        ValueError: If the moments are not finite or the widths differ.
    """
    real, gen = _as_numpy(real_feats), _as_numpy(gen_feats)
    if real.ndim != 2 or gen.ndim != 2 or real.shape[1] != gen.shape[1]:  # noqa: PLR2004
        ve = f"Expected [N, d] feature sets of equal width, got {real.shape} and {gen.shape}"
        raise ValueError(ve)
    width = real.shape[1]
    if width > min(real.shape[0], gen.shape[0]):
        logger.warning(
            "FID on %d features from %d/%d samples: covariances are rank-deficient",
            width,
            real.shape[0],
            gen.shape[0],
        )
    mu_r, mu_g = real.mean(axis=0), gen.mean(axis=0)
    sigma_r = np.atleast_2d(np.cov(real, rowvar=False))
    sigma_g = np.atleast_2d(np.cov(gen, rowvar=False))
    if not all(np.all(np.isfinite(m)) for m in (mu_r, mu_g, sigma_r, sigma_g)):
        ve = "Non-finite feature moments in FID"
        raise ValueError(ve)

    root_r = _psd_sqrt(sigma_r)
    product = root_r @ sigma_g @ root_r
    eigvals = linalg.eigvalsh(0.5 * (product + product.T))
    eigvals = np.where(np.abs(eigvals) < EIG_CLIP, 0.0, eigvals).clip(min=0.0)
    trace_root = float(np.sum(np.sqrt(eigvals)))
    distance = float(np.sum((mu_r - mu_g) ** 2) + np.trace(sigma_r) + np.trace(sigma_g) - 2 * trace_root)
    return max(distance, 0.0)


class _Forecaster(nn.Module):
    """One-layer GRU reading a prefix and emitting the remaining steps."""

    def __init__(self, width: int, hidden: int, horizon: int) -> None:
        super().__init__()
        self.width = width
        self.horizon = horizon
        self.gru = nn.GRU(width, hidden, batch_first=True)
        self.head = nn.Linear(hidden, horizon * width)

    def forward(self, prefix: torch.Tensor) -> torch.Tensor:
        _, last = self.gru(prefix)
        return self.head(last[-1]).reshape(-1, self.horizon, self.width)


def predictive_score(
    generated_train: np.ndarray | torch.Tensor,
    real_test: np.ndarray | torch.Tensor,
    horizon_frac: float = 0.2,
    epochs: int = 200,
    hidden: int = 32,
    seed: int = 0,
) -> float:
    """MAE on real data of a forecaster trained on generated data.

    The forecaster reads the first ``(1 - horizon_frac) * L`` steps and
    predicts the rest. It is trained full-batch with Adam on an L1 loss under
    a forked, seeded RNG, so the score is reproducible and the caller's RNG
    is left untouched.

    Raises:
        ValueError: If shapes differ or the prefix or horizon would be empty.
    """
    train = torch.as_tensor(_as_numpy(generated_train), dtype=torch.float32)
    test = torch.as_tensor(_as_numpy(real_test), dtype=torch.float32)
    if train.dim() != 3 or train.shape[1:] != test.shape[1:]:  # noqa: PLR2004
        ve = f"Sequence sets must share [L, d], got {tuple(train.shape)} and {tuple(test.shape)}"
        raise ValueError(ve)
    if not 0 < horizon_frac < 1:
        ve = f"horizon_frac must lie in (0, 1), got {horizon_frac}"
        raise ValueError(ve)
    length, width = train.shape[1], train.shape[2]
    horizon = round(horizon_frac * length)
    split = length - horizon
    if horizon < 1 or split < 1:
        ve = f"Sequences of length {length} are too short for horizon_frac={horizon_frac}"
        raise ValueError(ve)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = _Forecaster(width, hidden, horizon)
        optimizer = torch.optim.Adam(model.parameters(), lr=5e-3)
        loss_fn = nn.L1Loss()
        for _ in range(epochs):
            optimizer.zero_grad()
            loss = loss_fn(model(train[:, :split]), train[:, split:])
            loss.backward()
            optimizer.step()
        with torch.no_grad():
            return float(loss_fn(model(test[:, :split]), test[:, split:]))


def predictive_ratio(
    generated_train: np.ndarray | torch.Tensor,
    real_train: np.ndarray | torch.Tensor,
    real_test: np.ndarray | torch.Tensor,
    horizon_frac: float = 0.2,
    epochs: int = 200,
    hidden: int = 32,
    seed: int = 0,
) -> tuple[float, float]:
    """Train-on-generated score and its ratio to the train-on-real score."""
    score = predictive_score(generated_train, real_test, horizon_frac, epochs, hidden, seed)
    baseline = predictive_score(real_train, real_test, horizon_frac, epochs, hidden, seed)
    return score, score / max(baseline, 1e-12)


def probe(
    latents: np.ndarray | torch.Tensor,
    labels: np.ndarray | Sequence[int],
    kind: str = "linear",
    test_size: float = 0.2,
    seed: int = 0,
) -> float:
    """Held-out accuracy of a classifier trained on frozen latents.

    ``linear`` is multinomial logistic regression; ``nonlinear`` is an MLP
    with one hidden layer of width 64. Both standardize features first and
    use a stratified split.

    Raises:
        ValueError: On a single-class label set or an unknown kind.
    """
    features = _as_numpy(latents)
    targets = np.asarray(labels)
    if np.unique(targets).size < 2:  # noqa: PLR2004
        ve = "Probing needs at least two distinct labels"
        raise ValueError(ve)
    if kind == "linear":
        classifier = LogisticRegression(max_iter=2000)
    elif kind == "nonlinear":
        classifier = MLPClassifier(hidden_layer_sizes=(64,), max_iter=2000, random_state=seed)
    else:
        ve = f"Unknown probe kind {kind!r}; expected 'linear' or 'nonlinear'"
        raise ValueError(ve)
    x_train, x_test, y_train, y_test = train_test_split(
        features, targets, test_size=test_size, stratify=targets, random_state=seed
    )
    model = make_pipeline(StandardScaler(), classifier).fit(x_train, y_train)
    return float(model.score(x_test, y_test))


def chance_sigma(chance: float, n_samples: int) -> float:
    """Standard deviation of a chance-level classifier's accuracy on ``n_samples``."""
    if n_samples < 1:
        ve = f"Need at least one evaluation sample, got {n_samples}"
        raise ValueError(ve)
    return float(binom.std(n_samples, chance) / n_samples)


def above_chance(accuracy: float, chance: float, n_samples: int, sigmas: float = 3.0) -> bool:
    """Whether ``accuracy`` exceeds ``chance`` by at least ``sigmas`` binomial deviations."""
    return accuracy >= chance + sigmas * chance_sigma(chance, n_samples)


def latent_correlation(zx: np.ndarray | torch.Tensor, zy: np.ndarray | torch.Tensor) -> float:
    """Linear centered kernel alignment between ``[N, d]`` representations.

    Raises:
        ValueError: On mismatched sample counts or zero-variance input.
    """
    x, y = _as_numpy(zx), _as_numpy(zy)
    if x.shape[0] != y.shape[0]:
        ve = f"Sample counts differ: {x.shape[0]} vs {y.shape[0]}"
        raise ValueError(ve)
    centerer = KernelCenterer()
    k = centerer.fit_transform(linear_kernel(x))
    l_ = centerer.fit_transform(linear_kernel(y))
    hsic_xy = np.sum(k * l_)
    norm = np.sqrt(np.sum(k * k) * np.sum(l_ * l_))
    if norm <= 0:
        ve = "Latent correlation is undefined for zero-variance input"
        raise ValueError(ve)
    return float(np.clip(hsic_xy / norm, 0.0, 1.0))


@dataclass
class MetricsReport:
    """Metrics of one (modality pair, direction, fold, split) cell."""

    modality_pair: str
    direction: str
    fold_index: int
    split: str
    mse: float
    fid: float
    predictive: float
    predictive_ratio: float
    probe_linear: float
    probe_nonlinear: float
    latent_correlation: float

    def as_row(self) -> dict[str, object]:
        return asdict(self)


REPORT_COLUMNS = tuple(f.name for f in fields(MetricsReport))
KEY_COLUMNS = ("modality_pair", "direction", "split")
METRIC_COLUMNS = tuple(c for c in REPORT_COLUMNS if c not in (*KEY_COLUMNS, "fold_index"))


def write_metrics_csv(reports: Sequence[MetricsReport], path: Path) -> pd.DataFrame:
    """Write one row per report and return the frame."""
    frame = pd.DataFrame([r.as_row() for r in reports], columns=list(REPORT_COLUMNS))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return frame


def format_mean_std(mean: float, std: float, digits: int = 2) -> str:
    """Format as ``0.14±0.02``."""
    return f"{mean:.{digits}f}±{std:.{digits}f}"


def aggregate(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean ± population std of every metric across folds.

    Args:
        frame: Per-fold rows with the :data:`REPORT_COLUMNS`.

    Returns:
        pd.DataFrame: One row per (modality_pair, direction, split) with a
        formatted ``mean±std`` string per metric.
    """
    grouped = frame.groupby(list(KEY_COLUMNS), sort=True)[list(METRIC_COLUMNS)]
    means = grouped.mean()
    stds = grouped.std(ddof=0).fillna(0.0)
    table = means.copy().astype(object)
    for column in METRIC_COLUMNS:
        table[column] = [
            format_mean_std(m, s) for m, s in zip(means[column], stds[column], strict=True)
        ]
    return table.reset_index()


def write_markdown_table(frame: pd.DataFrame, path: Path, title: str = "") -> str:
    """Write ``frame`` as a Markdown table and return the text."""
    header = [str(c) for c in frame.columns]
    lines = [f"# {title}", ""] if title else []
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join("---" for _ in header) + "|")
    lines.extend("| " + " | ".join(str(v) for v in row) + " |" for row in frame.itertuples(index=False))
    text = "\n".join(lines) + "\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return text


def render_table(frame: pd.DataFrame, title: str) -> Table:
    """Rich table view of a small frame for the console."""
    table = Table(title=title, show_header=True, header_style="bold blue")
    for column in frame.columns:
        table.add_column(str(column))
    for row in frame.itertuples(index=False):
        table.add_row(*(str(v) for v in row))
    return table
