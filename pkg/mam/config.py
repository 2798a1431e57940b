"""Configuration module for mam.

Every configuration object is a dataclass that validates itself on
construction. Each class lists its rules in ``_get_validation_rules`` as
``(condition, message)`` pairs; the first rule whose condition holds aborts
construction with ``ConfigError("Invalid configuration: <message>")``.

The run configuration is the union of all sections and round-trips through
JSON. Dotted overrides (``train.epochs=3``) are applied to the dictionary
form before validation.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, ClassVar, Optional

from mam.utils import ConfigError, read_json, write_json

__all__ = [
    "ALIGN_METHODS",
    "AlignmentConfig",
    "DataConfig",
    "DenoiserConfig",
    "EvalConfig",
    "FoldConfig",
    "ModelConfig",
    "ObjectiveConfig",
    "RunConfig",
    "ScheduleConfig",
    "TrainConfig",
    "apply_overrides",
    "load_config",
    "preset",
    "save_config",
]

ALIGN_METHODS = ("llma", "simclr", "barlow", "vicreg", "latent_mse", "none")
ALIGN_ALIASES = {"mse": "latent_mse"}
SCHEDULE_KINDS = ("linear", "cosine")
ALPHA_MODES = ("softplus", "uncertainty")
RUNNER_STRATEGIES = ("auto", "sequential", "parallel")


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, int | float) and not isinstance(value, bool)


class ValidatedConfig:
    """Mixin giving dataclasses rule-based validation."""

    def __post_init__(self) -> None:
        """Validate configuration settings after initialization.

        Raises:
            ConfigError: If any configuration setting is invalid.
        """
        self._coerce()
        error_message = self._validate()
        if error_message:
            ce = f"Invalid configuration: {error_message}"
            raise ConfigError(ce)

    def _coerce(self) -> None:
        """Normalize JSON-decoded values (lists into tuples and the like)."""

    def _validate(self) -> Optional[str]:
        for condition, error_message in self._get_validation_rules():
            if condition:
                return error_message
        return None

    def is_valid(self) -> bool:
        """Check if the configuration is valid."""
        return self._validate() is None

    def _get_validation_rules(self) -> list[tuple[bool, str]]:
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-ready dictionary of the settings."""
        return asdict(self)  # type: ignore[call-overload]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Any:  # noqa: ANN401
        """Build an instance, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
        unknown = sorted(set(data) - known)
        if unknown:
            ce = f"Unknown {cls.__name__} keys: {', '.join(unknown)}"
            raise ConfigError(ce)
        return cls(**data)


@dataclass
class ScheduleConfig(ValidatedConfig):
    """Noise schedule settings.

    Attributes:
        kind: ``linear`` (linear in cumulative retention) or ``cosine``.
        num_steps: Number of diffusion steps T'.
        retention_min: Terminal cumulative retention for the linear kind.
    """

    kind: str = "cosine"
    num_steps: int = 50
    retention_min: float = 0.01

    def _get_validation_rules(self) -> list[tuple[bool, str]]:
        return [
            (
                self.kind not in SCHEDULE_KINDS,
                f"schedule kind must be one of {', '.join(SCHEDULE_KINDS)}",
            ),
            (
                not _is_int(self.num_steps) or self.num_steps < 1,
                "num_steps must be a positive integer",
            ),
            (
                not _is_number(self.retention_min)
                or not 0.0 < self.retention_min < 1.0,
                "retention_min must lie strictly between 0 and 1",
            ),
        ]


@dataclass
class ModelConfig(ValidatedConfig):
    """Architecture shared by both denoisers, independent of modality widths."""

    d_model: int = 32
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    n_heads: int = 4
    ffn_dim: int = 0  # 0 means 4 * d_model
    dropout: float = 0.1
    max_len: int = 64

    def _get_validation_rules(self) -> list[tuple[bool, str]]:
        counts = (self.d_model, self.n_layers_enc, self.n_layers_dec, self.n_heads)
        return [
            (
                not all(_is_int(c) and c >= 1 for c in counts),
                "d_model, layer counts and n_heads must be positive integers",
            ),
            (
                self.d_model % self.n_heads != 0,
                "d_model must be divisible by n_heads",
            ),
            (
                not _is_int(self.ffn_dim) or self.ffn_dim < 0,
                "ffn_dim must be a non-negative integer",
            ),
            (
                not _is_number(self.dropout) or not 0.0 <= self.dropout < 1.0,
                "dropout must lie in [0, 1)",
            ),
            (
                not _is_int(self.max_len) or self.max_len < 1,
                "max_len must be a positive integer",
            ),
        ]

    def for_modality(self, d_in: int, d_cond: int, num_steps: int) -> DenoiserConfig:
        """Bind the architecture to one modality's widths."""
        return DenoiserConfig(
            d_in=d_in,
            d_cond=d_cond,
            num_steps=num_steps,
            **self.to_dict(),
        )


@dataclass
class DenoiserConfig(ModelConfig):
    """Full configuration of one conditional denoiser.

    The latent width exposed by the encoder equals ``d_model``.
    """

    d_in: int = 1
    d_cond: int = 1
    num_steps: int = 50

    @property
    def d_latent(self) -> int:
        """Width of the latent trajectory returned by the encoder."""
        return self.d_model

    @property
    def ffn_width(self) -> int:
        """Feed-forward width used in every transformer layer."""
        return self.ffn_dim or 4 * self.d_model

    def _get_validation_rules(self) -> list[tuple[bool, str]]:
        return [
            *super()._get_validation_rules(),
            (
                not all(_is_int(v) and v >= 1 for v in (self.d_in, self.d_cond)),
                "d_in and d_cond must be positive integers",
            ),
            (
                not _is_int(self.num_steps) or self.num_steps < 1,
                "num_steps must be a positive integer",
            ),
        ]


@dataclass
class AlignmentConfig(ValidatedConfig):
    """Latent alignment settings.

    Attributes:
        method: One of ``llma``, ``simclr``, ``barlow``, ``vicreg``,
            ``latent_mse`` or ``none`` (``mse`` is accepted as an alias).
        window_len: Window length C used to partition latent trajectories.
        temperature: Contrastive temperature.
        barlow_lambda: Off-diagonal weight of the cross-correlation loss.
        vicreg_weights: Invariance, variance and covariance weights.
        vicreg_gamma: Standard deviation floor of the variance hinge.
        symmetrize: Average the contrastive term over both anchor sides.
        use_contrast: Keep the first-order term of LLMA.
        use_cov: Keep the second-order term of LLMA.
    """

    method: str = "llma"
    window_len: int = 8
    temperature: float = 0.1
    barlow_lambda: float = 5e-3
    vicreg_weights: tuple[float, float, float] = (25.0, 25.0, 1.0)
    vicreg_gamma: float = 1.0
    symmetrize: bool = False
    use_contrast: bool = True
    use_cov: bool = True

    def _coerce(self) -> None:
        self.method = ALIGN_ALIASES.get(self.method, self.method)
        if isinstance(self.vicreg_weights, list):
            self.vicreg_weights = tuple(self.vicreg_weights)  # type: ignore[assignment]

    @property
    def enabled(self) -> bool:
        """Whether the alignment term takes part in the objective."""
        if self.method == "none":
            return False
        if self.method == "llma":
            return self.use_contrast or self.use_cov
        return True

    def _get_validation_rules(self) -> list[tuple[bool, str]]:
        weights = self.vicreg_weights
        return [
            (
                self.method not in ALIGN_METHODS,
                f"alignment method must be one of {', '.join(ALIGN_METHODS)}",
            ),
            (
                not _is_int(self.window_len) or self.window_len < 1,
                "window_len must be a positive integer",
            ),
            (
                not _is_number(self.temperature) or self.temperature <= 0,
                "temperature must be positive",
            ),
            (
                not _is_number(self.barlow_lambda) or self.barlow_lambda < 0,
                "barlow_lambda must be non-negative",
            ),
            (
                not isinstance(weights, tuple)
                or len(weights) != 3  # noqa: PLR2004
                or not all(_is_number(w) and w >= 0 for w in weights),
                "vicreg_weights must be three non-negative numbers",
            ),
            (
                not _is_number(self.vicreg_gamma) or self.vicreg_gamma < 0,
                "vicreg_gamma must be non-negative",
            ),
            (
                not all(
                    isinstance(v, bool)
                    for v in (self.symmetrize, self.use_contrast, self.use_cov)
                ),
                "symmetrize, use_contrast and use_cov must be boolean values",
            ),
        ]


@dataclass
class ObjectiveConfig(ValidatedConfig):
    """Joint objective settings. The energy weight is fixed to 1."""

    GAMMA: ClassVar[float] = 1.0

    alpha_mode: str = "uncertainty"
    alpha_init: float = 0.0
    use_energy: bool = True

    def _get_validation_rules(self) -> list[tuple[bool, str]]:
        return [
            (
                self.alpha_mode not in ALPHA_MODES,
                f"alpha_mode must be one of {', '.join(ALPHA_MODES)}",
            ),
            (not _is_number(self.alpha_init), "alpha_init must be a number"),
            (not isinstance(self.use_energy, bool), "use_energy must be a boolean value"),
        ]


@dataclass
class TrainConfig(ValidatedConfig):
    """Optimization settings for the joint training loop."""

    epochs: int = 20
    batch_size: int = 16
    lr_theta: float = 1e-4
    lr_phi: float = 1e-4
    lr_alpha: Optional[float] = None
    weight_decay: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    ema_decay: float = 0.999
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 saves only at the end

    def _coerce(self) -> None:
        if isinstance(self.adam_betas, list):
            self.adam_betas = tuple(self.adam_betas)  # type: ignore[assignment]

    @property
    def alpha_lr(self) -> float:
        """Learning rate of the alignment weight (defaults to lr_theta)."""
        return self.lr_theta if self.lr_alpha is None else self.lr_alpha

    def _get_validation_rules(self) -> list[tuple[bool, str]]:
        return [
            (
                not _is_int(self.epochs) or self.epochs < 0,
                "epochs must be a non-negative integer",
            ),
            (
                not _is_int(self.batch_size) or self.batch_size < 1,
                "batch_size must be a positive integer",
            ),
            (
                not _is_number(self.lr_theta) or self.lr_theta < 0,
                "lr_theta must be non-negative",
            ),
            (
                not _is_number(self.lr_phi) or self.lr_phi < 0,
                "lr_phi must be non-negative",
            ),
            (
                self.lr_alpha is not None
                and (not _is_number(self.lr_alpha) or self.lr_alpha < 0),
                "lr_alpha must be non-negative",
            ),
            (
                not _is_number(self.weight_decay) or self.weight_decay < 0,
                "weight_decay must be non-negative",
            ),
            (
                not isinstance(self.adam_betas, tuple)
                or len(self.adam_betas) != 2  # noqa: PLR2004
                or not all(_is_number(b) and 0 <= b < 1 for b in self.adam_betas),
                "adam_betas must be two numbers in [0, 1)",
            ),
            (
                not _is_number(self.ema_decay) or not 0.0 <= self.ema_decay < 1.0,
                "ema_decay must lie in [0, 1)",
            ),
            (not _is_int(self.seed), "seed must be an integer"),
            (
                not _is_int(self.checkpoint_every) or self.checkpoint_every < 0,
                "checkpoint_every must be a non-negative integer",
            ),
        ]


@dataclass
class FoldConfig(ValidatedConfig):
    """Leave-k-out cross-validation settings.

    Attributes:
        k_subjects: Subjects held out per fold.
        k_profiles: Task profiles held out per fold (0 keeps every profile).
        n_folds: Number of folds built (0 covers every subject once).
        seed: Seed of the subject/profile permutation.
        max_folds: Run only the first folds (0 runs all of them).
    """

    k_subjects: int = 1
    k_profiles: int = 0
    n_folds: int = 0
    seed: int = 0
    max_folds: int = 0

    def _get_validation_rules(self) -> list[tuple[bool, str]]:
        return [
            (
                not _is_int(self.k_subjects) or self.k_subjects < 1,
                "k_subjects must be a positive integer",
            ),
            (
                not _is_int(self.k_profiles) or self.k_profiles < 0,
                "k_profiles must be a non-negative integer",
            ),
            (
                not _is_int(self.n_folds) or self.n_folds < 0,
                "n_folds must be a non-negative integer",
            ),
            (not _is_int(self.seed), "seed must be an integer"),
            (
                not _is_int(self.max_folds) or self.max_folds < 0,
                "max_folds must be a non-negative integer",
            ),
        ]


@dataclass
class DataConfig(ValidatedConfig):
    """Data source settings.

    ``source`` is either ``synthetic:<system>`` (generated in memory), a
    dataset directory written by ``make-synthetic`` or a canonical CSV file.
    """

    MAX_PROFILES: ClassVar[int] = 27

    source: str = "synthetic:coupled_oscillators"
    seq_len: int = 64
    modality_x: str = "kinematics"
    modality_y: str = "kinetics"
    n_sequences: int = 96
    n_subjects: int = 4
    n_regimes: int = 3
    obs_kind: str = "tanh_affine"
    obs_noise_std: float = 0.01
    process_noise_std: float = 0.0
    d_x: int = 6
    d_y: int = 4
    seed: int = 0

    def _get_validation_rules(self) -> list[tuple[bool, str]]:
        return [
            (not isinstance(self.source, str) or not self.source, "source must be set"),
            (
                not _is_int(self.seq_len) or self.seq_len < 2,  # noqa: PLR2004
                "seq_len must be an integer of at least 2",
            ),
            (
                not all(
                    _is_int(v) and v >= 1
                    for v in (self.n_sequences, self.n_subjects, self.n_regimes)
                ),
                "n_sequences, n_subjects and n_regimes must be positive integers",
            ),
            (
                self.n_regimes > self.MAX_PROFILES,
                f"n_regimes must not exceed {self.MAX_PROFILES}",
            ),
            (
                self.obs_kind not in ("tanh_affine", "identity", "lossy"),
                "obs_kind must be one of tanh_affine, identity, lossy",
            ),
            (
                not _is_number(self.obs_noise_std) or self.obs_noise_std < 0,
                "obs_noise_std must be non-negative",
            ),
            (
                not _is_number(self.process_noise_std) or self.process_noise_std < 0,
                "process_noise_std must be non-negative",
            ),
            (
                not all(_is_int(v) and v >= 1 for v in (self.d_x, self.d_y)),
                "d_x and d_y must be positive integers",
            ),
            (not _is_int(self.seed), "seed must be an integer"),
        ]

    @property
    def is_synthetic(self) -> bool:
        """Whether the source names a built-in synthetic system."""
        return self.source.startswith("synthetic:")


@dataclass
class EvalConfig(ValidatedConfig):
    """Evaluation protocol settings."""

    horizon_frac: float = 0.2
    predictor_epochs: int = 200
    predictor_hidden: int = 32
    fid_window: int = 8
    probe_test_size: float = 0.2
    seed: int = 0
    plots: bool = True

    def _get_validation_rules(self) -> list[tuple[bool, str]]:
        return [
            (
                not _is_number(self.horizon_frac) or not 0 < self.horizon_frac < 1,
                "horizon_frac must lie strictly between 0 and 1",
            ),
            (
                not _is_int(self.predictor_epochs) or self.predictor_epochs < 1,
                "predictor_epochs must be a positive integer",
            ),
            (
                not _is_int(self.predictor_hidden) or self.predictor_hidden < 1,
                "predictor_hidden must be a positive integer",
            ),
            (
                not _is_int(self.fid_window) or self.fid_window < 1,
                "fid_window must be a positive integer",
            ),
            (
                not _is_number(self.probe_test_size)
                or not 0 < self.probe_test_size < 1,
                "probe_test_size must lie strictly between 0 and 1",
            ),
            (not _is_int(self.seed), "seed must be an integer"),
            (not isinstance(self.plots, bool), "plots must be a boolean value"),
        ]


SECTIONS: dict[str, type[ValidatedConfig]] = {
    "schedule": ScheduleConfig,
    "model": ModelConfig,
    "alignment": AlignmentConfig,
    "objective": ObjectiveConfig,
    "train": TrainConfig,
    "folds": FoldConfig,
    "data": DataConfig,
    "eval": EvalConfig,
}


@dataclass
class RunConfig(ValidatedConfig):
    """Everything needed to reproduce one experiment run."""

    name: str = "run"
    runner: str = "auto"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    folds: FoldConfig = field(default_factory=FoldConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def _get_validation_rules(self) -> list[tuple[bool, str]]:
        return [
            (not isinstance(self.name, str) or not self.name, "name must be set"),
            (
                self.runner not in RUNNER_STRATEGIES,
                f"runner must be one of {', '.join(RUNNER_STRATEGIES)}",
            ),
            (
                self.model.max_len < self.data.seq_len,
                "model.max_len must be at least data.seq_len",
            ),
            (
                self.alignment.window_len > self.data.seq_len,
                "alignment.window_len must not exceed data.seq_len",
            ),
            (
                self.alignment.method == "llma"
                and self.alignment.use_cov
                and self.alignment.window_len < 2,  # noqa: PLR2004
                "alignment.window_len must be at least 2 for covariance alignment",
            ),
        ]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        """Build a run configuration from its dictionary form."""
        unknown = sorted(set(data) - {"name", "runner", *SECTIONS})
        if unknown:
            ce = f"Unknown RunConfig keys: {', '.join(unknown)}"
            raise ConfigError(ce)
        sections = {
            key: section.from_dict(data.get(key, {}))
            for key, section in SECTIONS.items()
        }
        return cls(
            name=data.get("name", "run"),
            runner=data.get("runner", "auto"),
            **sections,
        )

    def with_overrides(self, overrides: list[str]) -> RunConfig:
        """Return a copy with dotted ``key=value`` overrides applied."""
        return RunConfig.from_dict(apply_overrides(self.to_dict(), overrides))


PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    "paper": {
        "model": {
            "d_model": 128,
            "n_layers_enc": 4,
            "n_layers_dec": 4,
            "n_heads": 8,
            "ffn_dim": 8192,
            "max_len": 300,
        },
        "alignment": {"window_len": 30},
        "data": {"seq_len": 300},
        "train": {"epochs": 50},
    },
}


def preset(name: str = "desk") -> RunConfig:
    """Return a named preset (``desk`` or ``paper``)."""
    if name not in PRESETS:
        ce = f"Unknown preset {name!r}; choose from {', '.join(PRESETS)}"
        raise ConfigError(ce)
    return RunConfig.from_dict(copy.deepcopy(PRESETS[name]))


def _parse_value(raw: str) -> Any:  # noqa: ANN401
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``section.key=value`` overrides to a nested dictionary.

    Args:
        data: Dictionary form of a run configuration.
        overrides: Strings such as ``train.epochs=3`` or ``alignment.method=none``.

    Returns:
        dict: A modified deep copy of ``data``.

    Raises:
        ConfigError: On malformed overrides or unknown keys.
    """
    result = copy.deepcopy(data)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            ce = f"Override must look like key=value, got {item!r}"
            raise ConfigError(ce)
        *parents, leaf = key.strip().split(".")
        node = result
        for part in parents:
            child = node.get(part)
            if not isinstance(child, dict):
                ce = f"Unknown override section {part!r} in {item!r}"
                raise ConfigError(ce)
            node = child
        if leaf not in node:
            ce = f"Unknown override key {key!r}"
            raise ConfigError(ce)
        node[leaf] = _parse_value(raw.strip())
    return result


def load_config(path: Path, overrides: Optional[list[str]] = None) -> RunConfig:
    """Load a run configuration file and apply overrides."""
    try:
        data = read_json(path)
    except (OSError, ValueError) as e:
        ce = f"Cannot read config {path}: {e}"
        raise ConfigError(ce) from e
    base = preset().to_dict()
    merged = _deep_merge(base, data)
    return RunConfig.from_dict(apply_overrides(merged, overrides or []))


def save_config(config: RunConfig, path: Path) -> None:
    """Write the resolved configuration next to the run artifacts."""
    write_json(path, config.to_dict())


def _deep_merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged
