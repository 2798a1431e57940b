"""Synthetic shared-latent multimodal systems.

Both modalities observe the same hidden trajectory through fixed, seeded
observation maps. The hidden trajectory is returned next to the pairs for
tests and premise checks; models never see it.

Dynamics:
    - ``coupled_oscillators``: two planar oscillators with frequencies
      ``omega1``/``omega2`` and skew-symmetric ``coupling``, advanced by the
      exact propagator ``expm(A * dt)`` (an orthogonal map).
    - ``lorenz``: the Lorenz system integrated with RK4 at ``dt = 0.01``.

Observation kinds:
    - ``tanh_affine``: ``tanh(W z + b)`` with full-rank random ``W``.
    - ``identity``: channel ``i`` reads hidden coordinate ``i mod h``.
    - ``lossy``: like ``tanh_affine`` but ``W`` only reads half of the
      hidden coordinates (rank-deficient).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm
from sklearn.metrics import r2_score
from sklearn.model_selection import train_test_split
from sklearn.neighbors import KNeighborsRegressor

from mam.config import DataConfig
from mam.data.dataset import SequencePair
from mam.utils import ConfigError, NumericalError

__all__ = [
    "DYNAMICS",
    "SyntheticResult",
    "SyntheticSystem",
    "default_regimes",
    "delay_embed",
    "generate_synthetic",
    "lorenz_rhs",
    "premise_r2",
    "rk4_step",
]

logger = logging.getLogger(__name__)

OSCILLATOR_DT = 0.1
LORENZ_DT = 0.01
LORENZ_STRIDE = 5
LORENZ_BURN_IN = 1000
LORENZ_CENTER = np.array([0.0, 0.0, 25.0])
LORENZ_SCALE = 20.0
DIVERGENCE_NORM = 1e6
MAX_RETRIES = 10

HIDDEN_DIMS = {"coupled_oscillators": 4, "lorenz": 3}
DYNAMICS = tuple(HIDDEN_DIMS)


def default_regimes(dynamics: str, n_regimes: int) -> tuple[dict[str, float], ...]:
    """Parameter settings acting as task labels."""
    if dynamics == "coupled_oscillators":
        return tuple(
            {"omega1": 0.6 + 0.5 * r, "omega2": 1.1 + 0.35 * r, "coupling": 0.25}
            for r in range(n_regimes)
        )
    if dynamics == "lorenz":
        return tuple(
            {"sigma": 10.0, "rho": 28.0 + 8.0 * r, "beta": 8.0 / 3.0}
            for r in range(n_regimes)
        )
    ce = f"Unknown synthetic system {dynamics!r}; choose from {', '.join(DYNAMICS)}"
    raise ConfigError(ce)


@dataclass
class SyntheticSystem:
    """Hidden dynamics plus the two observation channels."""

    dynamics: str = "coupled_oscillators"
    regimes: tuple[dict[str, float], ...] = field(default_factory=tuple)
    obs_kind: str = "tanh_affine"
    obs_noise_std: float = 0.01
    process_noise_std: float = 0.0
    d_x: int = 6
    d_y: int = 4
    n_subjects: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dynamics not in HIDDEN_DIMS:
            ce = f"Unknown synthetic system {self.dynamics!r}; choose from {', '.join(DYNAMICS)}"
            raise ConfigError(ce)
        if self.obs_kind not in ("tanh_affine", "identity", "lossy"):
            ce = f"Unknown observation kind {self.obs_kind!r}"
            raise ConfigError(ce)
        if not self.regimes:
            self.regimes = default_regimes(self.dynamics, 3)

    @property
    def hidden_dim(self) -> int:
        return HIDDEN_DIMS[self.dynamics]

    @classmethod
    def from_config(cls, config: DataConfig) -> SyntheticSystem:
        """Build the system named by ``config.source`` (``synthetic:<name>``)."""
        dynamics = config.source.partition(":")[2]
        return cls(
            dynamics=dynamics,
            regimes=default_regimes(dynamics, config.n_regimes),
            obs_kind=config.obs_kind,
            obs_noise_std=config.obs_noise_std,
            process_noise_std=config.process_noise_std,
            d_x=config.d_x,
            d_y=config.d_y,
            n_subjects=config.n_subjects,
            seed=config.seed,
        )

    def describe(self) -> dict[str, object]:
        """Manifest form of the system."""
        return {
            "dynamics": self.dynamics,
            "regimes": [dict(r) for r in self.regimes],
            "obs_kind": self.obs_kind,
            "obs_noise_std": self.obs_noise_std,
            "process_noise_std": self.process_noise_std,
            "d_x": self.d_x,
            "d_y": self.d_y,
            "n_subjects": self.n_subjects,
            "seed": self.seed,
        }


@dataclass
class SyntheticResult:
    """Generated pairs and the hidden trajectories ``[N, L, h]`` behind them."""

    pairs: list[SequencePair]
    hidden: np.ndarray


ObservationMap = Callable[[np.ndarray], np.ndarray]


def _observation_map(kind: str, d_out: int, hidden_dim: int, rng: np.random.Generator) -> ObservationMap:
    if kind == "identity":
        index = np.arange(d_out) % hidden_dim
        return lambda z: z[..., index]

    weights = rng.normal(size=(d_out, hidden_dim)) / np.sqrt(hidden_dim)
    bias = rng.normal(scale=0.1, size=d_out)
    if kind == "lossy":
        weights[:, max(1, hidden_dim // 2) :] = 0.0
    return lambda z: np.tanh(z @ weights.T + bias)


def _oscillator_propagator(omega1: float, omega2: float, coupling: float) -> np.ndarray:
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    generator = np.zeros((4, 4))
    generator[:2, :2] = omega1 * rot
    generator[2:, 2:] = omega2 * rot
    generator[:2, 2:] = -coupling * np.eye(2)
    generator[2:, :2] = coupling * np.eye(2)
    return expm(generator * OSCILLATOR_DT)


def _oscillators(
    regime: dict[str, float], length: int, noise_std: float, rng: np.random.Generator
) -> np.ndarray:
    propagator = _oscillator_propagator(regime["omega1"], regime["omega2"], regime["coupling"])
    amplitude = rng.uniform(0.5, 1.0, size=2)
    phase = rng.uniform(0.0, 2 * np.pi, size=2)
    z = np.array([
        amplitude[0] * np.cos(phase[0]),
        amplitude[0] * np.sin(phase[0]),
        amplitude[1] * np.cos(phase[1]),
        amplitude[1] * np.sin(phase[1]),
    ])
    path = np.empty((length, 4))
    for k in range(length):
        path[k] = z
        z = propagator @ z
        if noise_std:
            z = z + rng.normal(scale=noise_std, size=4)
    return path


def lorenz_rhs(state: np.ndarray, sigma: float, rho: float, beta: float) -> np.ndarray:
    """Lorenz vector field."""
    x, y, z = state
    return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])


def rk4_step(
    f: Callable[[np.ndarray], np.ndarray], state: np.ndarray, dt: float
) -> np.ndarray:
    """One classical Runge-Kutta step."""
    k1 = f(state)
    k2 = f(state + 0.5 * dt * k1)
    k3 = f(state + 0.5 * dt * k2)
    k4 = f(state + dt * k3)
    return state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _lorenz_attempt(
    regime: dict[str, float], length: int, noise_std: float, rng: np.random.Generator
) -> Optional[np.ndarray]:
    def field_fn(s: np.ndarray) -> np.ndarray:
        return lorenz_rhs(s, regime["sigma"], regime["rho"], regime["beta"])

    state = LORENZ_CENTER + rng.normal(scale=5.0, size=3)
    for _ in range(LORENZ_BURN_IN):
        state = rk4_step(field_fn, state, LORENZ_DT)
    path = np.empty((length, 3))
    for k in range(length):
        path[k] = state
        for _ in range(LORENZ_STRIDE):
            state = rk4_step(field_fn, state, LORENZ_DT)
        if noise_std:
            state = state + rng.normal(scale=noise_std * LORENZ_SCALE, size=3)
        if not np.all(np.isfinite(state)) or np.linalg.norm(state) > DIVERGENCE_NORM:
            return None
    return (path - LORENZ_CENTER) / LORENZ_SCALE


def _lorenz(
    regime: dict[str, float], length: int, noise_std: float, rng: np.random.Generator
) -> np.ndarray:
    for attempt in range(MAX_RETRIES):
        path = _lorenz_attempt(regime, length, noise_std, rng)
        if path is not None:
            return path
        logger.warning("Lorenz trajectory diverged, resampling (attempt %d)", attempt + 1)
    ne = f"Lorenz trajectory diverged {MAX_RETRIES} times for regime {regime}"
    raise NumericalError(ne)


def generate_synthetic(
    system: SyntheticSystem,
    n_sequences: int,
    seq_len: int,
    seed: Optional[int] = None,
) -> SyntheticResult:
    """Sample paired observation sequences of a shared hidden system.

    Sequence ``i`` uses regime ``i mod n_regimes`` (its ``profile_label``) and
    belongs to subject ``s<(i // n_regimes) mod n_subjects>``. Observations
    get Gaussian noise and the fixed map ``(v + 1) / 2``, which sends the
    range of ``tanh`` onto ``[0, 1]`` without looking at the data.

    Args:
        system: The hidden dynamics and observation settings.
        n_sequences: Number of pairs.
        seq_len: Length L of every pair.
        seed: Overrides ``system.seed``.

    Returns:
        SyntheticResult: Pairs plus hidden trajectories.
    """
    seed = system.seed if seed is None else seed
    map_rng = np.random.default_rng([seed, 0])
    path_rng = np.random.default_rng([seed, 1])
    noise_rng = np.random.default_rng([seed, 2])

    obs_x = _observation_map(system.obs_kind, system.d_x, system.hidden_dim, map_rng)
    obs_y = _observation_map(system.obs_kind, system.d_y, system.hidden_dim, map_rng)
    simulate = _oscillators if system.dynamics == "coupled_oscillators" else _lorenz

    n_regimes = len(system.regimes)
    pairs: list[SequencePair] = []
    hidden = np.empty((n_sequences, seq_len, system.hidden_dim))
    for i in range(n_sequences):
        regime = i % n_regimes
        hidden[i] = simulate(system.regimes[regime], seq_len, system.process_noise_std, path_rng)
        x = obs_x(hidden[i]) + noise_rng.normal(scale=system.obs_noise_std, size=(seq_len, system.d_x))
        y = obs_y(hidden[i]) + noise_rng.normal(scale=system.obs_noise_std, size=(seq_len, system.d_y))
        subject = f"s{(i // n_regimes) % system.n_subjects}"
        pairs.append(
            SequencePair(
                ((x + 1.0) / 2.0).astype(np.float32),
                ((y + 1.0) / 2.0).astype(np.float32),
                subject,
                regime,
            )
        )
    logger.debug(
        "Generated %d %s pairs (L=%d, seed=%d)", n_sequences, system.dynamics, seq_len, seed
    )
    return SyntheticResult(pairs=pairs, hidden=hidden)


def delay_embed(series: np.ndarray, dim: int = 5, lag: int = 2) -> np.ndarray:
    """Delay-coordinate embedding of ``series [L, d]``.

    Row ``r`` stacks ``series[r], series[r + lag], ..., series[r + (dim - 1) * lag]``,
    giving ``[L - (dim - 1) * lag, dim * d]``.
    """
    series = np.asarray(series)
    if series.ndim == 1:
        series = series[:, None]
    n_rows = series.shape[0] - (dim - 1) * lag
    if dim < 1 or lag < 1 or n_rows < 1:
        ve = f"Cannot delay-embed {series.shape[0]} steps with dim={dim}, lag={lag}"
        raise ValueError(ve)
    index = np.arange(n_rows)[:, None] + np.arange(dim) * lag
    return series[index].reshape(n_rows, dim * series.shape[1])


def premise_r2(
    observations: np.ndarray,
    hidden: np.ndarray,
    dim: int = 5,
    lag: int = 2,
    n_neighbors: int = 5,
    seed: int = 0,
) -> float:
    """How well delay embeddings of one modality recover the hidden state.

    Fits a k-nearest-neighbour regressor from each delay vector to the hidden
    state at its newest step and returns the held-out R^2.

    Args:
        observations: ``[N, L, d]`` observation sequences.
        hidden: ``[N, L, h]`` hidden trajectories.
        dim: Embedding dimension.
        lag: Delay in samples.
        n_neighbors: Neighbours of the regressor.
        seed: Seed of the 75/25 split.
    """
    offset = (dim - 1) * lag
    features = np.concatenate([delay_embed(seq, dim, lag) for seq in observations])
    targets = np.concatenate([h[offset:] for h in hidden])
    x_train, x_test, y_train, y_test = train_test_split(
        features, targets, test_size=0.25, random_state=seed
    )
    regressor = KNeighborsRegressor(n_neighbors=n_neighbors, weights="distance")
    regressor.fit(x_train, y_train)
    return float(r2_score(y_test, regressor.predict(x_test)))
