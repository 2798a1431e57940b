"""Runner factory: picks and builds a runner strategy."""

from __future__ import annotations

from enum import Enum, auto

from mam.config import RunConfig
from mam.runner.base import Runner
from mam.runner.parallel_runner import ParallelRunner
from mam.runner.sequential_runner import SequentialRunner
from mam.utils import num_threads

__all__ = ["RunnerFactory", "RunnerStrategy"]


class RunnerStrategy(Enum):
    """Enum for the job scheduling strategies."""

    SEQUENTIAL = auto()  # one job at a time, in process
    PARALLEL = auto()  # process pool

    def __str__(self) -> str:
        """Return a string representation of the strategy."""
        return self.name.lower()


class RunnerFactory:
    """Factory for runner strategies."""

    @classmethod
    def create_runner(cls, strategy: RunnerStrategy, config: RunConfig) -> Runner:
        """Create a runner for ``strategy``.

        Raises:
            ValueError: If the strategy is unknown.
        """
        if strategy == RunnerStrategy.SEQUENTIAL:
            return SequentialRunner(config)
        if strategy == RunnerStrategy.PARALLEL:
            return ParallelRunner(config)
        ve = f"Unknown runner strategy: {strategy}"
        raise ValueError(ve)

    @classmethod
    def determine_best_strategy(cls, n_jobs: int, config: RunConfig) -> RunnerStrategy:
        """Choose a strategy from the configured runner and the worker cap.

        ``auto`` runs in parallel only when there is more than one job and
        ``MAM_NUM_THREADS`` allows more than one worker.
        """
        if config.runner == "sequential":
            return RunnerStrategy.SEQUENTIAL
        if config.runner == "parallel":
            return RunnerStrategy.PARALLEL
        if n_jobs > 1 and num_threads() > 1:
            return RunnerStrategy.PARALLEL
        return RunnerStrategy.SEQUENTIAL
