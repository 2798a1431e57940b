"""Abstract job runner."""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Callable, Sequence, TypeVar

from mam.config import RunConfig

T = TypeVar("T")

Job = Callable[[], T]


class Runner(ABC):
    """Base class every runner strategy inherits from.

    A job is a zero-argument picklable callable (a ``functools.partial`` of a
    module-level function) that writes only into its own output directory.
    """

    config: RunConfig

    @abstractmethod
    def __init__(self, config: RunConfig) -> None:
        """Initialize the runner with the run configuration.

        Args:
            config: Resolved run configuration.
        """
        self.config = config

    @abstractmethod
    def stop(self) -> None:
        """Stop scheduling further jobs."""

    @abstractmethod
    def run(self, jobs: Sequence[Job[T]]) -> list[T]:
        """Run every job and return the results in submission order.

        Args:
            jobs: Jobs to run.
        """
