import logging
import threading
from typing import Sequence, TypeVar

from mam.config import RunConfig
from mam.runner.base import Job, Runner

T = TypeVar("T")

logger = logging.getLogger(__name__)


class SequentialRunner(Runner):
    """Runs jobs one after another in the current process."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self._stop_event = threading.Event()

    def stop(self) -> None:
        self._stop_event.set()

    def run(self, jobs: Sequence[Job[T]]) -> list[T]:
        """Run jobs in order; an exception stops the remaining jobs and propagates."""
        results: list[T] = []
        for index, job in enumerate(jobs):
            if self._stop_event.is_set():
                logger.warning("Runner stopped before job %d of %d", index + 1, len(jobs))
                break
            try:
                results.append(job())
            except KeyboardInterrupt:
                logger.warning("Interrupted during job %d", index + 1)
                self._stop_event.set()
                raise
        return results
