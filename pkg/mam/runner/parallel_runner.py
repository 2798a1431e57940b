"""Process-pool runner for independent fold and variant jobs."""

from __future__ import annotations

import concurrent.futures
import logging
import multiprocessing
import threading
from typing import Sequence, TypeVar

import torch

from mam.config import RunConfig
from mam.runner.base import Job, Runner
from mam.utils import num_threads

__all__ = ["ParallelRunner"]

T = TypeVar("T")

logger = logging.getLogger(__name__)


def _init_worker() -> None:
    # Workers share the cores; one intra-op thread each.
    torch.set_num_threads(1)


class ParallelRunner(Runner):
    """Runs jobs in a spawn-based process pool sized by ``MAM_NUM_THREADS``."""

    def __init__(self, config: RunConfig, max_workers: int | None = None) -> None:
        """Initialize the parallel runner.

        Args:
            config: Resolved run configuration.
            max_workers: Pool size; defaults to the ``MAM_NUM_THREADS`` cap.
        """
        self.config = config
        self.max_workers = max_workers or num_threads()
        self._stop_event = threading.Event()
        self._futures: list[concurrent.futures.Future] = []

    def stop(self) -> None:
        self._stop_event.set()
        for future in self._futures:
            future.cancel()

    def run(self, jobs: Sequence[Job[T]]) -> list[T]:
        """Run jobs concurrently; results keep submission order.

        The first failing job cancels the jobs that have not started and its
        exception is re-raised.
        """
        if not jobs:
            return []
        workers = min(self.max_workers, len(jobs))
        logger.info("Running %d jobs on %d workers", len(jobs), workers)
        context = multiprocessing.get_context("spawn")
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=workers, mp_context=context, initializer=_init_worker
        ) as pool:
            self._futures = [pool.submit(job) for job in jobs]
            try:
                return [future.result() for future in self._futures]
            except BaseException:
                self.stop()
                raise
            finally:
                self._futures = []
