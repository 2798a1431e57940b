from mam.runner.base import Job, Runner
from mam.runner.parallel_runner import ParallelRunner
from mam.runner.runner_factory import RunnerFactory, RunnerStrategy
from mam.runner.sequential_runner import SequentialRunner

__all__ = [
    "Job",
    "ParallelRunner",
    "Runner",
    "RunnerFactory",
    "RunnerStrategy",
    "SequentialRunner",
]
