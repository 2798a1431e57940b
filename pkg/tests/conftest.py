"""Shared fixtures: a tiny run configuration and small synthetic datasets."""

import logging

import numpy as np
import pytest
import torch

from mam.config import RunConfig, preset
from mam.data.dataset import SequencePair

# Small enough that a full fold trains and evaluates in seconds on a CPU.
TINY_OVERRIDES = [
    "name=tiny",
    "runner=sequential",
    "schedule.num_steps=5",
    "model.d_model=8",
    "model.n_heads=2",
    "model.n_layers_enc=1",
    "model.n_layers_dec=1",
    "model.max_len=16",
    "model.dropout=0.0",
    "alignment.window_len=4",
    "data.seq_len=16",
    "data.n_sequences=12",
    "data.n_subjects=2",
    "data.d_x=3",
    "data.d_y=2",
    "train.epochs=1",
    "train.batch_size=4",
    "train.lr_theta=0.001",
    "train.lr_phi=0.001",
    "eval.predictor_epochs=2",
    "eval.predictor_hidden=4",
    "eval.fid_window=4",
    "eval.plots=false",
]


@pytest.fixture
def tiny_config() -> RunConfig:
    return preset("desk").with_overrides(TINY_OVERRIDES)


def make_pairs(n: int = 12, length: int = 16, d_x: int = 3, d_y: int = 2, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [
        SequencePair(
            rng.normal(size=(length, d_x)).astype(np.float32),
            rng.normal(size=(length, d_y)).astype(np.float32),
            f"s{i % 2}",
            i % 3,
        )
        for i in range(n)
    ]


@pytest.fixture
def pairs():
    return make_pairs()


@pytest.fixture
def batch():
    torch.manual_seed(0)
    return torch.rand(4, 16, 3), torch.rand(4, 16, 2)


@pytest.fixture(autouse=True)
def _restore_package_logger():
    """CLI tests install a non-propagating handler; undo it for caplog."""
    logger = logging.getLogger("mam")
    handlers, level, propagate = list(logger.handlers), logger.level, logger.propagate
    yield
    logger.handlers[:] = handlers
    logger.setLevel(level)
    logger.propagate = propagate
