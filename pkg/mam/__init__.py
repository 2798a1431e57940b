"""
mam - Mutually aligned diffusion for paired time series

Two conditional denoising diffusion models, one per modality, trained jointly
so that each can generate its modality from the other. The encoder latents of
the two denoisers are pulled together by a local latent alignment loss
(windowed contrastive + covariance terms), and an energy penalty keeps the
generated trajectories smooth.

Key Features:
    - Linear and cosine noise schedules with ancestral sampling for
      clean-signal-predicting denoisers
    - Transformer encoder/decoder denoisers with condition and timestep
      embedders
    - Local latent alignment plus NT-Xent, Barlow Twins, VICReg and latent
      MSE baselines, with a learned alignment weight
    - Leave-k-subjects/profiles-out cross-validation with EMA evaluation
      weights
    - Generation MSE, FID, predictive score, linear/nonlinear probing and
      latent CKA
    - Built-in synthetic shared-hidden-state systems (coupled oscillators,
      Lorenz) for desk-scale experiments

Usage:
    $ mam make-synthetic --data synthetic:coupled_oscillators --out data/osc
    $ mam train --data data/osc --align llma --out runs/llma
    $ mam evaluate runs/llma
    $ mam ablate --data data/osc
    $ mam probe runs/llma runs/none

Project Information:
    License: MIT
    Python Support: >=3.11
    Keywords: diffusion, time series, cross-modal generation, representation alignment
"""

__version__ = "0.3.0"
__license__ = "MIT"
__description__ = "Mutually aligned cross-modal diffusion for paired time series."
__python_requires__ = ">=3.11"
__keywords__ = [
    "diffusion",
    "generative-models",
    "time-series",
    "cross-modal",
    "contrastive-learning",
    "representation-alignment",
    "biomechanics",
    "gait",
    "pytorch",
]
__status__ = "Development/Beta"

from .cli import main

__all__ = [
    "__description__",
    "__keywords__",
    "__license__",
    "__python_requires__",
    "__status__",
    "__version__",
    "main",
]
