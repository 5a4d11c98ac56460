"""Generative modeling of irregular, incomplete time series.

Pipeline: a masked-attention jump-ODE encoder maps event sequences to dense
latents, a denoising diffusion model learns the latent distribution, and a
point-process ODE decoder with thinning-based simulation renders latents
back into event sequences.
"""

__version__ = "0.1.0"

from .data import Dataset, EventSequence, load_jsonl, save_jsonl  # noqa: F401
from .errors import (  # noqa: F401
    BoundViolationError,
    CheckpointError,
    ConfigError,
    DataError,
    IntegrationDivergedError,
    NumericalError,
    TsdiffError,
)
