"""Glue: build all network parameters for a config and bundle the pieces."""

from __future__ import annotations

import numpy as np

from . import decoder, diffusion, encoder
from .autodiff import ParameterStore, Tape
from .checkpoint import Checkpoint
from .config import Config
from .diffusion import DiffusionSchedule


def build_params(cfg: Config, seed: int | None = None) -> ParameterStore:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    ps = ParameterStore()
    encoder.init_params(ps, cfg, rng)
    diffusion.init_params(ps, cfg, rng)
    decoder.init_params(ps, cfg, rng)
    return ps


class Model:
    """Config + parameters + diffusion schedule."""

    def __init__(self, cfg: Config, params: ParameterStore | None = None,
                 seed: int | None = None):
        self.cfg = cfg
        self.params = params if params is not None else build_params(cfg, seed)
        self.sched = DiffusionSchedule.from_config(cfg)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Model":
        return cls(ckpt.config, params=ckpt.params)

    def bind(self, tape: Tape) -> dict:
        return self.params.bind(tape)

    def raw(self) -> dict:
        return self.params.raw()
