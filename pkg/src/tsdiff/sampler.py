"""End-to-end synthesis: latent draw, horizon draw, thinning over the decoder.

Candidate times come from a homogeneous proposal at a local upper bound
(1.5x the max intensity sampled over a lookahead window); accepted events get
a Gaussian mark around the observation head, an optional Bernoulli mask, and
enter the decoder's conditioning set for all later dynamics. Bound
violations are counted and refresh the bound; a run whose violation rate
exceeds 0.1% fails loudly since that invalidates the thinning approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import decoder, diffusion, encoder
from .checkpoint import Checkpoint
from .config import Config
from .data import Dataset, EventSequence, destandardize_values
from .decoder import DecoderDynamics
from .errors import BoundViolationError, DataError
from .model import Model

WINDOW_FRACTION = 0.05   # lookahead window = horizon / 20
BOUND_SAFETY = 1.5
BOUND_GRID = 64
MAX_VIOLATION_RATE = 1e-3


@dataclass
class ThinningStats:
    """Proposal bookkeeping for one or more thinning runs."""

    proposed: int = 0
    accepted: int = 0
    violations: int = 0

    def merge(self, other: "ThinningStats") -> None:
        self.proposed += other.proposed
        self.accepted += other.accepted
        self.violations += other.violations

    @property
    def violation_rate(self) -> float:
        return self.violations / max(self.proposed, 1)

    def check(self) -> None:
        if self.violations and self.violation_rate > MAX_VIOLATION_RATE:
            raise BoundViolationError(
                f"thinning bound violated {self.violations}/{self.proposed} "
                f"proposals ({100 * self.violation_rate:.3f}% > 0.1%)"
            )


class IntensityProcess:
    """Protocol for the thinning loop: a process with a current time/state."""

    def advance(self, t: float) -> None:
        raise NotImplementedError

    def intensity(self) -> float:
        raise NotImplementedError

    def window_max(self, t1: float, n: int) -> float:
        raise NotImplementedError


class ConstantIntensityProcess(IntensityProcess):
    """Stub process with a fixed rate, for verifying the thinning loop."""

    def __init__(self, rate: float):
        self.rate = float(rate)
        self.t = 0.0

    def advance(self, t: float) -> None:
        self.t = t

    def intensity(self) -> float:
        return self.rate

    def window_max(self, t1: float, n: int) -> float:
        return self.rate


class DecoderProcess(IntensityProcess):
    """The trained decoder as an intensity process (tape-free, incremental)."""

    def __init__(self, pv, cfg: Config, s, step: float):
        self.pv = pv
        self.cfg = cfg
        self.step = step
        self.dyn = DecoderDynamics(pv, cfg)
        self.o = ad.value_of(decoder.initial_state(pv, s))
        self.lam_int = np.zeros(())
        self.t = 0.0

    def advance(self, t: float) -> None:
        if t < self.t:
            raise DataError("decoder process cannot move backward in time")
        if t == self.t:
            return
        traj = self.dyn.integrate(self.o, self.lam_int, self.t, t, self.step,
                                  record=False)
        self.o, self.lam_int = traj.final
        self.t = t

    def intensity(self) -> float:
        return float(ad.value_of(decoder.intensity_at(self.pv, self.o)))

    def window_max(self, t1: float, n: int) -> float:
        """Max intensity over n grid points ahead, without committing state."""
        if t1 <= self.t:
            return self.intensity()
        traj = self.dyn.integrate(self.o, self.lam_int, self.t, t1,
                                  (t1 - self.t) / n, record=True)
        wl = self.pv["dec.wl"]
        lams = [float(np.logaddexp(0.0, wl @ ad.value_of(o))) for o, _ in traj.states]
        return max(lams)

    def register_event(self, x_std: np.ndarray, t: float) -> None:
        """A freshly emitted (complete) event enters the conditioning set."""
        x_tilde = encoder.event_representation(
            self.pv, x_std, np.ones(self.cfg.dim), self.cfg
        )
        self.dyn.add_event(x_tilde, t)


def thinning_loop(proc: IntensityProcess, horizon: float,
                  rng: np.random.Generator, stats: ThinningStats,
                  on_accept=None) -> list[float]:
    """Propose from Exp(bound) within lookahead windows; accept at lambda/bound.

    Returns accepted times. `on_accept(t)` runs after each acceptance (mark
    and mask sampling, conditioning update); the bound is refreshed after
    every acceptance and at each window boundary.
    """
    times: list[float] = []
    window = horizon * WINDOW_FRACTION
    t = 0.0
    while t < horizon:
        w_end = min(t + window, horizon)
        bound = BOUND_SAFETY * proc.window_max(w_end, BOUND_GRID)
        if bound <= 0.0:
            proc.advance(w_end)
            t = w_end
            continue
        while True:
            gap = rng.exponential(1.0 / bound)
            if t + gap >= w_end:
                proc.advance(w_end)
                t = w_end
                break
            t = t + gap
            proc.advance(t)
            lam = proc.intensity()
            stats.proposed += 1
            if lam > bound:
                stats.violations += 1
            if rng.random() * bound < lam:
                stats.accepted += 1
                times.append(t)
                if on_accept is not None:
                    on_accept(t)
                break  # dynamics changed: refresh window and bound
    return times


def _sample_mask(probs: np.ndarray, rng: np.random.Generator,
                 max_tries: int = 50) -> np.ndarray:
    """Bernoulli mask with at least one observed dimension."""
    for _ in range(max_tries):
        mask = (rng.random(probs.shape) < probs).astype(np.float64)
        if mask.sum() >= 1:
            return mask
    mask = np.zeros_like(probs)
    mask[int(np.argmax(probs))] = 1.0
    return mask


def thinning_generate(pv, cfg: Config, s, horizon: float,
                      rng: np.random.Generator, stats: ThinningStats | None = None,
                      emit_missing: bool = False,
                      feature_mean=None, feature_std=None,
                      solver_step: float | None = None) -> EventSequence:
    """Generate one sequence from a latent over [0, horizon].

    Marks are drawn with identity covariance in standardized space around the
    observation head, then un-standardized when a (mean, std) table is given.
    Conditioning always uses the complete pre-mask events; masks only shape
    the emitted data.
    """
    if horizon <= 0:
        raise DataError(f"horizon must be positive, got {horizon}")
    local_stats = ThinningStats()
    step = solver_step if solver_step is not None else (
        cfg.solver_step if cfg.solver_step > 0 else 0.01 * horizon
    )
    proc = DecoderProcess(pv, cfg, s, step)
    values: list[np.ndarray] = []
    masks: list[np.ndarray] = []

    def on_accept(t: float) -> None:
        mean = ad.value_of(decoder.predicted_mean(pv, proc.o))
        x_std = mean + rng.standard_normal(cfg.dim)
        if emit_missing:
            probs = ad.value_of(decoder.missing_probs(pv, proc.o, t))
            mask = _sample_mask(probs, rng)
        else:
            mask = np.ones(cfg.dim)
        values.append(x_std)
        masks.append(mask)
        proc.register_event(x_std, t)

    times = thinning_loop(proc, horizon, rng, local_stats, on_accept)
    if stats is not None:
        stats.merge(local_stats)
    local_stats.check()

    vals = np.asarray(values).reshape(len(times), cfg.dim)
    mask_arr = np.asarray(masks).reshape(len(times), cfg.dim)
    if feature_mean is not None:
        vals = destandardize_values(vals, mask_arr, np.asarray(feature_mean),
                                    np.asarray(feature_std))
    return EventSequence(times=np.asarray(times), values=vals, mask=mask_arr,
                         t_max=horizon)


def synthesize(ckpt: Checkpoint, n: int, seed: int,
               emit_missing: bool = False) -> Dataset:
    """Draw n sequences: reverse diffusion, horizon draw, thinning generation.

    Sample i owns its rng stream seeded by (seed, i), so samples are
    reproducible independently of generation order.
    """
    model = Model.from_checkpoint(ckpt)
    cfg = model.cfg
    pv = model.raw()
    stats = ThinningStats()
    sequences = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        s = diffusion.sample_latent(pv, model.sched, rng, cfg)
        horizon = decoder.sample_horizon(pv, s, ckpt.horizon_variance, rng, cfg)
        seq = thinning_generate(
            pv, cfg, s, horizon, rng, stats=stats, emit_missing=emit_missing,
            feature_mean=ckpt.feature_mean, feature_std=ckpt.feature_std,
        )
        sequences.append(seq)
    stats.check()
    return Dataset(sequences=sequences)
