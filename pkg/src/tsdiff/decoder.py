"""Decoder: latent vector -> continuous-time state driving the event model.

The state o_t starts at f_o(s) and evolves under dynamics that attend over
the time-embedded representations of all events strictly before the current
inter-event interval. Readouts on o_t give the occurrence intensity (softplus),
the observation density (unit-variance Gaussian around a linear map,
marginalized over missing dims), the per-dimension missingness Bernoulli,
and a horizon head on the latent. The intensity integral is carried as an
augmented quadrature state on the same solver grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore
from .config import Config
from .errors import DataError
from .ode import default_step, integrate_with_jumps, make_grid

LOG_2PI = math.log(2.0 * math.pi)
HORIZON_FLOOR = 1e-3


def init_params(ps: ParameterStore, cfg: Config, rng: np.random.Generator) -> None:
    H, D = cfg.hidden, cfg.dim
    if D < 1:
        raise DataError("config.dim must be set before building the decoder")
    # f_o: latent -> initial state
    ps.add_normal("dec.fo.w1", (H, H), rng)
    ps.add_zeros("dec.fo.b1", (H,))
    ps.add_normal("dec.fo.w2", (H, H), rng)
    ps.add_zeros("dec.fo.b2", (H,))
    # time-sensitive projections of the state and of conditioning events
    ps.add_normal("dec.w1o", (H + 1, H), rng)
    ps.add_normal("dec.w2o", (H, H), rng)
    ps.add_normal("dec.w1x", (H + 1, H), rng)
    ps.add_normal("dec.w2x", (H, H), rng)
    # dynamics on (o', a)
    ps.add_normal("dec.w1g", (2 * H, H), rng)
    ps.add_normal("dec.w2g", (H, H), rng)
    # heads
    ps.add_normal("dec.wl", (H,), rng)
    ps.add_normal("dec.wp", (H, D), rng)
    ps.add_normal("dec.w1m", (H + 1, H), rng)
    ps.add_normal("dec.w2m", (H, D), rng)
    ps.add_normal("dec.w1t", (H, H), rng)
    ps.add_normal("dec.w2t", (H, 1), rng)


def initial_state(pv, s, dropout_plan=None):
    h = ad.tanh(ad.add(ad.matmul(s, pv["dec.fo.w1"]), pv["dec.fo.b1"]))
    if dropout_plan is not None:
        h = ad.apply_dropout(h, dropout_plan.get("dec.fo"))
    return ad.add(ad.matmul(h, pv["dec.fo.w2"]), pv["dec.fo.b2"])


def time_state(pv, o, t: float):
    """o'_t: time-sensitive projection of the decoder state."""
    return ad.matmul(ad.tanh(ad.matmul(ad.concat([o, np.array([t])]), pv["dec.w1o"])),
                     pv["dec.w2o"])


def event_key(pv, x_tilde, t_i: float):
    """x'_i: time-sensitive projection of one conditioning event."""
    return ad.matmul(ad.tanh(ad.matmul(ad.concat([x_tilde, np.array([t_i])]),
                                       pv["dec.w1x"])), pv["dec.w2x"])


def intensity_at(pv, o):
    """Occurrence intensity: softplus of the linear readout, strictly positive."""
    return ad.softplus(ad.dot(pv["dec.wl"], o))


def log_intensity_at(pv, o):
    return ad.log(intensity_at(pv, o))


def obs_logprob(pv, x, m, o):
    """Log-density of the observed dims under N(W_p^T o, I), marginalized.

    log p = -(sum_j m_j / 2) ln 2pi - 1/2 ||(x - W_p^T o) * m||^2; values at
    masked coordinates cannot influence the result.
    """
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    n_obs = float(m.sum())
    if n_obs < 1:
        raise DataError("all-masked event has no observation likelihood")
    pred = ad.matmul(o, pv["dec.wp"])
    r = ad.mul(ad.sub(x * m, ad.mul(pred, m)), 1.0)
    return ad.sub(-0.5 * n_obs * LOG_2PI, ad.mul(ad.sumsq(r), 0.5))


def predicted_mean(pv, o):
    """Observation mean W_p^T o (standardized space)."""
    return ad.matmul(o, pv["dec.wp"])


def missing_logits(pv, o, t: float):
    inp = ad.concat([np.array([t]), o])
    return ad.matmul(ad.tanh(ad.matmul(inp, pv["dec.w1m"])), pv["dec.w2m"])


def missing_probs(pv, o, t: float):
    """Per-dimension Bernoulli observation probabilities m_hat in (0, 1)."""
    return ad.sigmoid(missing_logits(pv, o, t))


def horizon_mean(pv, s):
    """mu_t: predicted mean of the sequence horizon."""
    mu = ad.matmul(ad.tanh(ad.matmul(s, pv["dec.w1t"])), pv["dec.w2t"])
    return ad.reduce_sum(mu)


def sample_horizon(pv, s, sigma_t: float, rng: np.random.Generator,
                   cfg: Config, max_tries: int = 100) -> float:
    """Gaussian horizon draw, resampled (then floored) to stay positive."""
    if sigma_t < 0:
        raise DataError(f"horizon variance must be >= 0, got {sigma_t}")
    mu = float(ad.value_of(horizon_mean(pv, s)))
    std = math.sqrt(sigma_t) if cfg.horizon_sigma_is_variance else sigma_t
    if std == 0.0:
        return max(mu, HORIZON_FLOOR)
    for _ in range(max_tries):
        draw = rng.normal(mu, std)
        if draw >= HORIZON_FLOOR:
            return float(draw)
    return HORIZON_FLOOR


@dataclass
class DecodedPath:
    """Decoder trajectory plus the readout context needed to score events."""

    pv: dict
    cfg: Config
    grid_times: np.ndarray
    states: list                      # o_t at grid nodes (Var or ndarray)
    cumulative: list                  # accumulated intensity integral at nodes
    cond_times: np.ndarray            # conditioning event times
    _index: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, t in enumerate(self.grid_times):
            self._index.setdefault(float(t), i)

    @property
    def total_intensity(self):
        """Integral of the intensity over [0, horizon]."""
        return self.cumulative[-1]

    def state_at(self, t: float):
        i = self._index.get(float(t))
        if i is None:
            raise KeyError(f"t={t} is not a grid node of this path")
        return self.states[i]

    def log_intensity_at(self, t: float):
        return log_intensity_at(self.pv, self.state_at(t))

    def obs_logprob_at(self, x, m, t: float):
        return obs_logprob(self.pv, x, m, self.state_at(t))

    def missing_logits_at(self, t: float):
        return missing_logits(self.pv, self.state_at(t), t)

    def intensity_values(self) -> np.ndarray:
        """Raw intensity samples on the grid."""
        wl = ad.value_of(self.pv["dec.wl"])
        return np.array([
            float(np.logaddexp(0.0, wl @ ad.value_of(o))) for o in self.states
        ])

    def time_states(self) -> np.ndarray:
        """Raw o'_t samples on the grid (bookkeeping view, tape-free)."""
        raw = {k: ad.value_of(v) for k, v in self.pv.items()}
        return np.stack([
            ad.value_of(time_state(raw, ad.value_of(o), float(t)))
            for t, o in zip(self.grid_times, self.states)
        ])


class DecoderDynamics:
    """Incremental decoder integration, shared by training and generation."""

    def __init__(self, pv, cfg: Config, dropout_plan=None):
        self.pv = pv
        self.cfg = cfg
        self.dropout_plan = dropout_plan
        self.keys: list = []          # x'_i per conditioning event
        self.key_times: list = []

    def add_event(self, x_tilde, t_i: float) -> None:
        if self.key_times and t_i < self.key_times[-1]:
            raise DataError("conditioning events must arrive time-sorted")
        self.keys.append(event_key(self.pv, x_tilde, float(t_i)))
        self.key_times.append(float(t_i))

    def key_table(self, upto_t: float):
        """Stacked keys of events with t_i <= upto_t (None when empty)."""
        n = sum(1 for t in self.key_times if t <= upto_t)
        if n == 0:
            return None
        return ad.stack(self.keys[:n])

    def rhs(self, state, t, ctx):
        o, _lam_int = state
        op = time_state(self.pv, o, t)
        if ctx is None:
            a = np.zeros(self.cfg.hidden)
        else:
            logits = ad.matmul(ctx, op)
            w = ad.masked_softmax(logits, np.ones(ad.value_of(logits).shape))
            a = ad.matmul(w, ctx)
        h = ad.tanh(ad.matmul(ad.concat([op, a]), self.pv["dec.w1g"]))
        if self.dropout_plan is not None:
            h = ad.apply_dropout(h, self.dropout_plan.get("dec.g"))
        do = ad.matmul(h, self.pv["dec.w2g"])
        lam = intensity_at(self.pv, o)
        return do, lam

    def integrate(self, o, lam_int, t0: float, t1: float, step: float,
                  record: bool = True):
        grid = make_grid(t0, t1, [t for t in self.key_times if t0 < t < t1],
                         step, direction=1)
        ctx_fn = lambda lo, hi: self.key_table(lo)
        return integrate_with_jumps((o, lam_int), self.rhs, {}, grid,
                                    context_fn=ctx_fn, record=record)


def decode_path(pv, s, cond_events, horizon: float, cfg: Config,
                solver_step: float | None = None, dropout_plan=None) -> DecodedPath:
    """Teacher-forced decoding over [0, horizon].

    `cond_events` is a time-sorted list of (t_i, x_tilde_i); each event enters
    the attention context for all later times. The intensity integral is
    accumulated as an augmented state on the same RK4 grid.
    """
    if horizon <= 0:
        raise DataError(f"horizon must be positive, got {horizon}")
    times = [float(t) for t, _ in cond_events]
    if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
        raise DataError("conditioning events must be strictly time-sorted")
    if times and (times[0] < 0 or times[-1] > horizon):
        raise DataError("conditioning events must lie within [0, horizon]")
    h = solver_step if solver_step is not None else (
        cfg.solver_step if cfg.solver_step > 0 else default_step(horizon, times)
    )
    dyn = DecoderDynamics(pv, cfg, dropout_plan)
    for t_i, xt in cond_events:
        dyn.add_event(xt, t_i)
    o0 = initial_state(pv, s, dropout_plan)
    traj = dyn.integrate(o0, np.zeros(()), 0.0, horizon, h, record=True)
    states = [st for st, _ in traj.states]
    cumulative = [li for _, li in traj.states]
    return DecodedPath(
        pv=pv, cfg=cfg,
        grid_times=np.asarray(traj.times, dtype=np.float64),
        states=states, cumulative=cumulative,
        cond_times=np.asarray(times, dtype=np.float64),
    )
