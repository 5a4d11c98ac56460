"""Fixed-step RK4 integration with event-aligned grids and jump hooks.

Every event time is a grid breakpoint, so no step straddles a jump or a
change in the dynamics' conditioning context. States may be single arrays
(or Vars) or tuples of them, which lets callers carry augmented quadrature
components (e.g. an accumulated intensity integral) alongside the main state.
Gradients flow by unrolling: if the state/right-hand side build autodiff
Vars, backpropagation differentiates the discrete solution exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var, add, mul, value_of
from .errors import DataError, IntegrationDivergedError


@dataclass(frozen=True)
class IntegrationGrid:
    """Breakpoints (interval ends plus all event times) and a target step."""

    breakpoints: tuple  # ascending, includes both endpoints
    step: float
    direction: int = 1  # +1 forward in time, -1 backward

    def __post_init__(self):
        bp = self.breakpoints
        if len(bp) < 2:
            raise DataError("grid needs at least two breakpoints")
        if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise DataError("breakpoints must be strictly ascending")
        if self.step <= 0:
            raise DataError(f"step must be positive, got {self.step}")
        if self.direction not in (-1, 1):
            raise DataError("direction must be +1 or -1")

    @property
    def t_start(self) -> float:
        return self.breakpoints[0] if self.direction == 1 else self.breakpoints[-1]

    @property
    def t_end(self) -> float:
        return self.breakpoints[-1] if self.direction == 1 else self.breakpoints[0]


def default_step(t_max: float, event_times) -> float:
    """min(0.01 * t_max, smallest inter-event gap / 4)."""
    h = 0.01 * t_max
    times = np.asarray(event_times, dtype=np.float64)
    if times.size >= 2:
        gap = float(np.diff(times).min())
        h = min(h, gap / 4.0)
    return h


def make_grid(t0: float, t1: float, event_times, step: float,
              direction: int = 1) -> IntegrationGrid:
    """Grid over [t0, t1] whose breakpoints include every event time."""
    if t1 <= t0:
        raise DataError(f"need t1 > t0, got [{t0}, {t1}]")
    pts = {float(t0), float(t1)}
    for t in event_times:
        t = float(t)
        if t0 <= t <= t1:
            pts.add(t)
    return IntegrationGrid(tuple(sorted(pts)), float(step), direction)


# tree helpers: a state is either one array/Var or a tuple of them


def _tree_map2(f, a, b):
    if isinstance(a, tuple):
        return tuple(f(x, y) for x, y in zip(a, b))
    return f(a, b)


def _tree_axpy(alpha: float, x, y):
    """y + alpha * x over the state tree."""
    return _tree_map2(lambda xi, yi: add(yi, mul(xi, alpha)), x, y)


def _tree_rk4_combine(y, k1, k2, k3, k4, h: float):
    def combine(yi, a, b, c, d):
        s = add(add(a, mul(b, 2.0)), add(mul(c, 2.0), d))
        return add(yi, mul(s, h / 6.0))

    if isinstance(y, tuple):
        return tuple(combine(yi, a, b, c, d) for yi, a, b, c, d in zip(y, k1, k2, k3, k4))
    return combine(y, k1, k2, k3, k4)


def _tree_finite(state) -> bool:
    parts = state if isinstance(state, tuple) else (state,)
    return all(np.isfinite(value_of(p)).all() for p in parts)


def rk4_step(rhs, state, t: float, h: float, ctx):
    k1 = rhs(state, t, ctx)
    k2 = rhs(_tree_axpy(h / 2.0, k1, state), t + h / 2.0, ctx)
    k3 = rhs(_tree_axpy(h / 2.0, k2, state), t + h / 2.0, ctx)
    k4 = rhs(_tree_axpy(h, k3, state), t + h, ctx)
    return _tree_rk4_combine(state, k1, k2, k3, k4, h)


@dataclass
class Trajectory:
    """Times and states recorded during integration.

    Jump times appear twice: pre-jump state first, post-jump state second.
    """

    times: list
    states: list

    @property
    def final(self):
        return self.states[-1]

    def state_at(self, t: float, side: str = "post"):
        """State at an exact recorded time; `side` picks pre/post jump."""
        matches = [i for i, ti in enumerate(self.times) if ti == t]
        if not matches:
            raise KeyError(f"time {t} is not a recorded grid node")
        return self.states[matches[0] if side == "pre" else matches[-1]]


def integrate_with_jumps(state0, rhs, jumps, grid: IntegrationGrid,
                         context_fn=None, record: bool = True) -> Trajectory:
    """Classical RK4 between breakpoints, jump functions applied atomically.

    rhs(state, t, ctx) returns the state derivative; ctx comes from
    `context_fn(seg_lo, seg_hi)` evaluated once per inter-breakpoint segment
    (None when no context_fn is given). `jumps` maps exact breakpoint times
    to functions (state, t) -> state, applied on arrival at that time —
    for backward integration this produces the left limit at an event.
    """
    jumps = jumps or {}
    bp = list(grid.breakpoints)
    if grid.direction == -1:
        bp = bp[::-1]
    state = state0
    times = [bp[0]]
    states = [state]

    def apply_jump(t, st):
        fn = jumps.get(t)
        if fn is None:
            return st, False
        return fn(st, t), True

    state, jumped = apply_jump(bp[0], state)
    if jumped:
        times.append(bp[0])
        states.append(state)

    for a, b in zip(bp, bp[1:]):
        seg_lo, seg_hi = (a, b) if grid.direction == 1 else (b, a)
        ctx = context_fn(seg_lo, seg_hi) if context_fn is not None else None
        length = abs(b - a)
        n = max(1, int(np.ceil(length / grid.step - 1e-12)))
        h = (b - a) / n
        t = a
        for i in range(n):
            state = rk4_step(rhs, state, t, h, ctx)
            # land exactly on the breakpoint so jump/event lookups match
            t = b if i + 1 == n else a + (i + 1) * (b - a) / n
            if not _tree_finite(state):
                raise IntegrationDivergedError(t)
            if record:
                times.append(t)
                states.append(state)
        if not record:
            times.append(b)
            states.append(state)
            times, states = times[-1:], states[-1:]
        state, jumped = apply_jump(b, state)
        if jumped:
            if not _tree_finite(state):
                raise IntegrationDivergedError(b, "jump produced non-finite state")
            times.append(b)
            states.append(state)

    return Trajectory(times, states)
