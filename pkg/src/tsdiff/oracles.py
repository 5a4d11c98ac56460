"""Ground-truth marked point processes with known likelihoods.

Used to fabricate training fixtures and to verify the likelihood code:
homogeneous Poisson, sinusoidal-rate inhomogeneous Poisson (exact thinning),
and a self-exciting exponential-kernel process (Ogata thinning). Marks are a
linear function of time plus Gaussian noise; a per-dimension target
correlation between time and feature value can be designed in exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, EventSequence, inject_missing_mcar
from .errors import DataError
from .ode import integrate_with_jumps, make_grid

KINDS = ("homogeneous", "sinusoidal", "hawkes")


@dataclass
class OracleSpec:
    kind: str = "homogeneous"
    rate: float = 2.0          # homogeneous rate c
    mu: float = 2.0            # base rate (sinusoidal, hawkes)
    amplitude: float = 1.0     # sinusoidal amplitude a (a < mu)
    period: float = 10.0       # sinusoidal period P
    alpha: float = 0.5         # hawkes excitation jump (alpha < beta)
    beta: float = 1.0          # hawkes decay
    horizon: float = 10.0
    dim: int = 2
    missing_rate: float = 0.0
    mark_rho: tuple | None = None   # designed per-dim |corr(t, x_j)|; None = slope model
    mark_noise: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown oracle kind {self.kind!r}")
        if self.horizon <= 0 or self.dim < 1:
            raise DataError("horizon must be positive and dim >= 1")
        if self.kind == "homogeneous" and self.rate <= 0:
            raise DataError("homogeneous rate must be positive")
        if self.kind == "sinusoidal":
            if not (0 <= self.amplitude < self.mu):
                raise DataError("need amplitude < mu for a positive intensity")
            if self.period <= 0:
                raise DataError("period must be positive")
        if self.kind == "hawkes":
            if self.mu <= 0:
                raise DataError("hawkes base rate must be positive")
            if not (0 <= self.alpha < self.beta):
                raise DataError("unstable hawkes process: need alpha < beta")
        if self.mark_rho is not None:
            rho = tuple(float(r) for r in self.mark_rho)
            if len(rho) != self.dim:
                raise DataError(f"mark_rho needs {self.dim} entries, got {len(rho)}")
            if any(abs(r) >= 1 for r in rho):
                raise DataError("designed correlations must satisfy |rho| < 1")
            self.mark_rho = rho
        if not (0 <= self.missing_rate < 1):
            raise DataError("missing_rate must be in [0, 1)")


# ---------------------------------------------------------------------------
# event-time samplers


def _homogeneous_times(rate: float, horizon: float, rng) -> list[float]:
    times = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t > horizon:
            return times
        times.append(t)


def _sinusoidal_times(spec: OracleSpec, rng) -> list[float]:
    bound = spec.mu + spec.amplitude
    times = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / bound)
        if t > spec.horizon:
            return times
        lam = spec.mu + spec.amplitude * math.sin(2.0 * math.pi * t / spec.period)
        if rng.random() * bound < lam:
            times.append(t)


def _hawkes_times(spec: OracleSpec, rng) -> list[float]:
    """Ogata thinning: between events the intensity decays, so the intensity
    just after the latest point dominates the interval ahead."""
    times = []
    t = 0.0
    excitation = 0.0  # sum of alpha * exp(-beta (t - t_i)) at current t
    while True:
        bound = spec.mu + excitation
        gap = rng.exponential(1.0 / bound)
        t += gap
        if t > spec.horizon:
            return times
        excitation *= math.exp(-spec.beta * gap)
        lam = spec.mu + excitation
        if rng.random() * bound < lam:
            times.append(t)
            excitation += spec.alpha


# ---------------------------------------------------------------------------
# marks


def _make_marks(spec: OracleSpec, all_times: list[np.ndarray], rng) -> list[np.ndarray]:
    pooled = np.concatenate([t for t in all_times if t.size]) if all_times else np.empty(0)
    sd_t = float(pooled.std()) if pooled.size >= 2 else 1.0
    sd_t = max(sd_t, 1e-9)
    out = []
    for times in all_times:
        n = times.size
        x = np.zeros((n, spec.dim))
        for j in range(spec.dim):
            noise = rng.standard_normal(n)
            if spec.mark_rho is not None:
                rho = spec.mark_rho[j]
                if abs(rho) < 1e-12:
                    x[:, j] = noise
                else:
                    # slope sign(rho), noise scaled so corr(t, x_j) = rho exactly
                    sigma = sd_t * math.sqrt(1.0 / rho**2 - 1.0)
                    x[:, j] = math.copysign(1.0, rho) * times + sigma * noise
            else:
                slope = 1.0 / (1.0 + j)
                x[:, j] = slope * times + spec.mark_noise * noise
        out.append(x)
    return out


def generate(spec: OracleSpec, n: int, rng: np.random.Generator) -> Dataset:
    """Draw `n` sequences from the oracle; marks per the spec's mark model."""
    samplers = {
        "homogeneous": lambda: _homogeneous_times(spec.rate, spec.horizon, rng),
        "sinusoidal": lambda: _sinusoidal_times(spec, rng),
        "hawkes": lambda: _hawkes_times(spec, rng),
    }
    all_times = [np.asarray(samplers[spec.kind](), dtype=np.float64) for _ in range(n)]
    marks = _make_marks(spec, all_times, rng)
    sequences = [
        EventSequence(times=t, values=x, mask=np.ones_like(x), t_max=spec.horizon)
        for t, x in zip(all_times, marks)
    ]
    ds = Dataset(sequences=sequences)
    if spec.missing_rate > 0:
        ds = inject_missing_mcar(ds, spec.missing_rate, int(rng.integers(2**31)))
    return ds


def gen_homogeneous(spec: OracleSpec, n: int, rng) -> Dataset:
    return generate(spec, n, rng)


def gen_sinusoidal(spec: OracleSpec, n: int, rng) -> Dataset:
    return generate(spec, n, rng)


def gen_hawkes(spec: OracleSpec, n: int, rng) -> Dataset:
    return generate(spec, n, rng)


# ---------------------------------------------------------------------------
# analytic likelihoods and stub paths


def intensity_fn(spec: OracleSpec, seq: EventSequence):
    """The oracle's true conditional intensity given the sequence's history.

    Returns lam(t, history_cutoff=None). With the default cutoff the history
    is the strict past {t_j < t} (the left limit used in likelihood terms);
    quadrature passes the enclosing segment's start as the cutoff so the
    integrand is smooth between events.
    """
    times = np.asarray(seq.times)

    if spec.kind == "homogeneous":
        return lambda t, cutoff=None: spec.rate
    if spec.kind == "sinusoidal":
        return lambda t, cutoff=None: (
            spec.mu + spec.amplitude * math.sin(2.0 * math.pi * t / spec.period)
        )

    def hawkes_lam(t, cutoff=None):
        prior = times[times < t] if cutoff is None else times[times <= cutoff]
        return spec.mu + spec.alpha * np.exp(-spec.beta * (t - prior)).sum()

    return hawkes_lam


def analytic_temporal_loglik(spec: OracleSpec, seq: EventSequence) -> float:
    """Closed-form sum_i log lambda(t_i) - integral of lambda over [0, T]."""
    t = np.asarray(seq.times)
    T = seq.t_max
    if spec.kind == "homogeneous":
        return t.size * math.log(spec.rate) - spec.rate * T
    if spec.kind == "sinusoidal":
        lam = spec.mu + spec.amplitude * np.sin(2.0 * math.pi * t / spec.period)
        integral = spec.mu * T + (spec.amplitude * spec.period / (2.0 * math.pi)) * (
            1.0 - math.cos(2.0 * math.pi * T / spec.period)
        )
        return float(np.log(lam).sum() - integral)
    # hawkes
    log_sum = 0.0
    for i in range(t.size):
        lam = spec.mu + spec.alpha * np.exp(-spec.beta * (t[i] - t[:i])).sum()
        log_sum += math.log(lam)
    compensator = spec.mu * T + (spec.alpha / spec.beta) * (
        1.0 - np.exp(-spec.beta * (T - t))
    ).sum()
    return float(log_sum - compensator)


def _history_aware(fn):
    """Lift a plain lam(t) callable to the (t, cutoff) protocol.

    Only a callable whose second parameter is literally named `cutoff`
    is treated as history-aware; anything else (including closures with
    bound defaults) is wrapped.
    """
    import inspect

    params = list(inspect.signature(fn).parameters.values())
    if len(params) >= 2 and params[1].name == "cutoff":
        return fn
    return lambda t, cutoff=None: fn(t)


class StubIntensityPath:
    """Path protocol backed by an explicit intensity function.

    Lets the likelihood code be checked against analytic values without a
    trained decoder: the integral is accumulated by the same RK4 quadrature
    the real decoder uses, and observation terms are zero. The intensity may
    be cadlag (jumps at event times): event times are grid breakpoints and
    each segment integrates with the history frozen at its start.
    """

    def __init__(self, intensity, horizon: float, step: float, event_times=()):
        self.intensity = _history_aware(intensity)
        grid = make_grid(0.0, horizon, event_times, step)
        rhs = lambda state, t, ctx: (np.asarray(float(self.intensity(t, ctx))),)
        traj = integrate_with_jumps((np.zeros(()),), rhs, {}, grid,
                                    context_fn=lambda lo, hi: lo)
        self._traj = traj
        self.grid_times = np.asarray(traj.times)

    @property
    def total_intensity(self):
        return self._traj.final[0]

    def log_intensity_at(self, t: float):
        """Log of the left-limit intensity (the likelihood convention)."""
        return np.asarray(math.log(float(self.intensity(t))))

    def obs_logprob_at(self, x, m, t: float):
        return np.zeros(())

    def intensity_values(self) -> np.ndarray:
        return np.asarray([float(self.intensity(t)) for t in self.grid_times])
