"""Event-sequence data model, JSONL ingestion, standardization, missingness injection.

A sequence is a list of (t, x, m) events on [0, t_max]: x is a D-vector of
feature values, m the matching {0,1} observation mask. Missing cells are
stored as 0.0; the mask is the single source of truth. All arrays are
float64 and frozen read-only after construction, so sequences can be shared
across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError

# Observed standard deviations below this are treated as degenerate.
STD_FLOOR = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class EventSequence:
    """Ordered events (t_i, x_i, m_i) on [0, t_max] with per-cell masks."""

    times: np.ndarray  # (N,)
    values: np.ndarray  # (N, D); masked cells forced to 0.0
    mask: np.ndarray  # (N, D); 1.0 observed, 0.0 missing
    t_max: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=np.float64)
        if values.ndim != 2 or mask.shape != values.shape:
            raise DataError(
                f"values/mask must be (N, D) with equal shapes, got {values.shape} vs {mask.shape}"
            )
        if times.shape[0] != values.shape[0]:
            raise DataError(
                f"got {times.shape[0]} times for {values.shape[0]} events"
            )
        if not math.isfinite(self.t_max) or self.t_max <= 0:
            raise DataError(f"t_max must be a positive real, got {self.t_max}")
        if not (np.isfinite(times).all() and np.isfinite(values).all()):
            raise DataError("non-finite time or value entry")
        if times.size:
            if np.any(np.diff(times) <= 0):
                raise DataError("event times must be strictly increasing")
            if times[0] < 0 or times[-1] > self.t_max:
                raise DataError(
                    f"event times must lie in [0, {self.t_max}], got range "
                    f"[{times[0]}, {times[-1]}]"
                )
        if not np.isin(mask, (0.0, 1.0)).all():
            raise DataError("mask entries must be 0 or 1")
        if times.size and np.any(mask.sum(axis=1) < 1):
            raise DataError("every event needs at least one observed dimension")
        # Enforce the zero-fill convention regardless of what the caller stored.
        values = values * mask
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "t_max", float(self.t_max))

    @property
    def n_events(self) -> int:
        return self.times.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def duration(self) -> float:
        """t_N - t_0; zero for sequences with fewer than two events."""
        if self.n_events < 2:
            return 0.0
        return float(self.times[-1] - self.times[0])


def _horizon_variance(sequences: list[EventSequence]) -> float:
    end_times = [s.times[-1] for s in sequences if s.n_events > 0]
    if len(end_times) < 2:
        return 0.0
    return float(np.var(end_times))


@dataclass
class Dataset:
    """Sequences sharing one feature dimension, plus standardization state.

    `feature_mean`/`feature_std` are None until `standardize` runs;
    `horizon_variance` is the empirical variance of the end times t_N,
    used by the horizon sampling head.
    """

    sequences: list[EventSequence]
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    horizon_variance: float = field(default=-1.0)

    def __post_init__(self):
        dims = {s.dim for s in self.sequences}
        if len(dims) > 1:
            raise DataError(f"sequences disagree on feature dimension: {sorted(dims)}")
        if self.horizon_variance < 0:
            self.horizon_variance = _horizon_variance(self.sequences)

    @property
    def dim(self) -> int:
        if not self.sequences:
            raise DataError("empty dataset has no feature dimension")
        return self.sequences[0].dim

    @property
    def standardized(self) -> bool:
        return self.feature_mean is not None

    def __len__(self) -> int:
        return len(self.sequences)


def load_jsonl(path) -> Dataset:
    """Read one sequence per line: {"t_max": f, "events": [{"t": f, "x": [f|null,...]}]}.

    Null entries become masked cells. Raises DataError with the offending
    line number on parse failures, dimension mismatches, or non-monotone times.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    records = []
    dim = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict) or "t_max" not in rec or "events" not in rec:
            raise DataError(f"{path}:{lineno}: record needs 't_max' and 'events'")
        events = rec["events"]
        times, rows, masks = [], [], []
        for ev in events:
            if not isinstance(ev, dict) or "t" not in ev or "x" not in ev:
                raise DataError(f"{path}:{lineno}: event needs 't' and 'x'")
            x = ev["x"]
            if dim is None:
                dim = len(x)
            elif len(x) != dim:
                raise DataError(
                    f"{path}:{lineno}: feature dimension {len(x)} != {dim}"
                )
            times.append(float(ev["t"]))
            rows.append([0.0 if v is None else float(v) for v in x])
            masks.append([0.0 if v is None else 1.0 for v in x])
        records.append((lineno, float(rec["t_max"]), times, rows, masks))

    if dim is None:
        dim = 0  # no events anywhere: dimension is vacuous

    sequences = []
    for lineno, t_max, times, rows, masks in records:
        n = len(times)
        try:
            seq = EventSequence(
                times=np.asarray(times, dtype=np.float64),
                values=np.asarray(rows, dtype=np.float64).reshape(n, dim),
                mask=np.asarray(masks, dtype=np.float64).reshape(n, dim),
                t_max=t_max,
            )
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        sequences.append(seq)
    return Dataset(sequences=sequences)


def save_jsonl(ds: Dataset, path) -> None:
    """Write a dataset in the same JSONL format load_jsonl reads (round-trippable)."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in ds.sequences:
            events = []
            for i in range(seq.n_events):
                x = [
                    float(seq.values[i, j]) if seq.mask[i, j] > 0 else None
                    for j in range(seq.dim)
                ]
                events.append({"t": float(seq.times[i]), "x": x})
            fh.write(json.dumps({"t_max": seq.t_max, "events": events}) + "\n")


def observed_moments(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and sample std over observed cells only."""
    dim = ds.dim
    mean = np.zeros(dim)
    std = np.zeros(dim)
    for j in range(dim):
        cells = np.concatenate(
            [s.values[s.mask[:, j] > 0, j] for s in ds.sequences]
        ) if ds.sequences else np.empty(0)
        if cells.size < 2:
            raise DataError(f"dimension {j} has fewer than 2 observed values")
        mean[j] = cells.mean()
        std[j] = cells.std(ddof=1)
        if std[j] < STD_FLOOR:
            raise DataError(f"dimension {j} is degenerate (observed std {std[j]:.3g})")
    return mean, std


def apply_standardization(ds: Dataset, mean: np.ndarray, std: np.ndarray) -> Dataset:
    """Rescale observed cells with a given (mean, std) table; masked cells stay 0."""
    out = []
    for seq in ds.sequences:
        vals = (seq.values - mean[None, :]) / std[None, :] * seq.mask
        out.append(EventSequence(seq.times, vals, seq.mask, seq.t_max))
    return Dataset(
        sequences=out,
        feature_mean=np.asarray(mean, dtype=np.float64).copy(),
        feature_std=np.asarray(std, dtype=np.float64).copy(),
        horizon_variance=ds.horizon_variance,
    )


def standardize(ds: Dataset) -> Dataset:
    """Zero-mean, unit-variance rescaling of each dimension's observed values.

    Statistics are computed over observed cells only, so masked positions can
    never bias the moments. The (mean, std) table is stored for the inverse
    transform at synthesis time.
    """
    if ds.standardized:
        raise DataError("dataset is already standardized")
    mean, std = observed_moments(ds)
    return apply_standardization(ds, mean, std)


def destandardize_values(values: np.ndarray, mask: np.ndarray,
                         mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Inverse of the standardization map on observed cells; masked cells stay 0."""
    return (values * std[None, :] + mean[None, :]) * mask


def destandardize(ds: Dataset) -> Dataset:
    """Undo `standardize`, restoring original units."""
    if not ds.standardized:
        raise DataError("dataset is not standardized")
    out = []
    for seq in ds.sequences:
        vals = destandardize_values(seq.values, seq.mask, ds.feature_mean, ds.feature_std)
        out.append(EventSequence(seq.times, vals, seq.mask, seq.t_max))
    return Dataset(sequences=out, horizon_variance=ds.horizon_variance)


def inject_missing_mcar(ds: Dataset, rate: float, seed: int) -> Dataset:
    """Mask each observed cell independently with probability `rate` (MCAR).

    Every event keeps at least one observed dimension: if a draw would drop
    them all, the last observed cell is re-drawn until it survives.
    Deterministic under `seed`.
    """
    if not (0.0 <= rate < 1.0):
        raise DataError(f"missing rate must be in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    out = []
    for seq in ds.sequences:
        mask = np.array(seq.mask)
        for i in range(seq.n_events):
            observed = np.flatnonzero(mask[i] > 0)
            drop = rng.random(observed.size) < rate
            while drop.all():
                drop[-1] = rng.random() < rate
            mask[i, observed[drop]] = 0.0
        out.append(EventSequence(seq.times, seq.values * mask, mask, seq.t_max))
    return Dataset(
        sequences=out,
        feature_mean=None if ds.feature_mean is None else ds.feature_mean.copy(),
        feature_std=None if ds.feature_std is None else ds.feature_std.copy(),
        horizon_variance=ds.horizon_variance,
    )


def subset(ds: Dataset, indices) -> Dataset:
    return replace(ds, sequences=[ds.sequences[i] for i in indices])
