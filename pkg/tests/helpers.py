"""Shared test utilities: the finite-difference gradient oracle.

Central differences with h=1e-5 on float64. Deliberately independent of the
autodiff engine: it only re-runs the forward function with perturbed
parameter values.
"""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5


def coord_samples(shape, limit, seed=0):
    """Deterministic sample of up to `limit` coordinates of an array."""
    coords = list(np.ndindex(shape)) if shape else [()]
    if len(coords) <= limit:
        return coords
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(coords), size=limit, replace=False)
    return [coords[i] for i in picks]


def fd_gradient(forward, params, name, idx, h=FD_STEP):
    """Central finite difference of scalar `forward()` wrt params[name][idx]."""
    arr = params[name]
    orig = arr[idx]
    arr[idx] = orig + h
    f_plus = np.asarray(forward(), dtype=np.float64)
    arr[idx] = orig - h
    f_minus = np.asarray(forward(), dtype=np.float64)
    arr[idx] = orig
    return (f_plus - f_minus) / (2.0 * h)


def max_rel_error(forward, grads, params, names=None, per_tensor_limit=None,
                  h=FD_STEP):
    """Worst relative error between analytic grads and central differences.

    `forward()` must return the scalar loss (float) under the current
    parameter values; `grads` maps names to analytic gradient arrays.
    """
    worst = 0.0
    for name in (names if names is not None else params):
        arr = params[name]
        coords = (coord_samples(arr.shape, per_tensor_limit, seed=hash(name) % 2**31)
                  if per_tensor_limit else
                  (list(np.ndindex(arr.shape)) if arr.shape else [()]))
        for idx in coords:
            fd = fd_gradient(forward, params, name, idx, h=h)
            an = grads[name][idx] if name in grads else 0.0
            denom = max(abs(fd), abs(an), 1e-7)
            worst = max(worst, abs(fd - an) / denom)
    return worst
