"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from ..rng import SplitMix64


def finite_diff_check(f, params, h=1e-4, n_coords=64, seed=0):
    """Max relative error between analytic and central-difference gradients.

    ``f(params)`` must return the scalar loss and leave its analytic gradient
    accumulated in ``params`` (gradients are zeroed before the call). Up to
    ``n_coords`` coordinates are sampled uniformly over all non-frozen
    entries; if there are fewer, every coordinate is checked. The relative
    error uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    """
    params.zero_grad()
    f0 = f(params)
    if not np.isfinite(f0):
        raise NumericalError("loss is not finite at the base point")
    analytic = {name: params[name].grad.copy() for name in params.trainable_names()}
    params.zero_grad()

    coords = [(name, i) for name in analytic for i in range(params[name].value.size)]
    if not coords:
        return 0.0
    if len(coords) > n_coords:
        rng = SplitMix64(seed)
        picks = rng.permutation(len(coords))[:n_coords]
        coords = [coords[i] for i in sorted(picks)]

    worst = 0.0
    for name, i in coords:
        flat = params[name].value.reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        fp = f(params)
        flat[i] = orig - h
        fm = f(params)
        flat[i] = orig
        params.zero_grad()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"loss is not finite when perturbing {name}[{i}]")
        numeric = (fp - fm) / (2.0 * h)
        exact = analytic[name].reshape(-1)[i]
        err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
