"""Finite-difference verification of every training loss against its analytic gradient."""
from __future__ import annotations

import numpy as np

from . import losses
from .numerics import ops
from .numerics.gradcheck import finite_diff_check
from .numerics.params import ParamTree
from .rng import SplitMix64

SHAPE = (2, 6, 12, 12)


def _normal(rng, shape):
    return rng.normal(int(np.prod(shape))).reshape(shape)


def _case(fn, fixed, free):
    """Wrap ``fn(*fixed, *free) -> (value, grads)`` as a gradcheck objective over ``free``."""
    tree = ParamTree()
    names = [f"x{i}" for i in range(len(free))]
    for n, v in zip(names, free):
        tree.add(n, v)

    def f(params):
        val, grads = fn(*fixed, *[params.value(n) for n in names])
        if len(names) == 1:
            grads = [grads]
        for n, g in zip(names, grads):
            params.accumulate(n, g)
        return val

    return f, tree


def _sim(rng):
    shapes = [(2, 4, 12, 12), (2, 6, 6, 6), (2, 8, 3, 3)]
    gs = [_normal(rng, s) for s in shapes]
    fs = [_normal(rng, s) for s in shapes]

    def fn(*arrs):
        val, (dg, df) = losses.loss_sim_grad(list(arrs[:3]), list(arrs[3:]))
        return val, dg + df

    return _case(fn, (), gs + fs)


def _mse(rng):
    return _case(losses.loss_mse_grad, (_normal(rng, SHAPE),), [_normal(rng, SHAPE)])


def _z(rng):
    return _case(losses.loss_z_grad, (), [2.0 * _normal(rng, (2, 1, 12, 12))])


def _stage1(rng):
    h = _normal(rng, SHAPE)
    w = losses.Stage1Weights()
    coef = losses.stage1_coefficients(w)

    def fn(g, f, h_r, o):
        sim, (dg, df) = losses.loss_sim_grad([g], [f])
        mse, dm = losses.loss_mse_grad(h, h_r)
        z, dz = losses.loss_z_grad(o)
        total = losses.stage1_total({"sim": sim, "mse": mse, "z": z}, w)
        return total, [coef["sim"] * dg[0], coef["sim"] * df[0], coef["mse"] * dm, coef["z"] * dz]

    return _case(fn, (), [_normal(rng, (2, 4, 12, 12)), _normal(rng, (2, 4, 12, 12)),
                          _normal(rng, SHAPE), _normal(rng, (2, 1, 12, 12))])


def _whiten(rng):
    target = _normal(rng, SHAPE)

    def fn(x):
        y, cache = ops.whiten_forward(x)
        return float((y * target).sum()), ops.whiten_backward(target, cache)

    return _case(fn, (), [_normal(rng, SHAPE)])


def _cc(rng):
    return _case(losses.loss_cc_grad, (_normal(rng, SHAPE),), [_normal(rng, SHAPE)])


def _cos(rng):
    return _case(losses.loss_cos_grad, (_normal(rng, SHAPE),), [_normal(rng, SHAPE)])


def _var(rng):
    # scale so some channels sit on each side of the hinge
    scale = np.linspace(0.3, 1.6, SHAPE[1]).reshape(1, -1, 1, 1)
    return _case(lambda x: losses.loss_var_grad(x, 1.0), (), [scale * _normal(rng, SHAPE)])


def _ssim(rng):
    x = rng.uniform(int(np.prod(SHAPE))).reshape(SHAPE)

    def fn(y):
        val, cache = ops.ssim_forward(x, y)
        return val, ops.ssim_backward(1.0, cache)

    return _case(fn, (), [rng.uniform(int(np.prod(SHAPE))).reshape(SHAPE)])


def _recon(rng):
    h = rng.uniform(int(np.prod(SHAPE))).reshape(SHAPE)
    return _case(lambda y: losses.loss_recon_grad(h, y, 0.01), (),
                 [rng.uniform(int(np.prod(SHAPE))).reshape(SHAPE)])


def _stage2(rng):
    h = rng.uniform(int(np.prod(SHAPE))).reshape(SHAPE)
    f_spe = _normal(rng, SHAPE)
    w = losses.Stage2Weights()
    coef = losses.stage2_coefficients(w)

    def fn(f_spa, h_hat):
        cc, dcc = losses.loss_cc_grad(f_spe, f_spa)
        cos, dcos = losses.loss_cos_grad(f_spe, f_spa)
        var, dvar = losses.loss_var_grad(f_spa, w.tau)
        rec, drec = losses.loss_recon_grad(h, h_hat, w.ssim)
        total = losses.stage2_total({"cc": cc, "cos": cos, "var": var, "recon": rec}, w)
        d_spa = coef["cc"] * dcc + coef["cos"] * dcos + coef["var"] * dvar
        return total, [d_spa, coef["recon"] * drec]

    return _case(fn, (), [_normal(rng, SHAPE), rng.uniform(int(np.prod(SHAPE))).reshape(SHAPE)])


CASES = {
    "sim": _sim,
    "mse": _mse,
    "z": _z,
    "stage1_total": _stage1,
    "whiten": _whiten,
    "cc": _cc,
    "cos": _cos,
    "var": _var,
    "ssim": _ssim,
    "recon": _recon,
    "stage2_total": _stage2,
}


def run_suite(seeds=range(20), h=1e-4, n_coords=64, names=None):
    """Return ``{loss name: worst relative error over all seeds}``."""
    worst = {}
    for name in names or CASES:
        err = 0.0
        for seed in seeds:
            f, tree = CASES[name](SplitMix64(seed))
            err = max(err, finite_diff_check(f, tree, h=h, n_coords=n_coords, seed=seed))
        worst[name] = err
    return worst
