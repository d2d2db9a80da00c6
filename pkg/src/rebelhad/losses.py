"""Training objectives for both stages with analytic gradients.

Every ``*_grad`` function returns ``(value, grads)``; the plain function
returns only the value. Teacher features (``f_spe``) never receive gradient.
Norms are mean-reduced throughout so the loss weights do not depend on the
tensor size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .numerics import ops

STAGE1_TERMS = ("sim", "mse", "z")
STAGE2_TERMS = ("cc", "cos", "var", "recon")


@dataclass(frozen=True)
class Stage1Weights:
    mse: float = 0.1
    z: float = 0.1

    def __post_init__(self):
        if self.mse < 0 or self.z < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class Stage2Weights:
    recon: float = 1.0
    cos: float = 0.1
    var: float = 0.1
    ssim: float = 0.01
    tau: float = 1.0

    def __post_init__(self):
        if min(self.recon, self.cos, self.var, self.ssim) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


# --------------------------------------------------------------------------
# stage 1


def _location_cosine(a, b):
    dot = (a * b).sum(axis=1)
    na = np.sqrt((a * a).sum(axis=1))
    nb = np.sqrt((b * b).sum(axis=1))
    ok = (na > 0) & (nb > 0)
    safe_a = np.where(ok, na, 1.0)
    safe_b = np.where(ok, nb, 1.0)
    cos = np.where(ok, dot / (safe_a * safe_b), 0.0)
    return cos, ok, safe_a, safe_b


def loss_sim_grad(gs, fs):
    """One minus the mean per-location channel cosine, averaged over scales."""
    if len(gs) != len(fs):
        raise ValueError("need the same number of decoder and encoder scales")
    total = 0.0
    dgs, dfs = [], []
    k = len(gs)
    for g, f in zip(gs, fs):
        if g.shape != f.shape:
            raise ValueError(f"scale shape mismatch {g.shape} vs {f.shape}")
        cos, ok, ng, nf = _location_cosine(g, f)
        total += cos.mean()
        w = -1.0 / (k * cos.size) * ok
        inv = (w / (ng * nf))[:, None]
        dgs.append(inv * f - (w * cos / ng**2)[:, None] * g)
        dfs.append(inv * g - (w * cos / nf**2)[:, None] * f)
    return 1.0 - total / k, (dgs, dfs)


def loss_sim(gs, fs):
    return loss_sim_grad(gs, fs)[0]


def loss_mse_grad(h, h_r):
    if h.shape != h_r.shape:
        raise ValueError(f"shape mismatch {h.shape} vs {h_r.shape}")
    diff = h_r - h
    return float((diff * diff).mean()), 2.0 * diff / diff.size


def loss_mse(h, h_r):
    return loss_mse_grad(np.asarray(h, dtype=np.float64), np.asarray(h_r, dtype=np.float64))[0]


def loss_z_grad(o):
    """Mean of ``-log(1 - sigmoid(o))``, evaluated as ``softplus(o)``."""
    return float(ops.softplus(o).mean()), ops.sigmoid(o) / o.size


def loss_z(o):
    return loss_z_grad(np.asarray(o, dtype=np.float64))[0]


def _check_parts(parts):
    for name, val in parts.items():
        if not np.isfinite(val):
            raise NumericalError(f"loss term {name} is not finite ({val})")


def stage1_total(parts, w: Stage1Weights = Stage1Weights(), enabled=STAGE1_TERMS):
    _check_parts(parts)
    coef = stage1_coefficients(w, enabled)
    return sum(coef[k] * parts.get(k, 0.0) for k in STAGE1_TERMS)


def stage1_coefficients(w: Stage1Weights, enabled=STAGE1_TERMS):
    base = {"sim": 1.0, "mse": w.mse, "z": w.z}
    return {k: (base[k] if k in enabled else 0.0) for k in STAGE1_TERMS}


# --------------------------------------------------------------------------
# stage 2


def loss_cc_grad(f_spe, f_spa, eps=1e-5):
    """Squared Frobenius norm of the whitened teacher/student cross-covariance."""
    if f_spe.shape[0] != f_spa.shape[0] or f_spe.shape[2:] != f_spa.shape[2:]:
        raise ValueError(f"batch/spatial mismatch {f_spe.shape} vs {f_spa.shape}")
    n = f_spa.shape[0]
    y = ops.whiten(f_spe, eps).reshape(n, f_spe.shape[1], -1)
    xhat, wcache = ops.whiten_forward(f_spa, eps)
    x = xhat.reshape(n, f_spa.shape[1], -1)
    m = n * x.shape[2]
    c = np.einsum("nil,njl->ij", x, y) / m
    dx = np.einsum("ij,njl->nil", 2.0 * c, y) / m
    return float((c * c).sum()), ops.whiten_backward(dx.reshape(f_spa.shape), wcache)


def loss_cc(f_spe, f_spa, eps=1e-5):
    return loss_cc_grad(np.asarray(f_spe, dtype=np.float64), np.asarray(f_spa, dtype=np.float64), eps)[0]


def loss_cos_grad(f_spe, f_spa):
    val, cache = ops.cosine_sim_forward(f_spe, f_spa)
    return 1.0 + val, ops.cosine_sim_backward(1.0, cache, wrt="b")


def loss_cos(f_spe, f_spa):
    return loss_cos_grad(np.asarray(f_spe, dtype=np.float64), np.asarray(f_spa, dtype=np.float64))[0]


def loss_var_grad(f_spa, tau=1.0):
    """Per-channel variance hinge plus mean absolute activation."""
    axes = (0,) + tuple(range(2, f_spa.ndim))
    d = f_spa.shape[1]
    m = f_spa.size // d
    centered = f_spa - f_spa.mean(axis=axes, keepdims=True)
    var = (centered * centered).mean(axis=axes, keepdims=True)
    active = var < tau
    hinge = float(np.where(active, tau - var, 0.0).sum() / d)
    l1 = float(np.abs(f_spa).mean())
    grad = -2.0 * centered * active / (m * d) + np.sign(f_spa) / f_spa.size
    return hinge + l1, grad


def loss_var(f_spa, tau=1.0):
    return loss_var_grad(np.asarray(f_spa, dtype=np.float64), tau)[0]


def loss_recon_grad(h, h_hat, lambda_ssim=0.01):
    mse, dmse = loss_mse_grad(h, h_hat)
    s, cache = ops.ssim_forward(h, h_hat)
    grad = dmse
    if lambda_ssim:
        grad = grad - lambda_ssim * ops.ssim_backward(1.0, cache)
    return mse + lambda_ssim * (1.0 - s), grad


def loss_recon(h, h_hat, lambda_ssim=0.01):
    h = np.asarray(getattr(h, "data", h), dtype=np.float64)
    h_hat = np.asarray(getattr(h_hat, "data", h_hat), dtype=np.float64)
    return loss_recon_grad(h, h_hat, lambda_ssim)[0]


def stage2_coefficients(w: Stage2Weights, enabled=STAGE2_TERMS):
    base = {"cc": 1.0, "cos": w.cos, "var": w.var, "recon": w.recon}
    return {k: (base[k] if k in enabled else 0.0) for k in STAGE2_TERMS}


def stage2_total(parts, w: Stage2Weights = Stage2Weights(), enabled=STAGE2_TERMS):
    _check_parts(parts)
    coef = stage2_coefficients(w, enabled)
    return sum(coef[k] * parts.get(k, 0.0) for k in STAGE2_TERMS)
