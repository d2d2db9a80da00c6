"""Global RX scoring, feature-enhanced RX, the two fusion strategies and an AE baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError
from .numerics.layers import Conv2d, ReLU, Sequential
from .numerics.params import AdamState, ParamTree, adam_step
from .rng import SplitMix64

FUSIONS = ("none", "add", "mult")


@dataclass(frozen=True)
class BackgroundStats:
    mean: np.ndarray
    cov: np.ndarray
    cov_reg: np.ndarray
    chol: np.ndarray
    ridge: float


def _cube_array(cube):
    data = np.asarray(getattr(cube, "data", cube), dtype=np.float64)
    if data.ndim != 3:
        raise ValueError(f"expected a (bands, height, width) cube, got shape {data.shape}")
    return data


def background_stats(pixels):
    """Mean and regularized population covariance of ``(n_pixels, bands)`` data."""
    p, b = pixels.shape
    if p < 2:
        raise ValueError("RX needs at least 2 pixels")
    mean = pixels.mean(axis=0)
    xc = pixels - mean
    cov = xc.T @ xc / p
    cov = 0.5 * (cov + cov.T)
    ridge = max(1e-6 * np.trace(cov) / b, 1e-12)
    cov_reg = cov + ridge * np.eye(b)
    try:
        chol = np.linalg.cholesky(cov_reg)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is not positive definite even after regularization") from exc
    return BackgroundStats(mean, cov, cov_reg, chol, ridge)


def rx(cube):
    """Mahalanobis distance of every pixel to the global background statistics."""
    data = _cube_array(cube)
    b, h, w = data.shape
    pixels = data.reshape(b, -1).T
    stats = background_stats(pixels)
    z = solve_triangular(stats.chol, (pixels - stats.mean).T, lower=True, check_finite=True)
    scores = (z * z).sum(axis=0)
    if not np.all(np.isfinite(scores)):
        raise NumericalError("RX produced non-finite scores")
    return scores.reshape(h, w)


def _check_feature(data, feature):
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != data.shape:
        raise ValueError(f"feature shape {feature.shape} does not match cube shape {data.shape}")
    return feature


def rx_enhanced(cube, feature):
    """RX on the enhanced cube ``H + F``."""
    data = _cube_array(cube)
    return rx(data + _check_feature(data, feature))


def minmax(scores):
    s = np.asarray(scores, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def fuse_multiplicative(s_spa, s_spe):
    """Product of min-max normalized score maps."""
    s_spa, s_spe = np.asarray(s_spa), np.asarray(s_spe)
    if s_spa.shape != s_spe.shape:
        raise ValueError(f"score map shapes differ: {s_spa.shape} vs {s_spe.shape}")
    return minmax(s_spa) * minmax(s_spe)


def fuse_additive(cube, f_spa, f_spe):
    """RX on ``H + (F_spa + F_spe)``; symmetric in the two features."""
    data = _cube_array(cube)
    return rx(data + (_check_feature(data, f_spa) + _check_feature(data, f_spe)))


def enhance(cube, spe_fen, spa_fen=None):
    """Return ``(F_spe, F_spa)`` for one cube; ``F_spa`` is None without a student."""
    data = _cube_array(cube)
    f_spe = spe_fen.forward(data)[0]
    f_spa = None
    if spa_fen is not None:
        f_spa = spa_fen.forward(data)[0]["f_spa"][0]
    return f_spe, f_spa


def detect(cube, spe_fen, spa_fen=None, fusion="add"):
    """Score one cube with the enhanced detector.

    ``none``: RX on ``H + F_spe``. ``add``: RX on ``H + F_spa + F_spe``, with
    ``F_spa = 0`` when no student is given. ``mult``: product of the
    normalized RX maps of ``H + F_spa`` and ``H + F_spe``.
    """
    if fusion not in FUSIONS:
        raise ValueError(f"fusion must be one of {FUSIONS}, got {fusion!r}")
    f_spe, f_spa = enhance(cube, spe_fen, spa_fen)
    if fusion == "none":
        return rx_enhanced(cube, f_spe)
    if fusion == "add":
        return fuse_additive(cube, np.zeros_like(f_spe) if f_spa is None else f_spa, f_spe)
    if f_spa is None:
        raise ValueError("multiplicative fusion needs the spatial model")
    return fuse_multiplicative(rx_enhanced(cube, f_spa), rx_enhanced(cube, f_spe))


AE_WIDTHS = (32, 16, 8, 16, 32)


def ae_baseline(cube, iters=500, lr=0.01, seed=0):
    """Per-scene 1x1-convolution autoencoder; score is the per-pixel squared reconstruction error."""
    data = _cube_array(cube)
    b = data.shape[0]
    x = data[None]
    widths = (b,) + AE_WIDTHS + (b,)
    layers = []
    for i in range(len(widths) - 1):
        layers.append(Conv2d(f"ae{i}", widths[i], widths[i + 1], 1))
        if i < len(widths) - 2:
            layers.append(ReLU())
    net = Sequential(*layers)
    params = ParamTree()
    net.init(params, SplitMix64(seed))
    state = AdamState(lr=lr, beta1=0.9, beta2=0.999)
    for _ in range(iters):
        y, caches = net.forward(params, x)
        diff = y - x
        net.backward(params, 2.0 * diff / diff.size, caches, need_dx=False)
        adam_step(params, state)
    y, _ = net.forward(params, x)
    scores = ((y - x) ** 2).sum(axis=1)[0]
    if not np.all(np.isfinite(scores)):
        raise NumericalError("autoencoder diverged")
    return scores
