"""Tensor kernels with hand-derived gradients.

Tensors are float64 numpy arrays laid out ``(N, C, H, W)``. Each operation
comes as ``op_forward`` returning ``(out, cache)`` and ``op_backward``
consuming the cache, plus a plain ``op`` convenience wrapper.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .. import kernels


def _check4(x, what="x"):
    if x.ndim != 4:
        raise ValueError(f"{what} must be (N, C, H, W), got shape {x.shape}")


# --------------------------------------------------------------------------
# convolution


def _batched_outer(a, b):
    """``sum_n a[n] @ b[n].T`` without materializing transposed copies."""
    out = a[0] @ b[0].T
    for i in range(1, a.shape[0]):
        out += a[i] @ b[i].T
    return out


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d_forward(x, weight, bias, stride=1, pad=0, keep_cols=True):
    """Cross-correlation with zero padding. ``weight`` is ``(Cout, Cin, k, k)``."""
    _check4(x)
    cout, cin, k, k2 = weight.shape
    if k != k2:
        raise ValueError("kernel must be square")
    n, c, h, w = x.shape
    if c != cin:
        raise ValueError(f"input has {c} channels, weight expects {cin}")
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {k} with pad {pad} does not fit a {h}x{w} input")
    if k == 1 and stride == 1 and pad == 0:
        cols = x.reshape(n, c, h * w)
    else:
        xpad = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x)
        cols = kernels.im2col(xpad, k, stride, ho, wo)
    w2 = weight.reshape(cout, -1)
    out = np.matmul(w2, cols)
    out += bias[:, None]
    cache = (x.shape, weight, stride, pad, cols if keep_cols else None)
    return out.reshape(n, cout, ho, wo), cache


def conv2d_backward(dout, cache, need_dx=True, need_dparams=True):
    xshape, weight, stride, pad, cols = cache
    n, c, h, w = xshape
    cout, cin, k, _ = weight.shape
    ho, wo = dout.shape[2:]
    d2 = dout.reshape(n, cout, ho * wo)
    dw = db = dx = None
    if need_dparams:
        dw = _batched_outer(d2, cols).reshape(weight.shape)
        db = d2.sum(axis=(0, 2))
    if need_dx:
        dcols = np.matmul(weight.reshape(cout, -1).T, d2)
        if k == 1 and stride == 1 and pad == 0:
            dx = dcols.reshape(xshape)
        else:
            hp, wp = h + 2 * pad, w + 2 * pad
            dxp = kernels.col2im(dcols, c, hp, wp, k, stride, ho, wo)
            dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    return dx, dw, db


def conv2d(x, weight, bias, stride=1, pad=0):
    return conv2d_forward(x, weight, bias, stride, pad, keep_cols=False)[0]


def conv_transpose_out_size(n, k, stride, pad, output_padding=0):
    return (n - 1) * stride - 2 * pad + k + output_padding


def conv2d_transpose_forward(x, weight, bias, stride=1, pad=0, output_padding=0, keep_input=True):
    """Adjoint of :func:`conv2d`. ``weight`` is ``(Cin, Cout, k, k)``."""
    _check4(x)
    cin, cout, k, _ = weight.shape
    n, c, h, w = x.shape
    if c != cin:
        raise ValueError(f"input has {c} channels, weight expects {cin}")
    oh = conv_transpose_out_size(h, k, stride, pad, output_padding)
    ow = conv_transpose_out_size(w, k, stride, pad, output_padding)
    if oh < 1 or ow < 1:
        raise ValueError("transposed convolution output would be empty")
    hp, wp = oh + 2 * pad, ow + 2 * pad
    x2 = x.reshape(n, cin, h * w)
    cols = np.matmul(weight.reshape(cin, -1).T, x2)
    if k == 1 and stride == 1 and pad == 0 and output_padding == 0:
        out = cols.reshape(n, cout, oh, ow)
    else:
        outp = kernels.col2im(cols, cout, hp, wp, k, stride, h, w)
        out = outp[:, :, pad:pad + oh, pad:pad + ow] if pad else outp
    out = out + bias[None, :, None, None]
    cache = (x2 if keep_input else None, x.shape, weight, stride, pad, (hp, wp))
    return out, cache


def conv2d_transpose_backward(dout, cache, need_dx=True, need_dparams=True):
    x2, xshape, weight, stride, pad, (hp, wp) = cache
    n, cin, h, w = xshape
    _, cout, k, _ = weight.shape
    oh, ow = dout.shape[2:]
    if k == 1 and stride == 1 and pad == 0 and hp == oh:
        dcols = dout.reshape(n, cout, h * w)
    else:
        doutp = np.zeros((n, cout, hp, wp))
        doutp[:, :, pad:pad + oh, pad:pad + ow] = dout
        dcols = kernels.im2col(doutp, k, stride, h, w)
    dx = dw = db = None
    if need_dparams:
        dw = _batched_outer(x2, dcols).reshape(weight.shape)
        db = dout.sum(axis=(0, 2, 3))
    if need_dx:
        dx = np.matmul(weight.reshape(cin, -1), dcols).reshape(xshape)
    return dx, dw, db


def conv2d_transpose(x, weight, bias, stride=1, pad=0, output_padding=0):
    return conv2d_transpose_forward(x, weight, bias, stride, pad, output_padding, keep_input=False)[0]


# --------------------------------------------------------------------------
# separable linear resampling (pooling and bilinear resize)


@lru_cache(maxsize=256)
def pool_matrix(n_in, n_out):
    """Row i averages input cells [floor(i*n/s), ceil((i+1)*n/s))."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=256)
def bilinear_matrix(n_in, n_out):
    """Interpolation weights with half-pixel (align_corners=False) sampling."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m.setflags(write=False)
    return m


def _separable(x, rows, cols):
    return np.matmul(np.matmul(rows, x), cols.T)


def _separable_adjoint(dy, rows, cols):
    return np.matmul(np.matmul(rows.T, dy), cols)


def adaptive_avg_pool(x, out_hw):
    if out_hw < 1:
        raise ValueError("out_hw must be >= 1")
    return _separable(x, pool_matrix(x.shape[-2], out_hw), pool_matrix(x.shape[-1], out_hw))


def adaptive_avg_pool_backward(dy, in_hw):
    h, w = in_hw
    s = dy.shape[-1]
    return _separable_adjoint(dy, pool_matrix(h, s), pool_matrix(w, s))


def resize_bilinear(x, out_h, out_w):
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1")
    return _separable(x, bilinear_matrix(x.shape[-2], out_h), bilinear_matrix(x.shape[-1], out_w))


def resize_bilinear_backward(dy, in_hw):
    h, w = in_hw
    return _separable_adjoint(dy, bilinear_matrix(h, dy.shape[-2]), bilinear_matrix(w, dy.shape[-1]))


# --------------------------------------------------------------------------
# activations


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    return dy * (x > 0)


def sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


# --------------------------------------------------------------------------
# squeeze-and-excitation


def se_forward(x, w1, b1, w2, b2):
    """Channel gating. ``w1`` is ``(C/r, C, 1, 1)``, ``w2`` is ``(C, C/r, 1, 1)``."""
    _check4(x)
    c = x.shape[1]
    if w1.shape[1] != c or w2.shape[0] != c:
        raise ValueError(f"SE weights do not match {c} channels")
    m1, m2 = w1.reshape(w1.shape[0], c), w2.reshape(c, w2.shape[1])
    z = x.mean(axis=(2, 3))
    a1 = z @ m1.T + b1
    hid = relu(a1)
    gate = sigmoid(hid @ m2.T + b2)
    out = x * gate[:, :, None, None]
    return out, (x, z, a1, hid, gate, m1, m2)


def se_backward(dy, cache, need_dx=True):
    x, z, a1, hid, gate, m1, m2 = cache
    dgate = (dy * x).sum(axis=(2, 3))
    da2 = dgate * gate * (1.0 - gate)
    dw2 = (da2.T @ hid).reshape(m2.shape + (1, 1))
    db2 = da2.sum(axis=0)
    da1 = (da2 @ m2) * (a1 > 0)
    dw1 = (da1.T @ z).reshape(m1.shape + (1, 1))
    db1 = da1.sum(axis=0)
    dx = None
    if need_dx:
        dz = da1 @ m1
        hw = x.shape[2] * x.shape[3]
        dx = dy * gate[:, :, None, None] + (dz / hw)[:, :, None, None]
    return dx, (dw1, db1, dw2, db2)


def se_block(x, w1, b1, w2, b2, reduction):
    if x.shape[1] % reduction:
        raise ValueError(f"{x.shape[1]} channels not divisible by reduction {reduction}")
    if w1.shape[0] != x.shape[1] // reduction:
        raise ValueError("SE hidden width must equal C / reduction")
    return se_forward(x, w1, b1, w2, b2)[0]


# --------------------------------------------------------------------------
# whitening and similarity


def whiten_forward(x, eps=1e-5):
    """Per-channel standardization over every axis except axis 1 (population variance)."""
    axes = (0,) + tuple(range(2, x.ndim))
    mean = x.mean(axis=axes, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=axes, keepdims=True)
    std = np.sqrt(var + eps)
    inv = np.divide(1.0, std, out=np.zeros_like(std), where=std > 0)
    xhat = xc * inv
    return xhat, (xhat, inv, axes)


def whiten_backward(dy, cache):
    xhat, inv, axes = cache
    m = xhat.size // xhat.shape[1]
    s1 = dy.sum(axis=axes, keepdims=True)
    s2 = (dy * xhat).sum(axis=axes, keepdims=True)
    return inv * (dy - s1 / m - xhat * s2 / m)


def whiten(x, eps=1e-5):
    return whiten_forward(x, eps)[0]


def cosine_sim_forward(a, b):
    """Cosine of the flattened tensors per batch item, averaged over the batch."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    n = a.shape[0]
    af, bf = a.reshape(n, -1), b.reshape(n, -1)
    na, nb = np.linalg.norm(af, axis=1), np.linalg.norm(bf, axis=1)
    ok = (na > 0) & (nb > 0)
    denom = np.where(ok, na * nb, 1.0)
    cos = np.where(ok, np.einsum("ij,ij->i", af, bf) / denom, 0.0)
    return float(cos.mean()), (af, bf, na, nb, ok, cos, a.shape)


def cosine_sim_backward(dval, cache, wrt="b"):
    af, bf, na, nb, ok, cos, shape = cache
    n = af.shape[0]
    if wrt == "b":
        own, other, nown, nother = bf, af, nb, na
    else:
        own, other, nown, nother = af, bf, na, nb
    safe_own = np.where(ok, nown, 1.0)
    safe_other = np.where(ok, nother, 1.0)
    g = other / (safe_own * safe_other)[:, None] - (cos / safe_own**2)[:, None] * own
    g *= ok[:, None]
    return (dval / n * g).reshape(shape)


def cosine_sim(a, b):
    return cosine_sim_forward(a, b)[0]


# --------------------------------------------------------------------------
# SSIM

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@lru_cache(maxsize=64)
def gaussian_valid_matrix(n, size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Valid-mode Gaussian filtering as an ``(n - size + 1, n)`` matrix.

    Inputs narrower than the window use the largest odd window that fits.
    """
    size = min(size, n)
    if size % 2 == 0:
        size -= 1
    taps = np.exp(-((np.arange(size) - size // 2) ** 2) / (2.0 * sigma * sigma))
    taps /= taps.sum()
    out = n - size + 1
    m = np.zeros((out, n))
    for i in range(out):
        m[i, i:i + size] = taps
    m.setflags(write=False)
    return m


def ssim_forward(x, y, data_range=1.0):
    """Mean SSIM over all leading axes and valid window positions.

    ``x`` and ``y`` share a shape whose last two axes are spatial.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    gr = gaussian_valid_matrix(x.shape[-2])
    gc = gaussian_valid_matrix(x.shape[-1])
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _separable(x, gr, gc), _separable(y, gr, gc)
    exx, eyy, exy = _separable(x * x, gr, gc), _separable(y * y, gr, gc), _separable(x * y, gr, gc)
    a1 = 2.0 * mx * my + c1
    a2 = 2.0 * (exy - mx * my) + c2
    b1 = mx * mx + my * my + c1
    b2 = (exx - mx * mx) + (eyy - my * my) + c2
    smap = a1 * a2 / (b1 * b2)
    cache = (x, y, gr, gc, mx, my, a1, a2, b1, b2, smap)
    return float(smap.mean()), cache


def ssim_backward(dval, cache):
    """Gradient of the mean SSIM with respect to the second argument."""
    x, y, gr, gc, mx, my, a1, a2, b1, b2, smap = cache
    scale = dval / smap.size
    denom = b1 * b2
    d_my = (2.0 * mx * (a2 - a1) / denom - 2.0 * my * smap * (1.0 / b1 - 1.0 / b2)) * scale
    d_exy = 2.0 * a1 / denom * scale
    d_eyy = -smap / b2 * scale
    return (
        _separable_adjoint(d_my, gr, gc)
        + 2.0 * y * _separable_adjoint(d_eyy, gr, gc)
        + x * _separable_adjoint(d_exy, gr, gc)
    )


def ssim(a, b, data_range=1.0):
    """SSIM of two cubes or batches (per band, averaged over bands and positions)."""
    a = getattr(a, "data", a)
    b = getattr(b, "data", b)
    return ssim_forward(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), data_range)[0]
