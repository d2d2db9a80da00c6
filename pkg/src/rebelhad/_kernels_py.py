"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` that performs the same
floating point operations in the same order, so the two backends agree
bit for bit. Keep them in sync.
"""
import numpy as np

BACKEND = "numpy"

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64_fill(state, n):
    """Return ``(values, new_state)`` for the next ``n`` SplitMix64 outputs."""
    state = int(state) & 0xFFFFFFFFFFFFFFFF
    if n == 0:
        return np.empty(0, dtype=np.uint64), state
    z = np.arange(1, n + 1, dtype=np.uint64)
    z *= _GAMMA
    z += np.uint64(state)
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    new_state = (state + n * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    return z, new_state


def im2col(xpad, k, stride, ho, wo):
    n, c = xpad.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=np.float64)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = xpad[:, :, di:di + hspan:stride, dj:dj + wspan:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def col2im(cols, c, hp, wp, k, stride, ho, wo):
    n = cols.shape[0]
    cols6 = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for di in range(k):
        for dj in range(k):
            out[:, :, di:di + hspan:stride, dj:dj + wspan:stride] += cols6[:, :, di, dj]
    return out


def box_blur(field, radius):
    """Separable box mean with edge clamping; rows first, then columns."""
    field = np.ascontiguousarray(field, dtype=np.float64)
    if radius <= 0:
        return field.copy()
    width = 2 * radius + 1
    h, w = field.shape
    padded = np.pad(field, ((0, 0), (radius, radius)), mode="edge")
    acc = np.zeros((h, w))
    for o in range(width):
        acc += padded[:, o:o + w]
    rows = acc / width
    padded = np.pad(rows, ((radius, radius), (0, 0)), mode="edge")
    acc = np.zeros((h, w))
    for o in range(width):
        acc += padded[o:o + h, :]
    return acc / width


def jacobi_eigh(a, rel_tol=1e-14, max_sweeps=60):
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors, sweeps)`` with eigenvectors as
    columns, in no particular order.
    """
    a = np.array(a, dtype=np.float64, order="C")
    n = a.shape[0]
    v = np.eye(n)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0 or abs(apq) <= rel_tol * np.sqrt(abs(a[p, p] * a[q, q])):
                    continue
                rotated = True
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                colp = a[:, p].copy()
                colq = a[:, q].copy()
                a[:, p] = c * colp - s * colq
                a[:, q] = s * colp + c * colq
                rowp = a[p, :].copy()
                rowq = a[q, :].copy()
                a[p, :] = c * rowp - s * rowq
                a[q, :] = s * rowp + c * rowq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            break
    return np.diag(a).copy(), v, sweeps
