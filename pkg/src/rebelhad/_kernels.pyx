# cython: language_level=3
"""Compiled hot kernels. Mirrors ``_kernels_py`` operation for operation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from libc.stdint cimport uint64_t

cnp.import_array()

BACKEND = "cython"

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL


def splitmix64_fill(state, Py_ssize_t n):
    cdef uint64_t s = <uint64_t>(int(state) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t z
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef Py_ssize_t i
    for i in range(n):
        s += GAMMA
        z = s
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
        o[i] = z ^ (z >> 31)
    return out, int(s)


def im2col(double[:, :, :, ::1] xpad, int k, int stride, int ho, int wo):
    cdef Py_ssize_t n = xpad.shape[0], c = xpad.shape[1]
    out = np.empty((n, c * k * k, ho * wo), dtype=np.float64)
    cdef double[:, :, ::1] cols = out
    cdef Py_ssize_t b, ch, di, dj, i, j, row, base
    with nogil:
        for b in range(n):
            for ch in range(c):
                for di in range(k):
                    for dj in range(k):
                        row = (ch * k + di) * k + dj
                        for i in range(ho):
                            base = i * wo
                            for j in range(wo):
                                cols[b, row, base + j] = xpad[b, ch, di + i * stride, dj + j * stride]
    return out


def col2im(double[:, :, ::1] cols, int c, int hp, int wp, int k, int stride, int ho, int wo):
    cdef Py_ssize_t n = cols.shape[0]
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] x = out
    cdef Py_ssize_t b, ch, di, dj, i, j, row, base
    with nogil:
        for b in range(n):
            for ch in range(c):
                for di in range(k):
                    for dj in range(k):
                        row = (ch * k + di) * k + dj
                        for i in range(ho):
                            base = i * wo
                            for j in range(wo):
                                x[b, ch, di + i * stride, dj + j * stride] += cols[b, row, base + j]
    return out


def box_blur(field, int radius):
    src = np.ascontiguousarray(field, dtype=np.float64)
    if radius <= 0:
        return src.copy()
    cdef double[:, ::1] f = src
    cdef Py_ssize_t h = f.shape[0], w = f.shape[1]
    rows_arr = np.empty((h, w))
    out_arr = np.empty((h, w))
    cdef double[:, ::1] rows = rows_arr
    cdef double[:, ::1] out = out_arr
    cdef int width = 2 * radius + 1
    cdef Py_ssize_t i, j, o, idx
    cdef double acc
    with nogil:
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for o in range(width):
                    idx = j + o - radius
                    if idx < 0:
                        idx = 0
                    elif idx >= w:
                        idx = w - 1
                    acc += f[i, idx]
                rows[i, j] = acc / width
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for o in range(width):
                    idx = i + o - radius
                    if idx < 0:
                        idx = 0
                    elif idx >= h:
                        idx = h - 1
                    acc += rows[idx, j]
                out[i, j] = acc / width
    return out_arr


def jacobi_eigh(a_in, double rel_tol=1e-14, int max_sweeps=60):
    a_arr = np.array(a_in, dtype=np.float64, order="C")
    cdef double[:, ::1] a = a_arr
    cdef Py_ssize_t n = a.shape[0]
    v_arr = np.eye(n)
    cdef double[:, ::1] v = v_arr
    cdef int sweeps = 0
    cdef bint rotated
    cdef Py_ssize_t p, q, r
    cdef double apq, theta, t, c, s, x, y
    while sweeps < max_sweeps:
        sweeps += 1
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0 or fabs(apq) <= rel_tol * sqrt(fabs(a[p, p] * a[q, q])):
                    continue
                rotated = True
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for r in range(n):
                    x = a[r, p]
                    y = a[r, q]
                    a[r, p] = c * x - s * y
                    a[r, q] = s * x + c * y
                for r in range(n):
                    x = a[p, r]
                    y = a[q, r]
                    a[p, r] = c * x - s * y
                    a[q, r] = s * x + c * y
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(n):
                    x = v[r, p]
                    y = v[r, q]
                    v[r, p] = c * x - s * y
                    v[r, q] = s * x + c * y
        if not rotated:
            break
    return np.diag(a_arr).copy(), v_arr, sweeps
