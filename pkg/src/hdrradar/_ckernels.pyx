# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled elementwise kernels (same arithmetic order as _pykernels)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log1p

cnp.import_array()

BACKEND = "cython"


def lcb_forward(x, double w, double eps):
    xf = np.ascontiguousarray(x, dtype=np.complex128).ravel()
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty_like(xf)
    cdef const double[::1] xv = xf.view(np.float64)
    cdef double[::1] ov = out.view(np.float64)
    cdef Py_ssize_t i, n = xf.shape[0]
    cdef double xr, xi, r, m, p, lg, t, s
    with nogil:
        for i in range(n):
            xr = xv[2 * i]
            xi = xv[2 * i + 1]
            r = sqrt(xr * xr + xi * xi)
            m = 1.0 if r > w else 0.0
            p = m * r + (1.0 - m) * w
            lg = w + log1p(p - w)
            t = lg * m + r * (1.0 - m)
            s = t / (r + eps)
            ov[2 * i] = s * xr
            ov[2 * i + 1] = s * xi
    return out.reshape(np.shape(x))


def lcb_backward(x, g, double w, double eps):
    xf = np.ascontiguousarray(x, dtype=np.complex128).ravel()
    gf = np.ascontiguousarray(g, dtype=np.complex128).ravel()
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty_like(xf)
    cdef const double[::1] xv = xf.view(np.float64)
    cdef const double[::1] gv = gf.view(np.float64)
    cdef double[::1] ov = out.view(np.float64)
    cdef Py_ssize_t i, n = xf.shape[0]
    cdef double xr, xi, gr, gi, r, d, q, t, s, dt, ds, coef
    cdef double one_minus_w = 1.0 - w
    with nogil:
        for i in range(n):
            xr = xv[2 * i]
            xi = xv[2 * i + 1]
            gr = gv[2 * i]
            gi = gv[2 * i + 1]
            r = sqrt(xr * xr + xi * xi)
            d = r + eps
            if r > w:
                q = one_minus_w + r
                t = w + log1p(r - w)
                dt = 1.0 / q
            else:
                t = r
                dt = 1.0
            s = t / d
            ds = dt / d - t / (d * d)
            if r > 0:
                coef = ds * (xr * gr + xi * gi) / r
            else:
                coef = 0.0
            ov[2 * i] = s * gr + coef * xr
            ov[2 * i + 1] = s * gi + coef * xi
    return out.reshape(np.shape(x))


def box_sums(power, int half_rows, int half_cols, int guard_rows, int guard_cols):
    cdef const double[:, ::1] p = np.ascontiguousarray(power, dtype=np.float64)
    cdef Py_ssize_t m = p.shape[0], n = p.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] total = np.empty((m, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] count = np.empty((m, n))
    # Doppler strip sums (wrapped), then prefix sums along range (clamped)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] outer_cum = np.zeros((m, n + 1))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] inner_cum = np.zeros((m, n + 1))
    cdef double[:, ::1] oc = outer_cum
    cdef double[:, ::1] ic = inner_cum
    cdef double[:, ::1] tv = total
    cdef double[:, ::1] cv = count
    cdef Py_ssize_t i, j, k, r, lo, hi, glo, ghi
    cdef bint inside
    cdef double acc_o, acc_i
    cdef long kr_o = 2 * half_rows + 1, kr_i = 2 * guard_rows + 1
    with nogil:
        for i in range(m):
            for k in range(-half_rows, half_rows + 1):
                r = (i + k + m) % m
                inside = -guard_rows <= k <= guard_rows
                for j in range(n):
                    oc[i, j + 1] += p[r, j]
                    if inside:
                        ic[i, j + 1] += p[r, j]
            for j in range(n):
                oc[i, j + 1] += oc[i, j]
                ic[i, j + 1] += ic[i, j]
            for j in range(n):
                lo = j - half_cols if j - half_cols > 0 else 0
                hi = j + half_cols + 1 if j + half_cols + 1 < n else n
                glo = j - guard_cols if j - guard_cols > 0 else 0
                ghi = j + guard_cols + 1 if j + guard_cols + 1 < n else n
                tv[i, j] = (oc[i, hi] - oc[i, lo]) - (ic[i, ghi] - ic[i, glo])
                cv[i, j] = (hi - lo) * kr_o - (ghi - glo) * kr_i
    return total, count
