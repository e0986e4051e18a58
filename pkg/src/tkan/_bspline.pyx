# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched B-spline kernel (same contract as ``_bspline_py``)."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _find_span(const double[::1] t, double x, Py_ssize_t p, Py_ssize_t g) nogil:
    cdef Py_ssize_t lo = p, hi = p + g - 1, mid
    if x >= t[hi]:
        return hi
    while lo < hi:
        mid = (lo + hi + 1) >> 1
        if t[mid] <= x:
            lo = mid
        else:
            hi = mid - 1
    return lo


def basis_with_derivative(x, knots, int order, int intervals):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef const double[::1] t = np.ascontiguousarray(knots, dtype=np.float64)
    cdef Py_ssize_t p = order, g = intervals
    cdef Py_ssize_t n = xv.shape[0], nb = g + p
    cdef double lo = t[p], hi = t[p + g]

    values_arr = np.zeros((n, nb), dtype=np.float64)
    derivs_arr = np.zeros((n, nb), dtype=np.float64)
    cdef double[:, ::1] values = values_arr
    cdef double[:, ::1] derivs = derivs_arr

    N_arr = np.empty(p + 1)
    P_arr = np.empty(p + 1)
    L_arr = np.empty(p + 1)
    R_arr = np.empty(p + 1)
    cdef double[::1] N = N_arr
    cdef double[::1] prev = P_arr
    cdef double[::1] left = L_arr
    cdef double[::1] right = R_arr

    cdef Py_ssize_t k, j, r, s, gi
    cdef double xk, xc, saved, temp, den, d, shift

    with nogil:
        for k in range(n):
            xk = xv[k]
            xc = lo if xk < lo else (hi if xk > hi else xk)
            shift = xk - xc
            s = _find_span(t, xc, p, g)

            N[0] = 1.0
            prev[0] = 1.0
            for j in range(1, p + 1):
                left[j] = xc - t[s + 1 - j]
                right[j] = t[s + j] - xc
                saved = 0.0
                for r in range(j):
                    den = right[r + 1] + left[j - r]
                    temp = N[r] / den if den != 0.0 else 0.0
                    N[r] = saved + right[r + 1] * temp
                    saved = left[j - r] * temp
                N[j] = saved
                if j == p - 1:
                    for r in range(p):
                        prev[r] = N[r]

            for r in range(p + 1):
                gi = s - p + r
                d = 0.0
                if r >= 1:
                    den = t[gi + p] - t[gi]
                    if den != 0.0:
                        d += prev[r - 1] / den
                if r <= p - 1:
                    den = t[gi + p + 1] - t[gi + 1]
                    if den != 0.0:
                        d -= prev[r] / den
                d *= p
                values[k, gi] = N[r] + shift * d
                derivs[k, gi] = d
    return values_arr, derivs_arr
