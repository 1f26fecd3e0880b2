# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled split-search kernel.

Mirrors _split_py.scan_feature expression for expression.  The build pins
-ffp-contract=off so the C compiler cannot fuse the multiply-adds that the
numpy kernel evaluates as separate rounded operations; keep the arithmetic
grouping below in sync with the numpy version or the bit-parity test fails.
"""

import numpy as np


def scan_feature(double[::1] v, double[::1] w, double[::1] y,
                 Py_ssize_t min_leaf, double eps):
    """Best cut of one presorted feature; see _split_py.scan_feature."""
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i, best_i
    cdef double cw, cy, cww, cwy
    cdef double tw, ty, tww, twy
    cdef double nl, nr, lw, ly
    cdef double den_l, num_l, den_r, num_r
    cdef double beta_l, beta_r, gain, best_gain
    cdef double neg_inf = -np.inf

    if n < 2 * min_leaf:
        return neg_inf, -1

    tw = 0.0
    ty = 0.0
    tww = 0.0
    twy = 0.0
    for i in range(n):
        tw = tw + w[i]
        ty = ty + y[i]
        tww = tww + w[i] * w[i]
        twy = twy + w[i] * y[i]

    best_gain = neg_inf
    best_i = -1
    cw = 0.0
    cy = 0.0
    cww = 0.0
    cwy = 0.0
    for i in range(n - 1):
        cw = cw + w[i]
        cy = cy + y[i]
        cww = cww + w[i] * w[i]
        cwy = cwy + w[i] * y[i]

        nl = <double> (i + 1)
        nr = <double> n - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        if not v[i + 1] > v[i]:
            continue
        lw = cw
        ly = cy
        den_l = cww - lw * lw / nl
        den_r = (tww - cww) - (tw - lw) * (tw - lw) / nr
        if not (den_l > eps and den_r > eps):
            continue
        num_l = cwy - lw * ly / nl
        num_r = (twy - cwy) - (tw - lw) * (ty - ly) / nr
        beta_l = num_l / den_l
        beta_r = num_r / den_r
        gain = nl * (beta_l * beta_l) + nr * (beta_r * beta_r)
        if gain > best_gain:
            best_gain = gain
            best_i = i

    return best_gain, best_i
