# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for tensor quantization and histogram binning.

Both kernels are drop-in replacements for the numpy versions in
``_kernels_numpy`` and must stay bit-identical to them: every arithmetic
step below mirrors the vectorized expression exactly (same operations,
same order, IEEE-754 doubles throughout).
"""

from libc.math cimport floor

import numpy as np


def sr_quantize(const double[::1] values, const double[::1] uniforms,
                double scale, double step, double lo, double hi):
    """Stochastically round ``values`` onto the grid ``step`` and saturate.

    ``uniforms`` holds one pre-drawn U[0,1) sample per element; rounding up
    happens when the sample falls below the fractional grid residue.
    """
    cdef Py_ssize_t i, n = values.shape[0]
    cdef double g, fg, y
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    for i in range(n):
        g = values[i] * scale
        fg = floor(g)
        if uniforms[i] < g - fg:
            fg = fg + 1.0
        y = fg * step
        if y < lo:
            y = lo
        elif y > hi:
            y = hi
        ov[i] = y
    return out


def bin_counts(const double[::1] values, double lo, double inv_width,
               Py_ssize_t nbins):
    """Count values into ``nbins`` equal-width bins starting at ``lo``.

    Out-of-range values land in the nearest edge bin.
    """
    cdef Py_ssize_t i, idx, n = values.shape[0]
    cdef double t
    out = np.zeros(nbins, dtype=np.int64)
    cdef long long[::1] cv = out
    for i in range(n):
        t = floor((values[i] - lo) * inv_width)
        if t < 0.0:
            idx = 0
        elif t >= <double> nbins:
            idx = nbins - 1
        else:
            idx = <Py_ssize_t> t
        cv[idx] += 1
    return out
