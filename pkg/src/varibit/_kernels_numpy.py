"""Pure-numpy fallback for the compiled kernels.

Must stay bit-identical to ``_kernels.pyx``: the same elementwise IEEE-754
operations in the same order, so either backend can serve a run without
changing its results.
"""

import numpy as np


def sr_quantize(values, uniforms, scale, step, lo, hi):
    g = values * scale
    fg = np.floor(g)
    fg = fg + (uniforms < (g - fg))
    y = fg * step
    return np.clip(y, lo, hi)


def bin_counts(values, lo, inv_width, nbins):
    t = np.floor((values - lo) * inv_width)
    idx = np.clip(t, 0.0, float(nbins - 1)).astype(np.int64)
    return np.bincount(idx, minlength=nbins)
