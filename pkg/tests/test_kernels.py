"""The compiled kernels and the numpy fallback must agree bit for bit."""

import numpy as np
import pytest

from varibit import _kernels_numpy
from varibit import kernels

compiled = pytest.importorskip("varibit._kernels",
                               reason="compiled extension not built")


@pytest.mark.parametrize("seed", range(5))
def test_sr_quantize_backends_bit_identical(seed):
    rng = np.random.default_rng(seed)
    n = 50_000
    values = rng.normal(0, 10.0 ** rng.uniform(-3, 3), n)
    uniforms = rng.random(n)
    scale, step = 2.0 ** 4, 2.0 ** -4
    lo, hi = -8.0, 8.0 - step
    a = compiled.sr_quantize(values, uniforms, scale, step, lo, hi)
    b = _kernels_numpy.sr_quantize(values, uniforms, scale, step, lo, hi)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_bin_counts_backends_bit_identical(seed):
    rng = np.random.default_rng(100 + seed)
    n = 50_000
    values = rng.normal(0, 2.0, n)
    nbins = int(rng.integers(2, 65))
    lo, hi = -3.0, 3.0
    inv_width = nbins / (hi - lo)
    a = compiled.bin_counts(values, lo, inv_width, nbins)
    b = _kernels_numpy.bin_counts(values, lo, inv_width, nbins)
    assert np.array_equal(a, b)
    assert a.sum() == n


def test_bin_counts_edge_values_go_to_edge_bins():
    values = np.array([-100.0, -1.0, 0.0, 0.999, 1.0, 100.0])
    counts = kernels.bin_counts(values, -1.0, 2 / 2.0, 2)
    # below range and at lo -> bin 0; at hi and above -> bin 1
    assert counts.tolist() == [3, 3]


def test_selected_backend_is_listed():
    assert kernels.BACKEND in kernels.available_backends()
