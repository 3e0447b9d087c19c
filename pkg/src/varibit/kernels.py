"""Backend selection for the hot quantization/binning kernels.

The compiled Cython extension is preferred when it imported cleanly; the
numpy implementation is the fallback and is bit-identical, so a run's
results do not depend on which backend served it. Set ``VARIBIT_PURE_PYTHON=1``
to force the fallback (used by the benchmark and the equivalence tests).
"""

import os

from . import _kernels_numpy

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built on this interpreter
    _compiled = None

if _compiled is not None and not os.environ.get("VARIBIT_PURE_PYTHON"):
    _impl = _compiled
    BACKEND = "cython"
else:
    _impl = _kernels_numpy
    BACKEND = "numpy"

sr_quantize = _impl.sr_quantize
bin_counts = _impl.bin_counts


def available_backends():
    """Names of the kernel backends importable in this process."""
    names = ["numpy"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names
