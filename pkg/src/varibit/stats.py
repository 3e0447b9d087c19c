"""Distribution estimates over weight tensors and the two switching scalars.

``kl_divergence`` measures (in bits) how much information a re-encoding of a
weight tensor loses; ``gradient_diversity`` measures how much recent
gradients of a layer disagree, which signals how much precision headroom the
layer still needs for learning.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels

DEFAULT_KL_SMOOTHING = 1e-9


@dataclass
class Histogram:
    """Unit-mass histogram: ``len(bin_edges) == len(mass) + 1``."""

    bin_edges: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=np.float64)
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if self.bin_edges.ndim != 1 or self.mass.ndim != 1:
            raise ValueError("bin_edges and mass must be 1-D")
        if self.bin_edges.size != self.mass.size + 1:
            raise ValueError("need exactly one more edge than bins")
        if not np.all(np.diff(self.bin_edges) > 0):
            raise ValueError("bin_edges must be strictly increasing")
        if np.any(self.mass < 0):
            raise ValueError("bin masses must be non-negative")
        if abs(float(self.mass.sum()) - 1.0) > 1e-9:
            raise ValueError("bin masses must sum to 1")


def empirical_distribution(values, resolution: int,
                           value_range: tuple[float, float]) -> Histogram:
    """Histogram of ``values`` over ``resolution`` equal-width bins.

    Values outside ``value_range`` are counted in the nearest edge bin, so
    the masses always sum to 1.
    """
    flat = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    if flat.size == 0:
        raise ValueError("cannot estimate a distribution from an empty array")
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    lo, hi = float(value_range[0]), float(value_range[1])
    if not lo < hi:
        raise ValueError(f"invalid range ({lo}, {hi})")
    width = (hi - lo) / resolution
    counts = kernels.bin_counts(flat, lo, 1.0 / width, resolution)
    edges = lo + np.arange(resolution + 1, dtype=np.float64) * width
    return Histogram(edges, np.asarray(counts, dtype=np.float64) / flat.size)


def kl_divergence(p: Histogram, q: Histogram,
                  smoothing: float = DEFAULT_KL_SMOOTHING) -> float:
    """Discrete KL divergence of ``p`` from ``q`` in bits.

    Both masses are shifted by ``smoothing`` inside each log term so empty
    bins stay finite; the result is 0 exactly when ``p == q`` and can dip
    below 0 only by the smoothing bound ``-len(mass) * log2(1 + smoothing)``.
    """
    if not np.array_equal(p.bin_edges, q.bin_edges):
        raise ValueError("histograms must share bin edges")
    ratio = (p.mass + smoothing) / (q.mass + smoothing)
    return float(np.sum(p.mass * np.log2(ratio)))


@dataclass
class GradientHistory:
    """Bounded ring of a layer's recent gradient tensors, most recent last."""

    capacity: int
    entries: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.entries = deque(self.entries)
        self._trim()

    def _trim(self):
        while len(self.entries) > self.capacity:
            self.entries.popleft()

    def append(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=np.float64)
        if self.entries and grad.shape != self.entries[-1].shape:
            raise ValueError("all history entries must share one shape")
        self.entries.append(grad)
        self._trim()

    def set_capacity(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._trim()

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


def gradient_diversity(history) -> float:
    """Ratio of summed gradient norms to the norm of the summed gradient.

    1.0 means the window's gradients are aligned; large values mean they
    conflict. Returns ``inf`` when the gradients cancel exactly and 1.0 for
    an all-zero window (by convention).
    """
    entries = list(history.entries) if isinstance(history, GradientHistory) else list(history)
    if not entries:
        raise ValueError("gradient history is empty")
    norm_sum = 0.0
    total = np.zeros_like(entries[0], dtype=np.float64)
    for g in entries:
        norm_sum += float(np.linalg.norm(g))
        total += g
    sum_norm = float(np.linalg.norm(total))
    if sum_norm == 0.0:
        return 1.0 if norm_sum == 0.0 else math.inf
    return norm_sum / sum_norm


def log_gradient_diversity(delta_s: float) -> float:
    """Natural log of the diversity when it is finite and positive, else 1."""
    if 0.0 < delta_s < math.inf:
        return math.log(delta_s)
    return 1.0
