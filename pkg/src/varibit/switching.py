"""Per-layer precision control.

Each training batch can re-decide every layer's fixed-point format from two
opposing signals:

* ``push_down`` finds the lowest-precision format whose re-encoding of the
  layer's weights keeps the KL divergence against the float weights below a
  tolerance (information loss small enough to ignore);
* ``push_up`` adds fractional bits on top of that minimum, sized by the
  gradient diversity of the layer's recent batches, so the layer keeps
  enough resolution to continue learning.

A global min/mean/max strategy arbitrates between push_up's two suggestions
and is itself adapted from the loss trend; per-layer lookback and histogram
resolution adapt alongside.
"""

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .fixed_point import FixedPointFormat, quantize_tensor
from .rng import substream
from .stats import (GradientHistory, empirical_distribution,
                    gradient_diversity, kl_divergence, log_gradient_diversity)

DEFAULT_HEADROOM_BITS = 4
_KL_CLIFF_FACTOR = 4.0


class Strategy(Enum):
    MIN = "min"
    MEAN = "mean"
    MAX = "max"


@dataclass
class LayerQuantState:
    """A layer's slot in the quantization mapping."""

    format: FixedPointFormat
    lookback: int
    resolution: int
    grads: GradientHistory


@dataclass
class QuantizationMapping:
    """Control-loop state: per-layer quantization plus the global knobs."""

    layers: dict[str, LayerQuantState]
    strategy: Strategy
    lb_bounds: tuple[int, int]
    r_bounds: tuple[int, int]
    gamma: float
    epsilon_kl: float
    seed: int
    step: int = 0
    loss_history: deque = field(default_factory=deque)

    def __post_init__(self):
        self.loss_history = deque(self.loss_history, maxlen=self.lb_bounds[1])


def init_mapping(layer_names, initial_format: FixedPointFormat,
                 lb_bounds: tuple[int, int], r_bounds: tuple[int, int],
                 gamma: float, epsilon_kl: float, seed: int,
                 strategy: Strategy = Strategy.MEAN) -> QuantizationMapping:
    """Fresh mapping: every layer at the initial format, shortest lookback."""
    lb_lwr, lb_upr = lb_bounds
    r_lwr, r_upr = r_bounds
    if not (1 <= lb_lwr <= lb_upr and 2 <= r_lwr <= r_upr):
        raise ValueError("lookback/resolution bounds must be ordered")
    resolution = min(max(32, r_lwr), r_upr)
    layers = {
        name: LayerQuantState(
            format=initial_format,
            lookback=lb_lwr,
            resolution=resolution,
            grads=GradientHistory(capacity=lb_lwr),
        )
        for name in layer_names
    }
    return QuantizationMapping(layers=layers, strategy=strategy,
                               lb_bounds=lb_bounds, r_bounds=r_bounds,
                               gamma=gamma, epsilon_kl=epsilon_kl, seed=seed)


def histogram_range(values) -> tuple[float, float]:
    """Shared binning support for a tensor and its re-encodings: the tensor's
    span padded by 1%, widened arbitrarily when the tensor is constant."""
    lo = float(np.min(values))
    hi = float(np.max(values))
    if lo == hi:
        return lo - 0.5, hi + 0.5
    pad = 0.01 * (hi - lo)
    return lo - pad, hi + pad


def format_headroom(values) -> int:
    """Integer-plus-sign bits needed above the binary point for ``values``."""
    max_abs = float(np.max(np.abs(values))) if np.size(values) else 0.0
    if max_abs == 0.0:
        return DEFAULT_HEADROOM_BITS
    return max(int(math.ceil(math.log2(max_abs))) + 1, 1)


def push_down_domain(weights, current: FixedPointFormat) -> list[FixedPointFormat]:
    """Candidate formats, coarsest first: fractional bits 0..current, word
    length following the tensor's magnitude headroom."""
    h = format_headroom(weights)
    return [FixedPointFormat(min(fl + h, 32), fl)
            for fl in range(current.frac_length + 1)]


def push_down(weights, current: FixedPointFormat, resolution: int,
              epsilon_kl: float, rng) -> FixedPointFormat:
    """Lowest-precision format whose re-encoding loses less than
    ``epsilon_kl`` bits of information, found by bisection.

    The candidate domain is ``push_down_domain``; a candidate passes when the
    KL divergence between the weight histogram and the histogram of the
    stochastically quantized weights stays below ``epsilon_kl`` at the given
    resolution. Falls back to the most precise candidate when none passes.

    ``rng`` is either a Generator (one 63-bit base seed is drawn from it) or
    an int base seed; each candidate is quantized with the derived substream
    ``substream(base, frac_length)``, which makes the per-candidate check a
    pure function that an exhaustive scan can replay exactly.
    """
    w = np.ascontiguousarray(weights, dtype=np.float64).reshape(-1)
    if w.size == 0:
        raise ValueError("cannot estimate a distribution from an empty array")
    if epsilon_kl <= 0:
        raise ValueError("epsilon_kl must be positive")
    if isinstance(rng, np.random.Generator):
        base = int(rng.integers(0, 2 ** 63))
    else:
        base = int(rng)
    domain = push_down_domain(w, current)
    value_range = histogram_range(w)
    p = empirical_distribution(w, resolution, value_range)
    evals: dict[int, float] = {}

    def kl_at(index: int) -> float:
        if index not in evals:
            fmt = domain[index]
            quantized = quantize_tensor(w, fmt, substream(base, fmt.frac_length))
            q = empirical_distribution(quantized.values, resolution, value_range)
            evals[index] = kl_divergence(p, q)
        return evals[index]

    lo, hi = 0, len(domain)
    while lo < hi:
        mid = (lo + hi) // 2
        if kl_at(mid) < epsilon_kl:
            hi = mid
        else:
            lo = mid + 1
    best = lo if lo < len(domain) else None

    # The binned KL is not strictly monotone in precision: when the grid step
    # nears the bin width, aliasing can pull a coarser format under the
    # tolerance while a finer one sits above it. Walk down from the bisection
    # boundary while the KL stays inside the tolerance band; the walk stops at
    # the cliff where coarse formats lose information wholesale.
    j = (best if best is not None else len(domain)) - 1
    while j >= 0:
        kl = kl_at(j)
        if kl < epsilon_kl:
            best = j
        elif kl >= _KL_CLIFF_FACTOR * epsilon_kl:
            break
        j -= 1
    return domain[best] if best is not None else domain[-1]


def push_up_suggestions(delta_s: float, fl_min: int) -> tuple[int, float]:
    """The two precision-increase suggestions for a positive log-diversity.

    The first shrinks as diversity grows past ``e`` (confident gradients need
    little headroom); the second grows quadratically with log-diversity up to
    the word-size cap. The singular point ``log == 1`` is guarded to 1.
    """
    lg = log_gradient_diversity(delta_s)
    if lg <= 1.0:
        s1 = 1
    else:
        s1 = max(math.ceil(1.0 / (lg - 1.0)), 1)
    s2 = max(min(32.0 * lg * lg - 1.0, 32.0) - fl_min, 1.0)
    return s1, s2


def push_up(delta_s: float, current: FixedPointFormat,
            minimal: FixedPointFormat, strategy: Strategy) -> FixedPointFormat:
    """Raise precision above the push_down minimum by the strategy-combined
    suggestion, clamping back into a valid signed format."""
    lg = log_gradient_diversity(delta_s)
    if lg > 0.0:
        s1, s2 = push_up_suggestions(delta_s, minimal.frac_length)
        if strategy is Strategy.MIN:
            combined = min(s1, s2)
        elif strategy is Strategy.MEAN:
            combined = math.ceil(0.5 * (s1 + s2))
        else:
            combined = max(s1, s2)
        s = max(int(math.ceil(combined)), 1)
    else:
        s = 1
    wl = min(max(minimal.word_length, minimal.frac_length) + 1, 32)
    fl = min(minimal.frac_length + s, 32)
    fl = min(fl, wl - 1)
    return FixedPointFormat(wl, fl)


def adapt_strategy(loss_history, lookbacks, current: Strategy) -> Strategy:
    """Escalate min -> mean -> max while the recent average loss does not
    improve on the current batch loss; drop to min as soon as it does."""
    losses = [float(x) for x in loss_history]
    if not losses:
        raise ValueError("loss history is empty")
    lb_avg = math.ceil(float(np.mean(lookbacks)))
    avg = float(np.mean(losses[-lb_avg:]))
    current_loss = losses[-1]
    if abs(avg) <= abs(current_loss):
        if current is Strategy.MEAN:
            return Strategy.MAX
        if current is Strategy.MIN:
            return Strategy.MEAN
        return current
    return Strategy.MIN


def adapt_lookback(delta_s: float, lookback: int, gamma: float,
                   bounds: tuple[int, int]) -> int:
    """New diversity-window length, momentum-blended against the old one.

    High diversity shortens the window; degenerate diversity (zero or
    infinite) pins the target to the upper bound.
    """
    lwr, upr = bounds
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    if not lwr <= lookback <= upr:
        raise ValueError(f"lookback {lookback} outside bounds {bounds}")
    if 0.0 < delta_s < math.inf:
        target = min(max(math.ceil(upr / delta_s), lwr), upr)
    else:
        target = upr
    blended = math.ceil(target * gamma + (1.0 - gamma) * lookback)
    return min(max(blended, lwr), upr)


def adapt_resolution(lookback: int, lb_bounds: tuple[int, int],
                     resolution: int, r_bounds: tuple[int, int]) -> int:
    """Nudge the histogram bin count up at maximal lookback, down at minimal."""
    r_lwr, r_upr = r_bounds
    if lookback == lb_bounds[1]:
        return min(max(resolution + 1, r_lwr), r_upr)
    if lookback == lb_bounds[0]:
        return min(max(resolution - 1, r_lwr), r_upr)
    return resolution


def precision_switch(quant_grads: Mapping[str, np.ndarray], loss: float,
                     q: QuantizationMapping,
                     master_weights: Mapping[str, np.ndarray]) -> QuantizationMapping:
    """One control-loop tick: record the batch, adapt the knobs, and re-decide
    the format of every layer whose gradient window just filled.

    ``quant_grads`` and ``master_weights`` must cover every layer in the
    mapping. Layers that switch get their gradient window cleared, so
    consecutive decisions never share evidence.
    """
    missing = [name for name in q.layers if name not in quant_grads]
    if missing:
        raise KeyError(f"gradients missing for layers: {missing}")

    q.loss_history.append(float(loss))
    lookbacks = [state.lookback for state in q.layers.values()]
    q.strategy = adapt_strategy(q.loss_history, lookbacks, q.strategy)

    for name, state in q.layers.items():
        state.grads.append(quant_grads[name])
        diversity = gradient_diversity(state.grads)
        state.lookback = adapt_lookback(diversity, state.lookback, q.gamma,
                                        q.lb_bounds)
        state.grads.set_capacity(state.lookback)
        state.resolution = adapt_resolution(state.lookback, q.lb_bounds,
                                            state.resolution, q.r_bounds)
        if len(state.grads) >= state.lookback:
            rng = substream(q.seed, name, "push_down", q.step)
            minimal = push_down(master_weights[name], state.format,
                                state.resolution, q.epsilon_kl, rng)
            diversity = gradient_diversity(state.grads)
            state.format = push_up(diversity, state.format, minimal, q.strategy)
            state.grads.clear()

    q.step += 1
    return q
