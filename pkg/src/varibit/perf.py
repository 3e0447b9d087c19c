"""Analytical training-cost model.

Counts per-layer multiply-accumulates, weights them by each layer's word
length per batch (piecewise-constant between format-switch points), and
aggregates over the run. Ratios against a 32-bit baseline give the speedup,
memory-footprint, and model-size estimates. All arithmetic is integer-exact.
"""

from dataclasses import dataclass
from typing import Mapping

from .fixed_point import FixedPointFormat
from .nn import TRAINABLE_KINDS, LayerSpec, infer_shapes, name_layers

FULL_WIDTH = 32


@dataclass(frozen=True)
class LayerCostProfile:
    madds_forward: int   # per sample
    madds_backward: int  # per sample
    param_count: int


def layer_madds(spec: LayerSpec, input_shape: tuple[int, ...]) -> LayerCostProfile:
    """Closed-form MADD counts for one layer; the backward pass is twice the
    forward (weight-gradient plus input-gradient passes). Activation, pooling
    and reshape layers cost nothing."""
    if spec.kind == "dense":
        if input_shape != (spec.in_features,):
            raise ValueError(f"dense expects ({spec.in_features},), got {input_shape}")
        fwd = spec.in_features * spec.out_features
        params = spec.in_features * spec.out_features + spec.out_features
        return LayerCostProfile(fwd, 2 * fwd, params)
    if spec.kind == "conv2d":
        if len(input_shape) != 3 or input_shape[2] != spec.in_channels:
            raise ValueError(f"conv2d expects (H, W, {spec.in_channels}), got {input_shape}")
        h, w, _ = input_shape
        if spec.kernel > h or spec.kernel > w:
            raise ValueError("conv kernel larger than input")
        oh = (h - spec.kernel) // spec.stride + 1
        ow = (w - spec.kernel) // spec.stride + 1
        fwd = oh * ow * spec.out_channels * spec.kernel * spec.kernel * spec.in_channels
        params = spec.kernel * spec.kernel * spec.in_channels * spec.out_channels + spec.out_channels
        return LayerCostProfile(fwd, 2 * fwd, params)
    return LayerCostProfile(0, 0, 0)


def network_profiles(specs, input_shape) -> dict[str, LayerCostProfile]:
    """Cost profile per trainable layer for a whole stack."""
    named = name_layers(specs)
    shapes = [tuple(input_shape)] + infer_shapes(named, input_shape)
    return {
        spec.name: layer_madds(spec, shapes[i])
        for i, spec in enumerate(named)
        if spec.kind in TRAINABLE_KINDS
    }


@dataclass
class WordlengthTimeline:
    """Per-layer ``(batch, word_length)`` change-points, batch 0 first."""

    changes: dict[str, list[tuple[int, int]]]

    def __post_init__(self):
        for name, points in self.changes.items():
            if not points:
                raise ValueError(f"empty timeline for layer {name!r}")
            batches = [b for b, _ in points]
            if batches != sorted(set(batches)):
                raise ValueError(f"batch indices must strictly increase for {name!r}")
            for _, wl in points:
                if not 1 <= wl <= 32:
                    raise ValueError(f"word length {wl} outside [1, 32] for {name!r}")

    def word_length_at(self, name: str, batch: int) -> int:
        points = self.changes[name]
        if batch < points[0][0]:
            raise ValueError(f"timeline gap: layer {name!r} starts at batch "
                             f"{points[0][0]}, asked for {batch}")
        wl = points[0][1]
        for b, w in points:
            if b > batch:
                break
            wl = w
        return wl


def uniform_timeline(layer_names, word_length: int) -> WordlengthTimeline:
    return WordlengthTimeline({name: [(0, word_length)] for name in layer_names})


def timeline_from_metrics(events, field: str = "wl") -> WordlengthTimeline:
    """Change-point timeline from a metrics event stream (``wl`` or ``fl``)."""
    changes: dict[str, list[tuple[int, int]]] = {}
    for event in events:
        for layer in event.layers:
            value = getattr(layer, field)
            points = changes.setdefault(layer.name, [])
            if not points or points[-1][1] != value:
                points.append((event.batch, value))
    return WordlengthTimeline(changes)


def _segment_batches(points, batches: int):
    """Yield ``(word_length, batch_count)`` segments covering [0, batches)."""
    if points[0][0] != 0:
        raise ValueError(f"timeline gap: no word length at batch 0 "
                         f"(first point at {points[0][0]})")
    for i, (start, wl) in enumerate(points):
        end = points[i + 1][0] if i + 1 < len(points) else batches
        count = min(end, batches) - start
        if count > 0:
            yield wl, count


def training_cost(timeline: WordlengthTimeline,
                  profiles: Mapping[str, LayerCostProfile], batches: int,
                  batch_size: int, quadratic: bool = False) -> int:
    """Word-length-weighted MADD total over the run, in exact cost units.

    Linear weighting by default; ``quadratic`` switches to a multiplier-area
    model that weights by the squared word length.
    """
    if batches < 0 or batch_size < 1:
        raise ValueError("need batches >= 0 and batch_size >= 1")
    missing = [name for name in profiles if name not in timeline.changes]
    if missing:
        raise ValueError(f"timeline missing layers: {missing}")
    total = 0
    for name, profile in profiles.items():
        madds = profile.madds_forward + profile.madds_backward
        for wl, count in _segment_batches(timeline.changes[name], batches):
            weight = wl * wl if quadratic else wl
            total += madds * batch_size * weight * count
    return total


def speedup(quant_cost, baseline_cost) -> float:
    """Baseline-over-quantized cost ratio."""
    if quant_cost <= 0 or baseline_cost <= 0:
        raise ValueError("costs must be positive")
    return baseline_cost / quant_cost


def model_size_ratio(final_formats: Mapping[str, FixedPointFormat],
                     profiles: Mapping[str, LayerCostProfile]) -> float:
    """Stored-bits ratio of the final quantized model vs. 32-bit."""
    missing = [name for name in profiles if name not in final_formats]
    if missing:
        raise ValueError(f"final formats missing layers: {missing}")
    bits = sum(profiles[name].param_count * final_formats[name].word_length
               for name in profiles)
    full = sum(profiles[name].param_count * FULL_WIDTH for name in profiles)
    if full == 0:
        raise ValueError("no parameters to size")
    return bits / full


def memory_footprint_ratio(timeline: WordlengthTimeline,
                           profiles: Mapping[str, LayerCostProfile],
                           batches: int) -> float:
    """Batch-time-averaged parameter-bits ratio vs. 32-bit over the run."""
    if batches < 1:
        raise ValueError("need batches >= 1")
    missing = [name for name in profiles if name not in timeline.changes]
    if missing:
        raise ValueError(f"timeline missing layers: {missing}")
    bits = 0
    for name, profile in profiles.items():
        for wl, count in _segment_batches(timeline.changes[name], batches):
            bits += profile.param_count * wl * count
    full = sum(p.param_count for p in profiles.values()) * FULL_WIDTH * batches
    if full == 0:
        raise ValueError("no parameters to size")
    return bits / full
