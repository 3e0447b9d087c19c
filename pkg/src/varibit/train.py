"""Training orchestration.

Per batch: forward on the quantized shadow weights, gradient quantization,
one precision-switch tick, SGD on the float master, requantization of every
layer at its (possibly new) format, and one metrics event. All randomness
comes from counter-keyed substreams, so a run is bit-reproducible from its
seed and can resume exactly from a checkpoint's counters.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from . import nn
from .datasets import LabeledDataset
from .fixed_point import FixedPointFormat, quantize_tensor
from .rng import substream
from .switching import (QuantizationMapping, Strategy, init_mapping,
                        precision_switch)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; the message names the offending layer."""


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int
    batch_size: int
    lr: float = 0.05
    alpha: float = 1e-5
    beta: float = 1e-4
    gamma: float = 0.5
    epsilon_kl: float = 0.05
    tnvs_scale: float = 1.0
    lb_bounds: tuple[int, int] = (4, 64)
    r_bounds: tuple[int, int] = (8, 64)
    initial_format: FixedPointFormat = FixedPointFormat(8, 4)
    seed: int = 0
    quantize_gradients: bool = True
    precision_switching: bool = True

    def validate(self) -> None:
        checks = [
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.lr > 0, "lr must be positive"),
            (self.alpha >= 0, "alpha must be non-negative"),
            (self.beta >= 0, "beta must be non-negative"),
            (0 < self.gamma <= 1, "gamma must be in (0, 1]"),
            (self.epsilon_kl > 0, "epsilon_kl must be positive"),
            (self.tnvs_scale > 0, "tnvs_scale must be positive"),
            (1 <= self.lb_bounds[0] <= self.lb_bounds[1], "lb_bounds must be ordered"),
            (2 <= self.r_bounds[0] <= self.r_bounds[1], "r_bounds must be ordered"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValueError(message)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "epsilon_kl": self.epsilon_kl,
            "tnvs_scale": self.tnvs_scale,
            "lb_bounds": list(self.lb_bounds),
            "r_bounds": list(self.r_bounds),
            "initial_format": {"wl": self.initial_format.word_length,
                               "fl": self.initial_format.frac_length},
            "seed": self.seed,
            "quantize_gradients": self.quantize_gradients,
            "precision_switching": self.precision_switching,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainerConfig":
        kwargs = dict(data)
        fmt = kwargs.pop("initial_format", None)
        if fmt is not None:
            kwargs["initial_format"] = FixedPointFormat(fmt["wl"], fmt["fl"])
        for key in ("lb_bounds", "r_bounds"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def baseline_config(config: TrainerConfig) -> TrainerConfig:
    """Float32-pinned twin of a config: wide format, no switching, float grads."""
    return replace(config, initial_format=FixedPointFormat(32, 16),
                   precision_switching=False, quantize_gradients=False)


@dataclass(frozen=True)
class LayerMetrics:
    name: str
    wl: int
    fl: int
    lb: int
    res: int


@dataclass(frozen=True)
class MetricsEvent:
    epoch: int
    batch: int            # global batch counter, strictly increasing
    loss: float
    strategy: str
    layers: tuple[LayerMetrics, ...]


@dataclass
class TrainerState:
    seed: int
    next_step: int = 0


@dataclass
class TrainResult:
    network: nn.Network
    qmap: QuantizationMapping
    metrics: list[MetricsEvent]
    state: TrainerState


def requantize_network(network: nn.Network, qmap: QuantizationMapping,
                       seed: int, step: int) -> None:
    """Refresh every quantized shadow tensor from the master at its layer's
    current format, each under its own (layer, param, step) substream."""
    for name in network.trainable_names():
        fmt = qmap.layers[name].format
        shadow = {}
        for pname, master in network.master[name].items():
            rng = substream(seed, name, pname, "requantize", step)
            shadow[pname] = quantize_tensor(master, fmt, rng)
        network.quant[name] = shadow
    network.version += 1


def _metrics_event(epoch: int, step: int, loss: float,
                   qmap: QuantizationMapping) -> MetricsEvent:
    layers = tuple(
        LayerMetrics(name=name, wl=state.format.word_length,
                     fl=state.format.frac_length, lb=state.lookback,
                     res=state.resolution)
        for name, state in qmap.layers.items()
    )
    return MetricsEvent(epoch=epoch, batch=step, loss=loss,
                        strategy=qmap.strategy.value, layers=layers)


def _blame_layer(network: nn.Network, cache) -> str:
    for kind, spec, x, _ in cache["saved"]:
        if not np.isfinite(x).all():
            return f"input of {spec.name or kind}"
    for name, params in network.quant.items():
        for pname, qt in params.items():
            if not np.isfinite(qt.values).all():
                return f"{name}/{pname}"
    return "loss head"


def _quantize_grads(grads: dict, qmap: QuantizationMapping, seed: int,
                    step: int) -> dict:
    out = {}
    for name, layer_grads in grads.items():
        fmt = qmap.layers[name].format
        out[name] = {
            pname: quantize_tensor(g, fmt, substream(seed, name, pname, "grad", step)).values
            for pname, g in layer_grads.items()
        }
    return out


BatchHook = Callable[[int, nn.Network, QuantizationMapping, TrainerState], None]


def train(config: TrainerConfig, dataset: LabeledDataset, arch=None,
          on_event: Optional[Callable[[MetricsEvent], None]] = None,
          resume: Optional[tuple] = None,
          after_batch: Optional[BatchHook] = None) -> TrainResult:
    """Run the full quantized training loop.

    ``arch`` is the layer-spec list for a fresh run; pass ``resume`` as the
    ``(network, qmap, state)`` triple of a loaded checkpoint to continue a
    run instead (the tail of events is then identical to the uninterrupted
    run). ``after_batch`` fires once per completed batch and is the hook for
    periodic checkpointing.
    """
    config.validate()
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    batches_per_epoch = n // config.batch_size
    if batches_per_epoch == 0:
        raise ValueError("batch_size exceeds dataset size")

    if resume is not None:
        network, qmap, state = resume
        if state.seed != config.seed:
            raise ValueError("checkpoint seed does not match config seed")
    else:
        if arch is None:
            raise ValueError("arch is required for a fresh run")
        network = nn.build_network(arch, dataset.sample_shape(), config.tnvs_scale,
                                   config.seed)
        qmap = init_mapping(network.trainable_names(), config.initial_format,
                            config.lb_bounds, config.r_bounds, config.gamma,
                            config.epsilon_kl, config.seed)
        state = TrainerState(seed=config.seed, next_step=0)
        requantize_network(network, qmap, config.seed, step=0)

    metrics: list[MetricsEvent] = []
    total_steps = config.epochs * batches_per_epoch
    step = state.next_step
    while step < total_steps:
        epoch, batch_in_epoch = divmod(step, batches_per_epoch)
        order = substream(config.seed, "order", epoch).permutation(n)
        idx = order[batch_in_epoch * config.batch_size:
                    (batch_in_epoch + 1) * config.batch_size]
        x, y = dataset.inputs[idx], dataset.labels[idx]

        cache, _, loss = nn.forward(network, x, y)
        if not math.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch} step {step}; "
                f"first non-finite tensor: {_blame_layer(network, cache)}")
        grads = nn.backward(network, cache, y)
        if config.quantize_gradients:
            grads = _quantize_grads(grads, qmap, config.seed, step)
        if config.precision_switching:
            weight_grads = {name: grads[name]["w"] for name in qmap.layers}
            master_weights = {name: network.master[name]["w"] for name in qmap.layers}
            precision_switch(weight_grads, loss, qmap, master_weights)
        nn.sgd_step(network.master, grads, config.lr, config.alpha, config.beta)
        requantize_network(network, qmap, config.seed, step + 1)

        event = _metrics_event(epoch, step, loss, qmap)
        metrics.append(event)
        if on_event is not None:
            on_event(event)
        step += 1
        state.next_step = step
        if after_batch is not None:
            after_batch(step, network, qmap, state)

    return TrainResult(network=network, qmap=qmap, metrics=metrics, state=state)


def evaluate(network: nn.Network, dataset: LabeledDataset,
             batch_size: int = 512) -> float:
    """Top-1 accuracy of the quantized network on a labeled dataset."""
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    correct = 0
    for start in range(0, n, batch_size):
        x = dataset.inputs[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        logits = nn.predict_logits(network, x)
        correct += int((logits.argmax(axis=1) == y).sum())
    return correct / n
