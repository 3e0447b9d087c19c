"""Minimal differentiable network with explicit backprop.

Five layer kinds (dense, conv2d, relu, maxpool, flatten), softmax
cross-entropy loss, fan-in truncated-normal initialization, and an L1+L2
regularized SGD update. The forward pass always runs on the quantized shadow
weights; the float master weights receive the updates.

Shapes are channels-last: dense inputs are ``(batch, features)``, image
inputs ``(batch, height, width, channels)``.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fixed_point import FixedPointFormat, QuantizedTensor


class StaleCacheError(RuntimeError):
    """The network was requantized after the cache was built."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    pool: int = 2
    name: str = ""


def dense(in_features: int, out_features: int) -> LayerSpec:
    if in_features < 1 or out_features < 1:
        raise ValueError("dense dimensions must be positive")
    return LayerSpec("dense", in_features=in_features, out_features=out_features)


def conv2d(in_channels: int, out_channels: int, kernel: int, stride: int = 1) -> LayerSpec:
    if min(in_channels, out_channels, kernel, stride) < 1:
        raise ValueError("conv2d dimensions must be positive")
    return LayerSpec("conv2d", in_channels=in_channels, out_channels=out_channels,
                     kernel=kernel, stride=stride)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(pool: int = 2) -> LayerSpec:
    if pool < 1:
        raise ValueError("pool size must be positive")
    return LayerSpec("maxpool", pool=pool)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


TRAINABLE_KINDS = ("dense", "conv2d")


def output_shape(spec: LayerSpec, input_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape produced by one layer for a single sample; raises on mismatch."""
    if spec.kind == "dense":
        if input_shape != (spec.in_features,):
            raise ValueError(f"dense expects ({spec.in_features},), got {input_shape}")
        return (spec.out_features,)
    if spec.kind == "conv2d":
        if len(input_shape) != 3 or input_shape[2] != spec.in_channels:
            raise ValueError(f"conv2d expects (H, W, {spec.in_channels}), got {input_shape}")
        h, w, _ = input_shape
        if spec.kernel > h or spec.kernel > w:
            raise ValueError("conv kernel larger than input")
        oh = (h - spec.kernel) // spec.stride + 1
        ow = (w - spec.kernel) // spec.stride + 1
        return (oh, ow, spec.out_channels)
    if spec.kind == "relu":
        return input_shape
    if spec.kind == "maxpool":
        if len(input_shape) != 3:
            raise ValueError(f"maxpool expects (H, W, C), got {input_shape}")
        h, w, c = input_shape
        if h % spec.pool or w % spec.pool:
            raise ValueError("maxpool needs spatial dims divisible by pool size")
        return (h // spec.pool, w // spec.pool, c)
    if spec.kind == "flatten":
        return (int(np.prod(input_shape)),)
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def infer_shapes(specs, input_shape) -> list[tuple[int, ...]]:
    """Per-layer output shapes for the whole stack; validates the chain."""
    shapes = []
    shape = tuple(input_shape)
    for spec in specs:
        shape = output_shape(spec, shape)
        shapes.append(shape)
    return shapes


def name_layers(specs) -> list[LayerSpec]:
    """Assign stable default names (kind + position) where missing."""
    named = []
    for i, spec in enumerate(specs):
        named.append(spec if spec.name else replace(spec, name=f"{spec.kind}{i}"))
    return named


def weight_shape(spec: LayerSpec) -> tuple[int, ...]:
    if spec.kind == "dense":
        return (spec.in_features, spec.out_features)
    if spec.kind == "conv2d":
        return (spec.kernel, spec.kernel, spec.in_channels, spec.out_channels)
    raise ValueError(f"{spec.kind} has no weights")


def bias_shape(spec: LayerSpec) -> tuple[int, ...]:
    if spec.kind == "dense":
        return (spec.out_features,)
    if spec.kind == "conv2d":
        return (spec.out_channels,)
    raise ValueError(f"{spec.kind} has no bias")


def fan_in(shape) -> int:
    if len(shape) == 2:
        return shape[0]
    if len(shape) == 4:
        return shape[0] * shape[1] * shape[2]
    if len(shape) == 1:
        return shape[0]
    raise ValueError(f"no fan-in convention for shape {shape}")


def tnvs_init(shape, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Fan-in variance-scaled truncated normal draw.

    Samples N(0, scale/fan_in) truncated at two standard deviations by
    rejection, so every value lies in [-2*sigma, 2*sigma].
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    n = fan_in(tuple(shape))
    if n < 1:
        raise ValueError("fan-in must be >= 1")
    sigma = math.sqrt(scale / n)
    size = int(np.prod(shape))
    z = rng.standard_normal(size)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (sigma * z).reshape(shape)


@dataclass
class Network:
    """Layer stack with paired float master and quantized shadow parameters."""

    specs: list[LayerSpec]
    input_shape: tuple[int, ...]
    master: dict[str, dict[str, np.ndarray]]
    quant: dict[str, dict[str, QuantizedTensor]] = field(default_factory=dict)
    version: int = 0

    def trainable_names(self) -> list[str]:
        return [s.name for s in self.specs if s.kind in TRAINABLE_KINDS]

    def spec_by_name(self, name: str) -> LayerSpec:
        for spec in self.specs:
            if spec.name == name:
                return spec
        raise KeyError(name)


def build_network(specs, input_shape, tnvs_scale: float, seed: int) -> Network:
    """Master-initialized network; quantized shadows are installed by the
    trainer's first requantization pass."""
    from .rng import substream

    named = name_layers(specs)
    infer_shapes(named, input_shape)
    master = {}
    for spec in named:
        if spec.kind not in TRAINABLE_KINDS:
            continue
        w = tnvs_init(weight_shape(spec), tnvs_scale,
                      substream(seed, spec.name, "w", "init"))
        b = np.zeros(bias_shape(spec))
        master[spec.name] = {"w": w, "b": b}
    return Network(specs=named, input_shape=tuple(input_shape), master=master)


def _prepare_batch(network: Network, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 0 or x.shape[0] == 0:
        raise ValueError("empty batch")
    per_sample = int(np.prod(x.shape[1:]))
    expected = int(np.prod(network.input_shape))
    if per_sample != expected:
        raise ValueError(
            f"batch samples have {per_sample} values, network expects "
            f"{expected} ({network.input_shape})")
    return x.reshape((x.shape[0],) + network.input_shape)


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    # (B, OH, OW, C, k, k) -> (B, OH, OW, k, k, C)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def _col2im(gcols: np.ndarray, x_shape, k: int, stride: int) -> np.ndarray:
    b, h, w, c = x_shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    g6 = gcols.reshape(b, oh, ow, k, k, c)
    gx = np.zeros(x_shape)
    for p in range(k):
        for q in range(k):
            gx[:, p:p + oh * stride:stride, q:q + ow * stride:stride, :] += g6[:, :, :, p, q, :]
    return gx


def dense_forward(x, w, b):
    return x @ w + b


def dense_backward(x, w, g):
    return g @ w.T, x.T @ g, g.sum(axis=0)


def conv2d_forward(x, w, b, stride):
    k = w.shape[0]
    cols = _im2col(x, k, stride)
    b_, oh, ow = cols.shape[:3]
    flat = cols.reshape(b_ * oh * ow, -1)
    out = flat @ w.reshape(-1, w.shape[3]) + b
    return out.reshape(b_, oh, ow, w.shape[3]), cols


def conv2d_backward(x, cols, w, g, stride):
    k = w.shape[0]
    b_, oh, ow, oc = g.shape
    gf = g.reshape(b_ * oh * ow, oc)
    flat = cols.reshape(b_ * oh * ow, -1)
    gw = (flat.T @ gf).reshape(w.shape)
    gb = gf.sum(axis=0)
    gcols = gf @ w.reshape(-1, oc).T
    gx = _col2im(gcols, x.shape, k, stride)
    return gx, gw, gb


def maxpool_forward(x, p):
    b, h, w, c = x.shape
    oh, ow = h // p, w // p
    win = x.reshape(b, oh, p, ow, p, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, oh, ow, c, p * p)
    idx = win.argmax(axis=4)
    out = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
    return out, idx


def maxpool_backward(g, x_shape, idx, p):
    b, h, w, c = x_shape
    oh, ow = h // p, w // p
    gwin = np.zeros((b, oh, ow, c, p * p))
    np.put_along_axis(gwin, idx[..., None], g[..., None], axis=4)
    return gwin.reshape(b, oh, ow, c, p, p).transpose(0, 1, 4, 2, 5, 3).reshape(x_shape)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its logits gradient."""
    b = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(b)
    loss = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad / b


def forward(network: Network, inputs, labels):
    """Quantized forward pass: returns ``(cache, logits, loss)``."""
    x = _prepare_batch(network, inputs)
    labels = np.asarray(labels)
    if labels.shape[0] != x.shape[0]:
        raise ValueError("labels/batch size mismatch")
    saved = []
    for spec in network.specs:
        if spec.kind == "dense":
            params = network.quant[spec.name]
            saved.append(("dense", spec, x, None))
            x = dense_forward(x, params["w"].values, params["b"].values)
        elif spec.kind == "conv2d":
            params = network.quant[spec.name]
            out, cols = conv2d_forward(x, params["w"].values, params["b"].values,
                                       spec.stride)
            saved.append(("conv2d", spec, x, cols))
            x = out
        elif spec.kind == "relu":
            saved.append(("relu", spec, x, None))
            x = np.maximum(x, 0.0)
        elif spec.kind == "maxpool":
            out, idx = maxpool_forward(x, spec.pool)
            saved.append(("maxpool", spec, x, idx))
            x = out
        elif spec.kind == "flatten":
            saved.append(("flatten", spec, x, None))
            x = x.reshape(x.shape[0], -1)
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
    logits = x
    loss, dlogits = softmax_cross_entropy(logits, labels)
    cache = {"saved": saved, "dlogits": dlogits, "version": network.version}
    return cache, logits, loss


def predict_logits(network: Network, inputs) -> np.ndarray:
    """Forward pass without loss bookkeeping (quantized weights, no rng)."""
    x = _prepare_batch(network, inputs)
    dummy = np.zeros(x.shape[0], dtype=np.int64)
    _, logits, _ = forward(network, x, dummy)
    return logits


def backward(network: Network, cache, labels) -> dict[str, dict[str, np.ndarray]]:
    """Gradients of the batch loss w.r.t. the quantized parameters."""
    if cache["version"] != network.version:
        raise StaleCacheError("network was requantized after this cache was built")
    g = cache["dlogits"]
    grads: dict[str, dict[str, np.ndarray]] = {}
    for kind, spec, x, extra in reversed(cache["saved"]):
        if kind == "dense":
            w = network.quant[spec.name]["w"].values
            g, gw, gb = dense_backward(x, w, g)
            grads[spec.name] = {"w": gw, "b": gb}
        elif kind == "conv2d":
            w = network.quant[spec.name]["w"].values
            g, gw, gb = conv2d_backward(x, extra, w, g, spec.stride)
            grads[spec.name] = {"w": gw, "b": gb}
        elif kind == "relu":
            g = g * (x > 0.0)
        elif kind == "maxpool":
            g = maxpool_backward(g, x.shape, extra, spec.pool)
        elif kind == "flatten":
            g = g.reshape(x.shape)
    return grads


def _reg_grad(w: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    return alpha * np.sign(w) + beta * w


def regularized_loss(loss: float, master: dict, alpha: float, beta: float):
    """L1+L2-regularized objective and the weight-gradient contribution.

    Only weight tensors are regularized; biases are left alone.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("regularization strengths must be non-negative")
    total = float(loss)
    reg_grads = {}
    for name, params in master.items():
        w = params["w"]
        total += alpha * float(np.abs(w).sum()) + 0.5 * beta * float(np.square(w).sum())
        reg_grads[name] = _reg_grad(w, alpha, beta)
    return total, reg_grads


def sgd_step(master: dict, grads: dict, lr: float,
             alpha: float = 0.0, beta: float = 0.0) -> dict:
    """In-place SGD update of the float master: W <- W - lr*(G + reg)."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for name, params in master.items():
        g = grads[name]
        if g["w"].shape != params["w"].shape or g["b"].shape != params["b"].shape:
            raise ValueError(f"gradient shape mismatch for layer {name!r}")
        params["w"] = params["w"] - lr * (g["w"] + _reg_grad(params["w"], alpha, beta))
        params["b"] = params["b"] - lr * g["b"]
    return master
