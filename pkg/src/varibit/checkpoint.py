"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic "MRVN" | u32 version | payload | u32 crc32(payload)

The payload holds the trainer counters, the quantization mapping (formats,
lookbacks, resolutions, gradient histories, loss history, strategy), the
architecture, and both weight copies. Tensors are stored as
``u32 rank | u32 dims... | float64 data``; strings as ``u32 length | utf-8``.
Because every random draw in training is derived from (seed, counters), the
stored counters are the complete RNG state and a resumed run replays the
uninterrupted run exactly.
"""

import io
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .fixed_point import FixedPointFormat, QuantizedTensor
from .nn import LayerSpec, Network
from .stats import GradientHistory
from .switching import LayerQuantState, QuantizationMapping, Strategy
from .train import TrainerState

MAGIC = b"MRVN"
VERSION = 1

_STRATEGY_CODES = {Strategy.MIN: 0, Strategy.MEAN: 1, Strategy.MAX: 2}
_STRATEGY_FROM_CODE = {v: k for k, v in _STRATEGY_CODES.items()}

_SPEC_FIELDS = ("in_features", "out_features", "in_channels", "out_channels",
                "kernel", "stride", "pool")


class CheckpointError(ValueError):
    """Unreadable checkpoint: wrong magic/version, truncation, or corruption."""


@dataclass
class Checkpoint:
    network: Network
    qmap: QuantizationMapping
    state: TrainerState


def _w_u32(buf, value: int) -> None:
    if not 0 <= value < 2 ** 32:
        raise ValueError(f"value {value} does not fit in u32")
    buf.write(struct.pack("<I", value))


def _w_u64(buf, value: int) -> None:
    buf.write(struct.pack("<Q", value & (2 ** 64 - 1)))


def _w_f64(buf, value: float) -> None:
    buf.write(struct.pack("<d", value))


def _w_str(buf, value: str) -> None:
    raw = value.encode("utf-8")
    _w_u32(buf, len(raw))
    buf.write(raw)


def _w_tensor(buf, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    _w_u32(buf, arr.ndim)
    for d in arr.shape:
        _w_u32(buf, d)
    buf.write(arr.astype("<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self._f = io.BytesIO(data)

    def exact(self, count: int) -> bytes:
        data = self._f.read(count)
        if len(data) != count:
            raise CheckpointError("truncated checkpoint")
        return data

    def u32(self) -> int:
        return struct.unpack("<I", self.exact(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.exact(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.exact(8))[0]

    def str_(self) -> str:
        return self.exact(self.u32()).decode("utf-8")

    def tensor(self) -> np.ndarray:
        rank = self.u32()
        shape = tuple(self.u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        raw = self.exact(8 * count)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

    def done(self) -> bool:
        return not self._f.read(1)


def checkpoint_save(network: Network, qmap: QuantizationMapping,
                    state: TrainerState, path) -> None:
    buf = io.BytesIO()
    _w_u64(buf, state.seed)
    _w_u32(buf, state.next_step)
    _w_u32(buf, qmap.step)
    _w_u32(buf, _STRATEGY_CODES[qmap.strategy])
    _w_u32(buf, qmap.lb_bounds[0])
    _w_u32(buf, qmap.lb_bounds[1])
    _w_u32(buf, qmap.r_bounds[0])
    _w_u32(buf, qmap.r_bounds[1])
    _w_f64(buf, qmap.gamma)
    _w_f64(buf, qmap.epsilon_kl)
    _w_u64(buf, qmap.seed)
    losses = list(qmap.loss_history)
    _w_u32(buf, len(losses))
    for x in losses:
        _w_f64(buf, x)

    _w_u32(buf, len(network.input_shape))
    for d in network.input_shape:
        _w_u32(buf, d)
    _w_u32(buf, len(network.specs))
    for spec in network.specs:
        _w_str(buf, spec.kind)
        _w_str(buf, spec.name)
        for fname in _SPEC_FIELDS:
            _w_u32(buf, getattr(spec, fname))

    names = network.trainable_names()
    _w_u32(buf, len(names))
    for name in names:
        layer = qmap.layers[name]
        _w_str(buf, name)
        _w_u32(buf, layer.format.word_length)
        _w_u32(buf, layer.format.frac_length)
        _w_u32(buf, layer.lookback)
        _w_u32(buf, layer.resolution)
        _w_u32(buf, layer.grads.capacity)
        _w_u32(buf, len(layer.grads))
        for g in layer.grads.entries:
            _w_tensor(buf, g)
        for pname in ("w", "b"):
            _w_tensor(buf, network.master[name][pname])
        for pname in ("w", "b"):
            _w_tensor(buf, network.quant[name][pname].values)

    payload = buf.getvalue()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))


def checkpoint_load(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12:
        raise CheckpointError("truncated checkpoint")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    payload, stored_crc = blob[8:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(payload) != stored_crc:
        raise CheckpointError("checksum mismatch: corrupt checkpoint")

    r = _Reader(payload)
    seed = r.u64()
    next_step = r.u32()
    qmap_step = r.u32()
    strategy = _STRATEGY_FROM_CODE.get(r.u32())
    if strategy is None:
        raise CheckpointError("unknown strategy code")
    lb_bounds = (r.u32(), r.u32())
    r_bounds = (r.u32(), r.u32())
    gamma = r.f64()
    epsilon_kl = r.f64()
    qmap_seed = r.u64()
    losses = [r.f64() for _ in range(r.u32())]

    input_shape = tuple(r.u32() for _ in range(r.u32()))
    specs = []
    for _ in range(r.u32()):
        kind = r.str_()
        name = r.str_()
        fields = {fname: r.u32() for fname in _SPEC_FIELDS}
        specs.append(LayerSpec(kind=kind, name=name, **fields))

    layers: dict[str, LayerQuantState] = {}
    master: dict[str, dict[str, np.ndarray]] = {}
    quant: dict[str, dict[str, QuantizedTensor]] = {}
    for _ in range(r.u32()):
        name = r.str_()
        fmt = FixedPointFormat(r.u32(), r.u32())
        lookback = r.u32()
        resolution = r.u32()
        capacity = r.u32()
        history = GradientHistory(capacity=capacity)
        for _ in range(r.u32()):
            history.append(r.tensor())
        master[name] = {"w": r.tensor(), "b": r.tensor()}
        quant[name] = {"w": QuantizedTensor(r.tensor(), fmt),
                       "b": QuantizedTensor(r.tensor(), fmt)}
        layers[name] = LayerQuantState(format=fmt, lookback=lookback,
                                       resolution=resolution, grads=history)
    if not r.done():
        raise CheckpointError("trailing data after checkpoint payload")

    network = Network(specs=specs, input_shape=input_shape, master=master,
                      quant=quant)
    qmap = QuantizationMapping(layers=layers, strategy=strategy,
                               lb_bounds=lb_bounds, r_bounds=r_bounds,
                               gamma=gamma, epsilon_kl=epsilon_kl,
                               seed=qmap_seed, step=qmap_step,
                               loss_history=losses)
    return Checkpoint(network=network, qmap=qmap,
                      state=TrainerState(seed=seed, next_step=next_step))
