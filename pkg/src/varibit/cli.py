"""Command-line surface.

Subcommands: ``train`` (run a config, write metrics + checkpoint), ``eval``
(accuracy of a checkpointed network on a dataset), ``report`` (cost-model
summary from a metrics file), and ``export-plots`` (per-layer CSV series).

Errors exit nonzero with a single machine-parsable ``error: ...`` line on
stderr naming the offending field or file.
"""

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import datasets, metrics_io, nn, perf
from .checkpoint import checkpoint_load, checkpoint_save
from .train import TrainerConfig, baseline_config, evaluate, train


class ConfigError(ValueError):
    """Invalid or missing configuration field; message names the field."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage: {message}")


_LAYER_BUILDERS = {
    "dense": (nn.dense, ("in_features", "out_features")),
    "conv2d": (nn.conv2d, ("in_channels", "out_channels", "kernel")),
    "relu": (nn.relu, ()),
    "maxpool": (nn.maxpool, ()),
    "flatten": (nn.flatten, ()),
}

_LAYER_OPTIONAL = {"conv2d": ("stride",), "maxpool": ("pool",)}


def parse_arch(arch: dict) -> tuple[list, tuple[int, ...]]:
    if "input_shape" not in arch:
        raise ConfigError("arch.input_shape: missing")
    if "layers" not in arch or not arch["layers"]:
        raise ConfigError("arch.layers: missing or empty")
    input_shape = tuple(int(d) for d in arch["input_shape"])
    specs = []
    for i, layer in enumerate(arch["layers"]):
        kind = layer.get("kind")
        if kind not in _LAYER_BUILDERS:
            raise ConfigError(f"arch.layers[{i}].kind: unknown kind {kind!r}")
        builder, required = _LAYER_BUILDERS[kind]
        kwargs = {}
        for fname in required:
            if fname not in layer:
                raise ConfigError(f"arch.layers[{i}].{fname}: missing")
            kwargs[fname] = int(layer[fname])
        for fname in _LAYER_OPTIONAL.get(kind, ()):
            if fname in layer:
                kwargs[fname] = int(layer[fname])
        try:
            specs.append(builder(**kwargs))
        except ValueError as exc:
            raise ConfigError(f"arch.layers[{i}]: {exc}") from exc
    try:
        nn.infer_shapes(nn.name_layers(specs), input_shape)
    except ValueError as exc:
        raise ConfigError(f"arch: {exc}") from exc
    return specs, input_shape


def parse_trainer(trainer: dict) -> TrainerConfig:
    try:
        config = TrainerConfig.from_dict(trainer)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"trainer: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"trainer.initial_format: {exc}") from exc
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(f"trainer: {exc}") from exc
    return config


def load_dataset(source: dict) -> datasets.LabeledDataset:
    kind = source.get("kind")
    if kind == "blobs":
        for fname in ("classes", "samples", "separation", "seed"):
            if fname not in source:
                raise ConfigError(f"data.{fname}: missing")
        return datasets.generate_blobs(
            int(source["classes"]), int(source["samples"]),
            float(source["separation"]), int(source["seed"]),
            dim=int(source.get("dim", 2)))
    if kind == "digits":
        for fname in ("samples", "seed"):
            if fname not in source:
                raise ConfigError(f"data.{fname}: missing")
        return datasets.digits_dataset(
            int(source["samples"]), int(source["seed"]),
            noise=float(source.get("noise", 0.3)),
            classes=int(source.get("classes", 10)))
    if kind == "idx":
        for fname in ("images", "labels"):
            if fname not in source:
                raise ConfigError(f"data.{fname}: missing")
        return datasets.load_idx(source["images"], source["labels"])
    if kind == "csv":
        if "path" not in source:
            raise ConfigError("data.path: missing")
        return datasets.load_csv(source["path"])
    raise ConfigError(f"data.kind: unknown kind {kind!r}")


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as exc:
        raise ConfigError(f"config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from exc


@dataclass
class RunReport:
    quantized_accuracy: Optional[float]
    baseline_accuracy: Optional[float]
    accuracy_delta: Optional[float]
    speedup: float
    memory_footprint_ratio: float
    model_size_ratio: float
    config: dict

    def to_dict(self) -> dict:
        return {
            "quantized_accuracy": self.quantized_accuracy,
            "baseline_accuracy": self.baseline_accuracy,
            "accuracy_delta": self.accuracy_delta,
            "speedup": self.speedup,
            "memory_footprint_ratio": self.memory_footprint_ratio,
            "model_size_ratio": self.model_size_ratio,
            "config": self.config,
        }


def build_report(events, specs, input_shape, batch_size: int, config_echo: dict,
                 quantized_accuracy=None, baseline_accuracy=None) -> RunReport:
    if not events:
        raise ValueError("metrics stream is empty")
    profiles = perf.network_profiles(specs, input_shape)
    timeline = perf.timeline_from_metrics(events)
    batches = events[-1].batch + 1
    quant_cost = perf.training_cost(timeline, profiles, batches, batch_size)
    base_cost = perf.training_cost(perf.uniform_timeline(profiles, perf.FULL_WIDTH),
                                   profiles, batches, batch_size)
    from .fixed_point import FixedPointFormat
    final_formats = {l.name: FixedPointFormat(l.wl, l.fl)
                     for l in events[-1].layers}
    delta = None
    if quantized_accuracy is not None and baseline_accuracy is not None:
        delta = quantized_accuracy - baseline_accuracy
    return RunReport(
        quantized_accuracy=quantized_accuracy,
        baseline_accuracy=baseline_accuracy,
        accuracy_delta=delta,
        speedup=perf.speedup(quant_cost, base_cost),
        memory_footprint_ratio=perf.memory_footprint_ratio(timeline, profiles, batches),
        model_size_ratio=perf.model_size_ratio(final_formats, profiles),
        config=config_echo,
    )


def _cmd_train(args) -> int:
    config_obj = load_config(args.config)
    for section in ("arch", "data", "trainer"):
        if section not in config_obj:
            raise ConfigError(f"{section}: missing section")
    specs, input_shape = parse_arch(config_obj["arch"])
    config = parse_trainer(config_obj["trainer"])
    if args.baseline:
        config = baseline_config(config)
    dataset = load_dataset(config_obj["data"])

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps({**config_obj, "trainer": config.to_dict()}, indent=2) + "\n",
        encoding="utf-8")
    with metrics_io.MetricsWriter(out_dir / "metrics.jsonl") as writer:
        result = train(config, dataset, specs, on_event=writer.write)
    checkpoint_save(result.network, result.qmap, result.state,
                    out_dir / "checkpoint.mrvn")
    accuracy = evaluate(result.network, dataset)
    print(json.dumps({"batches": len(result.metrics),
                      "train_accuracy": accuracy}))
    return 0


def _cmd_eval(args) -> int:
    ckpt = checkpoint_load(args.checkpoint)
    data_obj = load_config(args.data)
    dataset = load_dataset(data_obj.get("data", data_obj))
    print(evaluate(ckpt.network, dataset))
    return 0


def _cmd_report(args) -> int:
    events = metrics_io.parse_metrics(args.metrics)
    config_obj = load_config(args.arch)
    if "arch" not in config_obj:
        raise ConfigError("arch: missing section")
    specs, input_shape = parse_arch(config_obj["arch"])
    batch_size = int(config_obj.get("trainer", {}).get("batch_size", 1))
    report = build_report(events, specs, input_shape, batch_size, config_obj,
                          quantized_accuracy=args.quant_accuracy,
                          baseline_accuracy=args.baseline_accuracy)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_export_plots(args) -> int:
    events = metrics_io.parse_metrics(args.metrics)
    written = metrics_io.export_plot_series(events, args.out)
    print(json.dumps({"files": [str(p) for p in sorted(written)]}))
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="varibit",
                     description="Quantized training with per-layer dynamic "
                                 "fixed-point precision")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", action="store_true",
                   help="run the float32-pinned baseline variant")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True,
                   help="JSON file with a data source (or a full config)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="cost-model report from a metrics file")
    p.add_argument("--metrics", required=True)
    p.add_argument("--arch", required=True,
                   help="config JSON holding the architecture")
    p.add_argument("--quant-accuracy", type=float, default=None)
    p.add_argument("--baseline-accuracy", type=float, default=None)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("export-plots", help="per-layer CSV series from metrics")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_plots)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


cli = main

if __name__ == "__main__":
    sys.exit(main())
