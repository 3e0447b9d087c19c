"""Metrics serialization: JSONL event stream and per-layer CSV plot series.

Each metrics line is one self-contained JSON object with a stable field
order, so the file is append-only and tolerates a truncated final line after
a crash.
"""

import json
from pathlib import Path

from .train import LayerMetrics, MetricsEvent


def event_to_json(event: MetricsEvent) -> str:
    obj = {
        "epoch": event.epoch,
        "batch": event.batch,
        "loss": event.loss,
        "strategy": event.strategy,
        "layers": [
            {"name": l.name, "wl": l.wl, "fl": l.fl, "lb": l.lb, "res": l.res}
            for l in event.layers
        ],
    }
    return json.dumps(obj, separators=(",", ":"))


def event_from_json(line: str) -> MetricsEvent:
    obj = json.loads(line)
    layers = tuple(
        LayerMetrics(name=l["name"], wl=l["wl"], fl=l["fl"], lb=l["lb"],
                     res=l["res"])
        for l in obj["layers"]
    )
    return MetricsEvent(epoch=obj["epoch"], batch=obj["batch"],
                        loss=obj["loss"], strategy=obj["strategy"],
                        layers=layers)


class MetricsWriter:
    """Line-buffered JSONL writer; one flushed line per event."""

    def __init__(self, path):
        self._f = open(path, "w", encoding="utf-8")

    def write(self, event: MetricsEvent) -> None:
        self._f.write(event_to_json(event) + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_metrics(events, path) -> None:
    with MetricsWriter(path) as writer:
        for event in events:
            writer.write(event)


def parse_metrics(path) -> list[MetricsEvent]:
    """Parse a JSONL metrics file; a partial (crash-truncated) last line is
    ignored, a malformed interior line is an error."""
    events = []
    with open(path, "r", encoding="utf-8") as f:
        lines = f.readlines()
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            events.append(event_from_json(stripped))
        except (json.JSONDecodeError, KeyError):
            if i == len(lines) - 1:
                break
            raise
    return events


def export_plot_series(events, out_dir) -> list[Path]:
    """Per-layer ``(batch, word length)`` and ``(batch, fractional length)``
    CSV series; one row per metrics event, header ``batch,value``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: dict[tuple[str, str], list[str]] = {}
    for event in events:
        for layer in event.layers:
            rows.setdefault((layer.name, "wl"), []).append(f"{event.batch},{layer.wl}")
            rows.setdefault((layer.name, "fl"), []).append(f"{event.batch},{layer.fl}")
    written = []
    for (name, field), lines in rows.items():
        path = out_dir / f"{name}_{field}.csv"
        path.write_text("batch,value\n" + "\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written
