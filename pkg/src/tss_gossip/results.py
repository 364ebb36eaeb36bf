"""Result envelopes and byte-stable CSV/JSON emission."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from . import __version__
from .config_io import config_hash

TOOL_NAME = "tss-gossip"

COMPARISON_COLUMNS = (
    "scheme",
    "k",
    "n",
    "s",
    "m",
    "lambda_s",
    "lambda_e",
    "node_class",
    "analytic_value",
    "lower_bound",
    "upper_bound",
    "sim_mean",
    "sim_ci_half",
    "rel_error",
    "seed",
    "horizon_updates",
)

FORMATS = ("csv", "json")


@dataclass
class ResultEnvelope:
    """Everything needed to reproduce and interpret one command's output.

    ``config`` echoes the fully resolved input; rerunning the command with it
    gives the same payload.  ``timing`` is only written when requested, so by
    default repeated runs produce identical bytes.
    """

    command: str
    config: dict
    seeds: Any
    rows: list = field(default_factory=list)
    columns: Optional[Sequence[str]] = None
    scalar: Any = None
    timing: Optional[dict] = None
    version: str = __version__

    def metadata(self, include_timing: bool = False) -> dict:
        meta = {
            "tool": TOOL_NAME,
            "version": self.version,
            "command": self.command,
            "seed": self.seeds,
            "config_hash": config_hash(self.config),
            "config": self.config,
        }
        if include_timing and self.timing is not None:
            meta["timing"] = self.timing
        return meta

    def resolved_columns(self) -> list:
        if self.columns is not None:
            return list(self.columns)
        if self.rows:
            return list(self.rows[0].keys())
        return ["value"]

    def records(self) -> list:
        if self.rows:
            return self.rows
        if self.scalar is not None:
            return [{"value": self.scalar}]
        return []


def format_number(x: Any) -> str:
    """CSV cell text: 12 significant digits for floats, empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".12g")
    return str(x)


def _json_value(x: Any) -> Any:
    # strict JSON has no NaN/Infinity
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    return x


def emit_results(env: ResultEnvelope, fmt: str = "csv", include_timing: bool = False) -> bytes:
    """Serialise an envelope; identical envelopes always give identical bytes."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    meta = env.metadata(include_timing)
    columns = env.resolved_columns()
    records = env.records()
    if fmt == "json":
        doc = {
            "metadata": _json_value(meta),
            "columns": columns,
            "rows": [{c: _json_value(r.get(c)) for c in columns} for r in records],
        }
        return (json.dumps(doc, indent=2, allow_nan=False) + "\n").encode()

    buf = io.StringIO()
    for key, value in meta.items():
        text = value if isinstance(value, str) else json.dumps(_json_value(value), sort_keys=True, separators=(",", ":"))
        buf.write(f"# {key}: {text}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in records:
        writer.writerow([format_number(r.get(c)) for c in columns])
    return buf.getvalue().encode()


def parse_csv(data: bytes) -> tuple[dict, list]:
    """Read back an emitted CSV: (metadata lines as strings, rows as dicts of strings)."""
    text = data.decode()
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("# ") and not body:
            key, _, value = line[2:].partition(": ")
            meta[key] = value
        else:
            body.append(line)
    return meta, list(csv.DictReader(body))


def write_output(data: bytes, path: Optional[str]) -> None:
    import sys

    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
