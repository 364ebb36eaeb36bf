"""TOML ingestion for network configurations and sweep presets.

A network file mirrors :class:`NetworkConfig`::

    k = 2
    n = 6
    s = 6
    m = 10
    lambda_s = 10.0
    scheme = "memory"

    [edge_rates]
    kind = "homogeneous"      # or "heterogeneous" with matrix = [[...], ...]
    lambda_e = 100.0

An optional ``[simulation]`` table may carry ``updates`` or ``time``,
``seed`` and ``replications`` defaults.  Sweep presets use the same keys
plus a grid extension, see :func:`load_sweep`.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import (
    ConfigError,
    Heterogeneous,
    Homogeneous,
    InvalidCounts,
    NetworkConfig,
    Scheme,
    ValidatedConfig,
    validate_config,
)

PRESET_ENV = "AOI_PRESET_DIR"
PRESET_DIR = Path(__file__).parent / "presets"
NETWORK_KEYS = ("k", "n", "s", "m", "lambda_s", "lambda_e", "scheme")


class ConfigFileError(ConfigError):
    """A configuration file that cannot be read or does not follow the schema."""


def read_toml(path: os.PathLike | str) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigFileError(f"{path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigFileError(f"{path}: {exc}") from exc


def edge_rates_from_dict(doc: Any) -> Homogeneous | Heterogeneous:
    if not isinstance(doc, dict):
        raise ConfigFileError("[edge_rates] must be a table")
    kind = doc.get("kind", "homogeneous")
    if kind == "homogeneous":
        if "lambda_e" not in doc:
            raise ConfigFileError("homogeneous [edge_rates] needs lambda_e")
        return Homogeneous(_number(doc["lambda_e"], "lambda_e"))
    if kind == "heterogeneous":
        matrix = doc.get("matrix")
        if not isinstance(matrix, list) or not all(isinstance(row, list) for row in matrix):
            raise ConfigFileError("heterogeneous [edge_rates] needs matrix as a list of rows")
        if len({len(row) for row in matrix}) > 1:
            raise InvalidCounts("rate matrix rows have different lengths")
        return Heterogeneous([[_number(x, "matrix entry") for x in row] for row in matrix])
    raise ConfigFileError(f"unknown edge_rates kind {kind!r}")


def _number(x: Any, name: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigFileError(f"{name} must be a number, got {x!r}")
    return float(x)


def config_from_dict(doc: dict) -> ValidatedConfig:
    missing = [key for key in ("k", "n", "s", "m", "lambda_s") if key not in doc]
    if missing:
        raise ConfigFileError(f"missing keys: {', '.join(missing)}")
    if "edge_rates" in doc:
        edges = edge_rates_from_dict(doc["edge_rates"])
    elif "lambda_e" in doc:
        edges = Homogeneous(_number(doc["lambda_e"], "lambda_e"))
    else:
        raise ConfigFileError("need an [edge_rates] table or lambda_e")
    try:
        scheme = Scheme.parse(doc.get("scheme", "memory"))
    except ValueError as exc:
        raise ConfigFileError(str(exc)) from None
    cfg = NetworkConfig(
        doc["k"], doc["n"], doc["s"], doc["m"], _number(doc["lambda_s"], "lambda_s"), edges, scheme
    )
    return validate_config(cfg)


def load_config(path: os.PathLike | str) -> tuple[ValidatedConfig, dict]:
    """Read a network file; returns the validated config and its ``[simulation]`` table."""
    doc = read_toml(path)
    try:
        cfg = config_from_dict(doc)
    except ConfigError as exc:
        raise type(exc)(f"{path}: {exc}") from None
    return cfg, dict(doc.get("simulation", {}))


def config_hash(obj: Any) -> str:
    """Short stable digest of a JSON-serialisable configuration echo."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# --- sweeps ---------------------------------------------------------------

SWEEP_KINDS = ("comparison", "critical_rate", "subscription_cost")


@dataclass(frozen=True)
class Axis:
    names: tuple
    values: tuple


@dataclass(frozen=True)
class SweepSpec:
    """A grid of experiment points.

    ``fixed`` values may be strings naming another parameter (``s = "n"``),
    resolved after the axes are applied.  The grid is the Cartesian product
    of the axes with the first axis outermost.
    """

    name: str
    kind: str = "comparison"
    axes: tuple = ()
    fixed: dict = field(default_factory=dict)
    schemes: tuple = ("memory",)
    replications: int = 4
    updates: Optional[int] = 100_000
    time: Optional[float] = None
    seed: int = 0
    simulate: bool = True
    description: str = ""

    def __post_init__(self) -> None:
        if self.kind not in SWEEP_KINDS:
            raise ConfigFileError(f"unknown sweep kind {self.kind!r}")
        for axis in self.axes:
            if not axis.values:
                raise ConfigFileError(f"axis {axis.names} has no values")
        if self.replications < 1:
            raise ConfigFileError("replications must be >= 1")
        for scheme in self.schemes:
            Scheme.parse(scheme)

    def points(self) -> list[dict]:
        """Resolved parameter dicts in grid order."""
        out = []
        for combo in itertools.product(*(axis.values for axis in self.axes)):
            params = dict(self.fixed)
            for axis, value in zip(self.axes, combo):
                if len(axis.names) == 1:
                    params[axis.names[0]] = value
                else:
                    if not isinstance(value, (list, tuple)) or len(value) != len(axis.names):
                        raise ConfigFileError(f"axis {axis.names}: value {value!r} has the wrong shape")
                    params.update(zip(axis.names, value))
            out.append(_resolve_refs(params))
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "description": self.description,
            "schemes": list(self.schemes),
            "replications": self.replications,
            "updates": self.updates,
            "time": self.time,
            "seed": self.seed,
            "simulate": self.simulate,
            "fixed": dict(self.fixed),
            "axes": [{"names": list(a.names), "values": [_listify(v) for v in a.values]} for a in self.axes],
        }


def _listify(v: Any) -> Any:
    return list(v) if isinstance(v, tuple) else v


def _resolve_refs(params: dict) -> dict:
    out = dict(params)
    for _ in range(len(out) + 1):
        changed = False
        for key, value in out.items():
            if isinstance(value, str) and key != "scheme":
                if value not in out:
                    raise ConfigFileError(f"{key} = {value!r} names no parameter")
                target = out[value]
                if not isinstance(target, str):
                    out[key] = target
                    changed = True
        if not changed:
            break
    unresolved = [k for k, v in out.items() if isinstance(v, str) and k != "scheme"]
    if unresolved:
        raise ConfigFileError(f"circular parameter references: {unresolved}")
    return out


def sweep_from_dict(doc: dict, name: str = "") -> SweepSpec:
    axes = []
    for entry in doc.get("axes", []):
        names = entry.get("names") or ([entry["name"]] if "name" in entry else None)
        if not names or "values" not in entry:
            raise ConfigFileError("each [[axes]] entry needs names (or name) and values")
        values = tuple(tuple(v) if isinstance(v, list) else v for v in entry["values"])
        axes.append(Axis(tuple(names), values))
    schemes = doc.get("schemes", doc.get("scheme", "memory"))
    if isinstance(schemes, str):
        schemes = [schemes]
    return SweepSpec(
        name=doc.get("name", name),
        kind=doc.get("kind", "comparison"),
        axes=tuple(axes),
        fixed=dict(doc.get("fixed", {})),
        schemes=tuple(Scheme.parse(s).value for s in schemes),
        replications=int(doc.get("replications", 4)),
        updates=None if "time" in doc else int(doc.get("updates", 100_000)),
        time=float(doc["time"]) if "time" in doc else None,
        seed=int(doc.get("seed", 0)),
        simulate=bool(doc.get("simulate", True)),
        description=doc.get("description", ""),
    )


def load_sweep(path: os.PathLike | str) -> SweepSpec:
    path = Path(path)
    doc = read_toml(path)
    try:
        return sweep_from_dict(doc, path.stem)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise type(exc)(f"{path}: {exc}") from None
        raise ConfigFileError(f"{path}: {exc}") from None


def preset_dirs() -> list[Path]:
    dirs = []
    env = os.environ.get(PRESET_ENV)
    if env:
        dirs.extend(Path(p) for p in env.split(os.pathsep) if p)
    dirs.append(PRESET_DIR)
    return dirs


def available_presets() -> list[str]:
    names = set()
    for d in preset_dirs():
        if d.is_dir():
            names.update(p.stem for p in d.glob("*.toml"))
    return sorted(names)


def find_preset(name: str) -> Path:
    for d in preset_dirs():
        candidate = d / f"{name}.toml"
        if candidate.is_file():
            return candidate
    raise ConfigFileError(f"no preset named {name!r}; available: {', '.join(available_presets()) or 'none'}")


def load_preset(name: str) -> SweepSpec:
    return load_sweep(find_preset(name))
