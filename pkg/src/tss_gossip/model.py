"""Network configuration, validation and classification.

Receivers are labelled ``0..m-1`` with subscribers first, so node ``j`` is a
subscriber iff ``j < s``.  ``k`` always counts the *additional* keys a node
needs beyond one; the decode threshold ``k + 1`` is derived on demand.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np


class ConfigError(ValueError):
    """Base class for rejected network configurations."""


class InvalidCounts(ConfigError):
    pass


class InfeasibleTopology(ConfigError):
    pass


class NonpositiveRate(ConfigError):
    pass


class Scheme(enum.Enum):
    MEMORY = "memory"
    MEMORYLESS = "memoryless"

    @classmethod
    def parse(cls, value: Union[str, "Scheme"]) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown scheme {value!r}; expected 'memory' or 'memoryless'") from None


class NetworkType(enum.Enum):
    FULL_SUBSCRIPTION = "full_subscription"
    TOTAL_KEY_SUBSCRIPTION = "total_key_subscription"
    PARTIAL_KEY_SUBSCRIPTION = "partial_key_subscription"


class NodeClass(enum.Enum):
    SUBSCRIBER = "subscriber"
    NONSUBSCRIBER = "nonsubscriber"

    @classmethod
    def parse(cls, value: Union[str, "NodeClass"]) -> "NodeClass":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown node class {value!r}") from None


@dataclass(frozen=True)
class KeyToken:
    """One of the ``n`` keys issued for a single source update."""

    version: int
    key_id: int


@dataclass(frozen=True)
class Homogeneous:
    """Fully connected receiver graph, each directed edge at ``lambda_e / (m - 1)``."""

    lambda_e: float


@dataclass(frozen=True, eq=False)
class Heterogeneous:
    """Explicit directed rate matrix; ``rates[i, j]`` is the rate of edge ``i -> j``."""

    rates: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.rates, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "rates", arr)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Heterogeneous) and np.array_equal(self.rates, other.rates)

    def __hash__(self) -> int:
        return hash(self.rates.tobytes())


EdgeRates = Union[Homogeneous, Heterogeneous]


@dataclass(frozen=True)
class NetworkConfig:
    k: int
    n: int
    s: int
    m: int
    lambda_s: float
    edge_rates: EdgeRates
    scheme: Scheme = Scheme.MEMORY

    @property
    def threshold(self) -> int:
        return self.k + 1

    def node_class(self, j: int) -> NodeClass:
        return NodeClass.SUBSCRIBER if j < self.s else NodeClass.NONSUBSCRIBER

    def rate_matrix(self) -> np.ndarray:
        """Dense ``m x m`` matrix of directed receiver edge rates."""
        if isinstance(self.edge_rates, Homogeneous):
            mat = np.full((self.m, self.m), self.edge_rates.lambda_e / (self.m - 1))
            np.fill_diagonal(mat, 0.0)
            return mat
        return np.array(self.edge_rates.rates, dtype=float)

    def to_dict(self) -> dict:
        if isinstance(self.edge_rates, Homogeneous):
            edges: dict = {"kind": "homogeneous", "lambda_e": float(self.edge_rates.lambda_e)}
        else:
            edges = {"kind": "heterogeneous", "matrix": self.edge_rates.rates.tolist()}
        return {
            "k": self.k,
            "n": self.n,
            "s": self.s,
            "m": self.m,
            "lambda_s": float(self.lambda_s),
            "scheme": self.scheme.value,
            "edge_rates": edges,
        }


@dataclass(frozen=True)
class ValidatedConfig(NetworkConfig):
    """A :class:`NetworkConfig` that passed :func:`validate_config`.

    Only :func:`validate_config` should construct these.
    """

    network_type: NetworkType = field(default=NetworkType.FULL_SUBSCRIPTION)

    @property
    def lambda_e(self) -> float:
        if not isinstance(self.edge_rates, Homogeneous):
            raise TypeError("lambda_e is only defined for homogeneous edge rates")
        return self.edge_rates.lambda_e


def _positive_finite(x: float) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) and math.isfinite(x) and x > 0


def _is_int(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def validate_config(cfg: NetworkConfig) -> ValidatedConfig:
    """Check every configuration invariant and return a validated copy.

    Raises
    ------
    InvalidCounts
        Non-integer or out-of-order counts (``k < n``, ``s <= n <= m``).
    NonpositiveRate
        A nonpositive or non-finite source/edge rate, or a bad rate matrix.
    InfeasibleTopology
        Some receiver has fewer than ``k + 1`` incoming receiver edges.
    """
    k, n, s, m = cfg.k, cfg.n, cfg.s, cfg.m
    for name, value in (("k", k), ("n", n), ("s", s), ("m", m)):
        if not _is_int(value):
            raise InvalidCounts(f"{name} must be an integer, got {value!r}")
    k, n, s, m = int(k), int(n), int(s), int(m)
    if k < 0 or n < 1 or m < 1 or s < 0:
        raise InvalidCounts(f"counts out of range: k={k}, n={n}, s={s}, m={m}")
    if k >= n:
        raise InvalidCounts(f"need k < n, got k={k}, n={n}")
    if s > n:
        raise InvalidCounts(f"need s <= n, got s={s}, n={n}")
    if n > m:
        raise InvalidCounts(f"need n <= m, got n={n}, m={m}")
    if n == m and s < n:
        # not one of the three network types; every receiver would get a key anyway
        raise InvalidCounts(f"n = m = {m} requires s = n (full subscription), got s={s}")
    if m < 2:
        raise InvalidCounts("need at least two receivers to gossip")
    if not _positive_finite(cfg.lambda_s):
        raise NonpositiveRate(f"lambda_s must be positive and finite, got {cfg.lambda_s!r}")

    edges = cfg.edge_rates
    if isinstance(edges, Homogeneous):
        if not _positive_finite(edges.lambda_e):
            raise NonpositiveRate(f"lambda_e must be positive and finite, got {edges.lambda_e!r}")
        min_in_degree = m - 1
    elif isinstance(edges, Heterogeneous):
        mat = edges.rates
        if mat.shape != (m, m):
            raise InvalidCounts(f"rate matrix must be {m}x{m}, got {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise NonpositiveRate("rate matrix has non-finite entries")
        if np.any(mat < 0):
            raise NonpositiveRate("rate matrix has negative entries")
        if np.any(np.diag(mat) != 0):
            raise NonpositiveRate("rate matrix must have a zero diagonal")
        min_in_degree = int((mat > 0).sum(axis=0).min())
    else:
        raise TypeError(f"unsupported edge rate description {type(edges).__name__}")
    if min_in_degree < k + 1:
        raise InfeasibleTopology(
            f"smallest receiver in-degree is {min_in_degree}, needs at least k+1 = {k + 1}"
        )

    base = NetworkConfig(k, n, s, m, float(cfg.lambda_s), edges, Scheme.parse(cfg.scheme))
    return ValidatedConfig(**_fields(base), network_type=_network_type(n, s, m))


def _fields(cfg: NetworkConfig) -> dict:
    return {
        "k": cfg.k,
        "n": cfg.n,
        "s": cfg.s,
        "m": cfg.m,
        "lambda_s": cfg.lambda_s,
        "edge_rates": cfg.edge_rates,
        "scheme": cfg.scheme,
    }


def _network_type(n: int, s: int, m: int) -> NetworkType:
    if m == n == s:
        return NetworkType.FULL_SUBSCRIPTION
    if m > n == s:
        return NetworkType.TOTAL_KEY_SUBSCRIPTION
    if m > n > s:
        return NetworkType.PARTIAL_KEY_SUBSCRIPTION
    raise InvalidCounts(f"(n={n}, s={s}, m={m}) matches no network type")


def classify_network(cfg: ValidatedConfig) -> NetworkType:
    return _network_type(cfg.n, cfg.s, cfg.m)


def homogeneous(
    k: int,
    n: int,
    s: int,
    m: int,
    lambda_s: float,
    lambda_e: float,
    scheme: Union[str, Scheme] = Scheme.MEMORY,
) -> ValidatedConfig:
    """Shorthand for a validated scalable homogeneous network."""
    return validate_config(NetworkConfig(k, n, s, m, lambda_s, Homogeneous(lambda_e), Scheme.parse(scheme)))
