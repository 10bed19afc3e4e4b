"""Shared configuration, tensor bundle, instrumentation counters and RNG streams."""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import (
    BackwardFactorTooSmall,
    DimensionMismatch,
    ExponentSumTooSmall,
    FieldOutOfRange,
    NonPositiveField,
    UnknownConfigKey,
)

# Float slack for comparisons such as b >= 1/p where 1/p is not exact.
_EPS = 1e-12


@dataclass(frozen=True)
class AttnConfig:
    """All hyperparameters of the two-step span attention layer.

    Defaults are the "Extended" kernel configuration: balanced exponents,
    two routed spans per query, backward/forward redundancy 4/2, a 1088
    token sliding window and 64-token key blocks.
    """

    search_exponent: float = 0.5
    span_exponent: float = 0.5
    top_k: int = 2
    backward_factor: float = 4.0
    forward_factor: float = 2.0
    window: int = 1088
    block_size: int = 64
    head_dim: int = 64
    num_heads: int = 1
    seed: int = 0

    def replace(self, **changes) -> "AttnConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AttnConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise UnknownConfigKey(unknown[0], f"one of {sorted(names)}")
        return cls(**{k: _coerce(k, v) for k, v in data.items()})

    @classmethod
    def from_json(cls, path: str | Path) -> "AttnConfig":
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise UnknownConfigKey("<root>", "a flat JSON object")
        return cls.from_dict(data)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


_INT_FIELDS = {"top_k", "window", "block_size", "head_dim", "num_heads", "seed"}


def _coerce(name: str, value: Any) -> Any:
    if name in _INT_FIELDS:
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise FieldOutOfRange(name, "an integer", value)
        return int(value)
    return float(value)


# Named presets used throughout tests and the CLI.
TIGHT = AttnConfig(backward_factor=2.0, forward_factor=0.0, window=0)
BASELINE = AttnConfig(backward_factor=2.0, forward_factor=0.0)
EXTENDED = AttnConfig()


def validate_config(cfg: AttnConfig, coverage_required: bool = False) -> AttnConfig:
    """Check every field constraint; return ``cfg`` unchanged when all hold.

    With ``coverage_required`` the two structural non-exclusion conditions
    are enforced as well: ``search_exponent + span_exponent >= 1`` and
    ``backward_factor >= 1 / search_exponent``.
    """
    for name in ("search_exponent", "span_exponent"):
        p = getattr(cfg, name)
        if not p > 0.0:
            raise NonPositiveField(name, "> 0", p)
        if not p < 1.0:
            raise FieldOutOfRange(name, "< 1", p)
    for name in ("top_k", "block_size", "head_dim", "num_heads"):
        v = getattr(cfg, name)
        if v < 1:
            raise NonPositiveField(name, ">= 1", v)
    for name in ("backward_factor", "forward_factor"):
        v = getattr(cfg, name)
        if not v >= 0.0:
            raise NonPositiveField(name, ">= 0", v)
    if cfg.window < 0:
        raise NonPositiveField("window", ">= 0", cfg.window)
    if cfg.seed < 0:
        raise NonPositiveField("seed", ">= 0", cfg.seed)

    if coverage_required:
        total = cfg.search_exponent + cfg.span_exponent
        if total < 1.0 - _EPS:
            raise ExponentSumTooSmall("search_exponent + span_exponent", ">= 1", total)
        need = 1.0 / cfg.search_exponent
        if cfg.backward_factor < need - _EPS:
            raise BackwardFactorTooSmall("backward_factor", f">= 1/search_exponent = {need:g}", cfg.backward_factor)
    return cfg


@dataclass
class OpCounters:
    """Work totals for one run; merged per worker shard, never decremented."""

    anchors_scored: int = 0
    keys_attended: int = 0
    queries_processed: int = 0

    def add(self, anchors_scored: int = 0, keys_attended: int = 0, queries_processed: int = 0) -> None:
        if anchors_scored < 0 or keys_attended < 0 or queries_processed < 0:
            raise ValueError("counter increments must be non-negative")
        self.anchors_scored += int(anchors_scored)
        self.keys_attended += int(keys_attended)
        self.queries_processed += int(queries_processed)

    def merge(self, other: "OpCounters") -> "OpCounters":
        self.add(other.anchors_scored, other.keys_attended, other.queries_processed)
        return self

    def copy(self) -> "OpCounters":
        return dataclasses.replace(self)


@dataclass
class SequenceTensors:
    """Per-position Q, K, V plus routing queries ``Qs`` and representatives ``Ka``."""

    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    Qs: np.ndarray
    Ka: np.ndarray

    def __post_init__(self):
        shapes = {n: np.shape(getattr(self, n)) for n in ("Q", "K", "V", "Qs", "Ka")}
        first = shapes["Q"]
        if len(first) != 2:
            raise DimensionMismatch(f"Q must be 2-D (L, d), got shape {first}")
        for name, shape in shapes.items():
            if shape != first:
                raise DimensionMismatch(f"{name} has shape {shape}, expected {first}")

    @property
    def length(self) -> int:
        return self.Q.shape[0]

    @property
    def dim(self) -> int:
        return self.Q.shape[1]

    def prefix(self, n: int) -> "SequenceTensors":
        return SequenceTensors(self.Q[:n], self.K[:n], self.V[:n], self.Qs[:n], self.Ka[:n])

    def copy(self) -> "SequenceTensors":
        return SequenceTensors(*(np.array(getattr(self, n), copy=True) for n in ("Q", "K", "V", "Qs", "Ka")))

    @classmethod
    def random(cls, L: int, d: int, rng: np.random.Generator, dtype=np.float64) -> "SequenceTensors":
        parts = [rng.standard_normal((L, d)).astype(dtype, copy=False) for _ in range(5)]
        return cls(*parts)


def rng_stream(seed: int, stream: str | int = 0) -> np.random.Generator:
    """Counter-based Philox generator for one named substream of ``seed``.

    Different stream names give statistically independent sequences, so
    results never depend on the order in which modules draw numbers.
    """
    key = stream if isinstance(stream, int) else zlib.crc32(stream.encode())
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(key),))
    return np.random.Generator(np.random.Philox(ss))
