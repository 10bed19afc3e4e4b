"""Causal diagonal linear recurrence producing the representative stream ``Ka``.

``H(t) = decay * H(t-1) + input_proj @ X(t)`` with ``H(-1) = 0`` and
``Ka(t) = key_proj @ H(t)``. Each ``Ka(t)`` depends on ``X[0..t]`` only.

Binary layout (little-endian throughout)::

    bytes 0..7    magic   b"SLRECUR1" (parameters) or b"SLTENSR1" (matrix)
    bytes 8..15   uint64  d
    then float64 payload: decay (d), input_proj (d*d, row-major),
    key_proj (d*d, row-major) for parameters; rows*d row-major for a matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DimensionMismatch, TensorFormatError

PARAMS_MAGIC = b"SLRECUR1"
TENSOR_MAGIC = b"SLTENSR1"
_HEADER = struct.Struct("<8sQ")


@dataclass
class RecurrenceParams:
    decay: np.ndarray
    input_proj: np.ndarray
    key_proj: np.ndarray

    def __post_init__(self):
        self.decay = np.asarray(self.decay, dtype=np.float64)
        self.input_proj = np.asarray(self.input_proj, dtype=np.float64)
        self.key_proj = np.asarray(self.key_proj, dtype=np.float64)
        d = self.decay.shape[0] if self.decay.ndim == 1 else -1
        if d < 1 or self.input_proj.shape != (d, d) or self.key_proj.shape != (d, d):
            raise DimensionMismatch(
                f"decay {self.decay.shape}, input_proj {self.input_proj.shape}, key_proj {self.key_proj.shape}"
            )
        if np.any(self.decay < 0.0) or np.any(self.decay > 1.0):
            raise ValueError("decay components must lie in [0, 1]")

    @property
    def dim(self) -> int:
        return self.decay.shape[0]

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "RecurrenceParams":
        """Stable default: decay ~ U[0.8, 0.999], orthogonal projections scaled by 1/sqrt(d)."""
        decay = rng.uniform(0.8, 0.999, size=d)
        qi, _ = np.linalg.qr(rng.standard_normal((d, d)))
        qk, _ = np.linalg.qr(rng.standard_normal((d, d)))
        return cls(decay, qi / np.sqrt(d), qk / np.sqrt(d))

    @classmethod
    def identity(cls, d: int, decay=1.0) -> "RecurrenceParams":
        return cls(np.broadcast_to(np.asarray(decay, dtype=np.float64), (d,)).copy(), np.eye(d), np.eye(d))


def hidden_states(X: np.ndarray, params: RecurrenceParams) -> np.ndarray:
    """States ``H(t)`` for a (L, d) or batched (B, L, d) input."""
    X = np.asarray(X, dtype=np.float64)
    batched = X.ndim == 3
    Xb = X if batched else X[None]
    if Xb.ndim != 3 or Xb.shape[2] != params.dim:
        raise DimensionMismatch(f"X has shape {X.shape}, params expect d={params.dim}")
    if Xb.shape[1] < 1:
        raise DimensionMismatch("accumulate needs at least one position")
    H = kernels.linear_scan(Xb @ params.input_proj.T, params.decay)
    return H if batched else H[0]


def accumulate(X: np.ndarray, params: RecurrenceParams) -> np.ndarray:
    """Representative keys ``Ka(t) = key_proj @ H(t)`` for every position."""
    return hidden_states(X, params) @ params.key_proj.T


def passthrough_ka(K: np.ndarray) -> np.ndarray:
    """Reuse the attention keys as representatives (``Ka = K``)."""
    return K


def save_params(params: RecurrenceParams, path: str | Path) -> None:
    d = params.dim
    payload = np.concatenate([params.decay, params.input_proj.ravel(), params.key_proj.ravel()])
    Path(path).write_bytes(_HEADER.pack(PARAMS_MAGIC, d) + payload.astype("<f8").tobytes())


def load_params(path: str | Path) -> RecurrenceParams:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TensorFormatError("file shorter than header")
    magic, d = _HEADER.unpack_from(data)
    if magic != PARAMS_MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != d + 2 * d * d:
        raise TensorFormatError(f"payload has {body.size} values, expected {d + 2 * d * d}")
    vals = body.astype(np.float64)
    return RecurrenceParams(vals[:d], vals[d : d + d * d].reshape(d, d), vals[d + d * d :].reshape(d, d))


def save_tensor(M: np.ndarray, path: str | Path) -> None:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise DimensionMismatch("only 2-D matrices are serialised")
    Path(path).write_bytes(_HEADER.pack(TENSOR_MAGIC, M.shape[1]) + M.astype("<f8").tobytes())


def load_tensor(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TensorFormatError("file shorter than header")
    magic, d = _HEADER.unpack_from(data)
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if d == 0 or body.size % d:
        raise TensorFormatError(f"{body.size} values do not split into rows of {d}")
    return body.astype(np.float64).reshape(-1, d)
