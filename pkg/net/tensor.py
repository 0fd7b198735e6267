"""Dense B x N x H x W kernels for the attention and interaction modules.

Everything is plain float64 numpy with a fixed accumulation order, so
repeated runs give bit-identical results. Feature channel ``n`` of an
N = C x T tensor is the pair (c, t) with ``n = c * T + t``.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from errors import EventParseError, ShapeMismatchError
from utils import atomic_write_text

T4_MAGIC = "T4"

# 3x3 taps in row-major order; the accumulation order of dwconv3x3.
_TAPS = [(dy, dx) for dy in range(3) for dx in range(3)]


def as_tensor4(x, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4 or min(arr.shape) < 1:
        raise ShapeMismatchError(f"{name} must be B x N x H x W with positive dims, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ShapeMismatchError(f"{name} contains non-finite values")
    return arr


# -------------------- Weights --------------------


class ConvWeights(BaseModel):
    """Pointwise (out x in) or depthwise (C x 3 x 3) kernel plus per-output bias."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: Literal["pointwise", "depthwise3x3"]
    kernel: np.ndarray
    bias: np.ndarray

    @field_validator("kernel", "bias", mode="before")
    @classmethod
    def _as_float(cls, v):
        arr = np.array(v, dtype=np.float64, copy=True)
        if not np.isfinite(arr).all():
            raise ShapeMismatchError("conv weights contain non-finite values")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _shapes(self) -> "ConvWeights":
        if self.kind == "pointwise":
            if self.kernel.ndim != 2:
                raise ShapeMismatchError(f"pointwise kernel must be out x in, got {self.kernel.shape}")
        elif self.kernel.ndim != 3 or self.kernel.shape[1:] != (3, 3):
            raise ShapeMismatchError(f"depthwise kernel must be C x 3 x 3, got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeMismatchError(f"bias shape {self.bias.shape} does not match {self.kernel.shape[0]} outputs")
        return self

    @property
    def out_channels(self) -> int:
        return int(self.kernel.shape[0])

    @property
    def in_channels(self) -> int:
        return int(self.kernel.shape[1]) if self.kind == "pointwise" else int(self.kernel.shape[0])

    @classmethod
    def pointwise(cls, kernel, bias=None) -> "ConvWeights":
        kernel = np.asarray(kernel, dtype=np.float64)
        bias = np.zeros(kernel.shape[0]) if bias is None else bias
        return cls(kind="pointwise", kernel=kernel, bias=bias)

    @classmethod
    def depthwise(cls, kernel, bias=None) -> "ConvWeights":
        kernel = np.asarray(kernel, dtype=np.float64)
        bias = np.zeros(kernel.shape[0]) if bias is None else bias
        return cls(kind="depthwise3x3", kernel=kernel, bias=bias)

    @classmethod
    def identity(cls, channels: int) -> "ConvWeights":
        return cls.pointwise(np.eye(channels))

    @classmethod
    def delta(cls, channels: int) -> "ConvWeights":
        """Depthwise kernel with a centered unit tap (identity map)."""
        k = np.zeros((channels, 3, 3))
        k[:, 1, 1] = 1.0
        return cls.depthwise(k)


# -------------------- Convolutions --------------------


def conv1x1(x, w: ConvWeights) -> np.ndarray:
    """Per-pixel linear map across channels plus bias."""
    x = as_tensor4(x)
    if w.kind != "pointwise":
        raise ShapeMismatchError(f"conv1x1 needs pointwise weights, got {w.kind}")
    if w.in_channels != x.shape[1]:
        raise ShapeMismatchError(f"conv1x1 expects {w.in_channels} input channels, got {x.shape[1]}")
    return np.einsum("oi,bihw->bohw", w.kernel, x) + w.bias[None, :, None, None]


def dwconv3x3(x, w: ConvWeights) -> np.ndarray:
    """Per-channel 3x3 cross-correlation with zero padding (same size output)."""
    x = as_tensor4(x)
    if w.kind != "depthwise3x3":
        raise ShapeMismatchError(f"dwconv3x3 needs depthwise weights, got {w.kind}")
    if w.in_channels != x.shape[1]:
        raise ShapeMismatchError(f"dwconv3x3 expects {w.in_channels} channels, got {x.shape[1]}")
    H, W = x.shape[2:]
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(x)
    for dy, dx in _TAPS:
        out += w.kernel[None, :, dy, dx, None, None] * padded[:, :, dy : dy + H, dx : dx + W]
    return out + w.bias[None, :, None, None]


# -------------------- Activations --------------------


def softmax(x, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along ``axis``."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


# -------------------- Resampling --------------------


def downsample2(x) -> np.ndarray:
    """2x2 mean pooling; H and W must be even."""
    x = as_tensor4(x)
    H, W = x.shape[2:]
    if H % 2 or W % 2:
        raise ShapeMismatchError(f"downsample2 needs even spatial dims, got {H}x{W}")
    top = x[:, :, 0::2, 0::2] + x[:, :, 0::2, 1::2]
    bottom = x[:, :, 1::2, 0::2] + x[:, :, 1::2, 1::2]
    return (top + bottom) * 0.25


def _bilinear_taps(n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # align_corners=False: source coordinate (o + 0.5) / 2 - 0.5, clamped at the borders
    src = (np.arange(2 * n_in) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def upsample2(x) -> np.ndarray:
    """Bilinear upsampling to 2H x 2W (half-pixel centers, align_corners=False)."""
    x = as_tensor4(x)
    H, W = x.shape[2:]
    r0, r1, wr = _bilinear_taps(H)
    a, b = x[:, :, r0, :], x[:, :, r1, :]
    rows = a + wr[None, None, :, None] * (b - a)
    c0, c1, wc = _bilinear_taps(W)
    a, b = rows[:, :, :, c0], rows[:, :, :, c1]
    return a + wc[None, None, None, :] * (b - a)


# -------------------- Layout --------------------


def concat_channels(a, b) -> np.ndarray:
    a, b = as_tensor4(a, "a"), as_tensor4(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatchError(f"cannot concatenate {a.shape} and {b.shape} on channels")
    return np.concatenate([a, b], axis=1)


def split_channels(x, k: int) -> tuple[np.ndarray, np.ndarray]:
    x = as_tensor4(x)
    if not 0 < k < x.shape[1]:
        raise ShapeMismatchError(f"split point {k} outside (0, {x.shape[1]})")
    return x[:, :k], x[:, k:]


def matmul_batched(A, B) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim < 2 or B.ndim < 2 or A.shape[:-2] != B.shape[:-2] or A.shape[-1] != B.shape[-2]:
        raise ShapeMismatchError(f"cannot multiply stacks {A.shape} and {B.shape}")
    return np.matmul(A, B)


def _check_factorization(x: np.ndarray, C: int, T: int, L: int) -> None:
    if x.shape[1] != C * T:
        raise ShapeMismatchError(f"feature has {x.shape[1]} channels, expected C*T = {C * T}")
    if C % L or T % L:
        raise ShapeMismatchError(f"head count {L} must divide C={C} and T={T}")


def semantic_tokens(x, C: int, T: int, L: int) -> np.ndarray:
    """B x N x H x W -> B x L x C_L x (T*H*W): one token per channel."""
    x = as_tensor4(x)
    _check_factorization(x, C, T, L)
    B, _, H, W = x.shape
    return x.reshape(B, L, C // L, T * H * W)


def from_semantic_tokens(tokens, H: int, W: int) -> np.ndarray:
    B, L, C_L, THW = tokens.shape
    return np.asarray(tokens).reshape(B, L * C_L * THW // (H * W), H, W)


def motion_tokens(x, C: int, T: int, L: int) -> np.ndarray:
    """B x N x H x W -> B x L x T_L x (C*H*W): one token per temporal slot."""
    x = as_tensor4(x)
    _check_factorization(x, C, T, L)
    B, _, H, W = x.shape
    v = x.reshape(B, C, L, T // L, H, W).transpose(0, 2, 3, 1, 4, 5)
    return v.reshape(B, L, T // L, C * H * W)


def from_motion_tokens(tokens, C: int, H: int, W: int) -> np.ndarray:
    tokens = np.asarray(tokens)
    B, L, T_L, _ = tokens.shape
    v = tokens.reshape(B, L, T_L, C, H, W).transpose(0, 3, 1, 2, 4, 5)
    return v.reshape(B, C * L * T_L, H, W)


# -------------------- T4 dumps --------------------


def format_t4(x) -> str:
    x = as_tensor4(x)
    B, N, H, W = x.shape
    lines = [f"{T4_MAGIC} {B} {N} {H} {W}"]
    for row in x.reshape(B * N * H, W).tolist():
        lines.append(" ".join(repr(float(v) + 0.0) for v in row))
    return "\n".join(lines) + "\n"


def write_t4(x, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, format_t4(x))


def parse_t4(tokens: list[str], pos: int = 0) -> tuple[np.ndarray, int]:
    """Parse one T4 section starting at ``tokens[pos]``; returns (tensor, next position)."""
    if pos + 5 > len(tokens) or tokens[pos] != T4_MAGIC:
        raise EventParseError(1, f"expected {T4_MAGIC} header at token {pos}")
    try:
        dims = [int(v) for v in tokens[pos + 1 : pos + 5]]
    except ValueError:
        raise EventParseError(1, f"bad {T4_MAGIC} dimensions {tokens[pos + 1 : pos + 5]}") from None
    if min(dims) < 1:
        raise EventParseError(1, f"{T4_MAGIC} dimensions must be positive, got {dims}")
    count = int(np.prod(dims))
    start = pos + 5
    values = tokens[start : start + count]
    if len(values) != count:
        raise EventParseError(1, f"expected {count} values, found {len(values)}")
    try:
        data = np.array([float(v) for v in values], dtype=np.float64)
    except ValueError as e:
        raise EventParseError(1, f"non-numeric tensor value ({e})") from None
    return data.reshape(dims), start + count


def read_t4(path: Union[str, Path]) -> np.ndarray:
    with open(path, encoding="utf-8") as f:
        tokens = f.read().split()
    x, end = parse_t4(tokens)
    if end != len(tokens):
        raise EventParseError(1, f"{len(tokens) - end} trailing tokens after {T4_MAGIC} data")
    return as_tensor4(x)
