"""Weight containers for the attention and interaction modules.

MRMW1 file layout (UTF-8 text)::

    MRMW1 <C> <T> <L>
    @ mrm.semantic.q_pw.kernel
    T4 1 1 <out> <in>
    ...

Every ConvWeights contributes a ``.kernel`` and a ``.bias`` section; kernels
are stored 4-D (pointwise ``1 1 out in``, depthwise ``1 C 3 3``) and biases
as ``1 1 1 n``. The loader rebuilds the structure for the header's config and
rejects missing, extra or misshapen sections.
"""
from __future__ import annotations

from logging import getLogger
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from errors import EventParseError, ShapeMismatchError, WeightsError
from models import MrmConfig
from net.tensor import ConvWeights, parse_t4
from rng import NS_WEIGHTS, substream
from utils import atomic_write_text

logger = getLogger(__name__)

MRMW_MAGIC = "MRMW1"
SECTION_MARK = "@"


# -------------------- Containers --------------------


class AttentionWeights(BaseModel):
    """Q/K/V projections (pointwise then depthwise) and optional output projection."""

    model_config = ConfigDict(frozen=True)

    q_pw: ConvWeights
    q_dw: ConvWeights
    k_pw: ConvWeights
    k_dw: ConvWeights
    v_pw: ConvWeights
    v_dw: ConvWeights
    out: Optional[ConvWeights] = None


class MrmWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    semantic: AttentionWeights
    motion: AttentionWeights
    i2e: AttentionWeights  # Q/K from image features, V from event features
    e2i: AttentionWeights  # Q/K from event features, V from image features
    fuse: ConvWeights  # 2N -> N after concatenation


class MsemWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    hf_dw1: ConvWeights
    hf_dw2: ConvWeights
    mix_pw: ConvWeights  # 2N -> N
    mix_dw1: ConvWeights
    mix_dw2: ConvWeights
    gate_pw: ConvWeights  # N -> N, gamma logits
    out_pw: ConvWeights  # 2N -> N


class EsemWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    temporal_cfg: MrmConfig  # factorization of each half of the fused features
    enc_pw: ConvWeights
    enc_dw: ConvWeights
    se_reduce: ConvWeights  # N -> R
    se_expand: ConvWeights  # R -> N, beta logits
    fuse_pw: ConvWeights  # 2N -> M
    temporal: AttentionWeights
    spatial_dw: ConvWeights
    spatial_pw: ConvWeights  # M/2 -> 1
    out_pw: ConvWeights  # M -> N


class NetWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    cfg: MrmConfig
    mrm: MrmWeights
    msem: MsemWeights
    esem: EsemWeights


# -------------------- Builders --------------------


def _se_width(n: int) -> int:
    return max(1, n // 2)


class _Init:
    """Draws kernels in a fixed field order from one substream."""

    def __init__(self, seed: Optional[int]):
        self.rng = substream(seed, NS_WEIGHTS) if seed is not None else None

    def pw(self, out_ch: int, in_ch: int, kernel=None, bias: float = 0.0) -> ConvWeights:
        if kernel is None:
            kernel = self.rng.normal(0.0, 1.0 / np.sqrt(in_ch), (out_ch, in_ch))
        return ConvWeights.pointwise(kernel, np.full(out_ch, bias))

    def dw(self, channels: int, kernel=None) -> ConvWeights:
        if kernel is None:
            kernel = self.rng.normal(0.0, 1.0 / 3.0, (channels, 3, 3))
        return ConvWeights.depthwise(kernel)


def _delta(channels: int) -> np.ndarray:
    k = np.zeros((channels, 3, 3))
    k[:, 1, 1] = 1.0
    return k


def _half_sum(n: int) -> np.ndarray:
    return 0.5 * np.hstack([np.eye(n), np.eye(n)])


def random_attention_weights(channels: int, seed: int) -> AttentionWeights:
    init = _Init(seed)
    return AttentionWeights(
        q_pw=init.pw(channels, channels),
        q_dw=init.dw(channels),
        k_pw=init.pw(channels, channels),
        k_dw=init.dw(channels),
        v_pw=init.pw(channels, channels),
        v_dw=init.dw(channels),
    )


def uniform_attention_weights(channels: int) -> AttentionWeights:
    """Zero Q/K projections (uniform attention) and identity V."""
    init = _Init(None)
    zero = np.zeros((channels, channels))
    return AttentionWeights(
        q_pw=init.pw(channels, channels, zero),
        q_dw=init.dw(channels, _delta(channels)),
        k_pw=init.pw(channels, channels, zero),
        k_dw=init.dw(channels, _delta(channels)),
        v_pw=init.pw(channels, channels, np.eye(channels)),
        v_dw=init.dw(channels, _delta(channels)),
    )


def random_net_weights(cfg: MrmConfig, seed: int = 0) -> NetWeights:
    """Random weights with fan-in scaled normal kernels and zero biases."""
    n, m, r = cfg.N, 2 * cfg.N, _se_width(cfg.N)
    init = _Init(seed)

    def attention() -> AttentionWeights:
        return AttentionWeights(
            q_pw=init.pw(n, n),
            q_dw=init.dw(n),
            k_pw=init.pw(n, n),
            k_dw=init.dw(n),
            v_pw=init.pw(n, n),
            v_dw=init.dw(n),
        )

    mrm = MrmWeights(
        semantic=attention(),
        motion=attention(),
        i2e=attention(),
        e2i=attention(),
        fuse=init.pw(n, 2 * n),
    )
    msem = MsemWeights(
        hf_dw1=init.dw(n),
        hf_dw2=init.dw(n),
        mix_pw=init.pw(n, 2 * n),
        mix_dw1=init.dw(n),
        mix_dw2=init.dw(n),
        gate_pw=init.pw(n, n),
        out_pw=init.pw(n, 2 * n),
    )
    esem = EsemWeights(
        temporal_cfg=cfg,
        enc_pw=init.pw(n, n),
        enc_dw=init.dw(n),
        se_reduce=init.pw(r, n),
        se_expand=init.pw(n, r),
        fuse_pw=init.pw(m, 2 * n),
        temporal=attention(),
        spatial_dw=init.dw(n),
        spatial_pw=init.pw(1, n),
        out_pw=init.pw(n, m),
    )
    return NetWeights(cfg=cfg, mrm=mrm, msem=msem, esem=esem)


def identity_net_weights(cfg: MrmConfig) -> NetWeights:
    """Uniform attention, identity/averaging fusions and half-open gates (zero logits)."""
    n, m, r = cfg.N, 2 * cfg.N, _se_width(cfg.N)
    init = _Init(None)
    mrm = MrmWeights(
        semantic=uniform_attention_weights(n),
        motion=uniform_attention_weights(n),
        i2e=uniform_attention_weights(n),
        e2i=uniform_attention_weights(n),
        fuse=init.pw(n, 2 * n, _half_sum(n)),
    )
    msem = MsemWeights(
        hf_dw1=init.dw(n, _delta(n)),
        hf_dw2=init.dw(n, _delta(n)),
        mix_pw=init.pw(n, 2 * n, _half_sum(n)),
        mix_dw1=init.dw(n, _delta(n)),
        mix_dw2=init.dw(n, _delta(n)),
        gate_pw=init.pw(n, n, np.zeros((n, n))),
        out_pw=init.pw(n, 2 * n, _half_sum(n)),
    )
    esem = EsemWeights(
        temporal_cfg=cfg,
        enc_pw=init.pw(n, n, np.eye(n)),
        enc_dw=init.dw(n, _delta(n)),
        se_reduce=init.pw(r, n, np.zeros((r, n))),
        se_expand=init.pw(n, r, np.zeros((n, r))),
        fuse_pw=init.pw(m, 2 * n, np.eye(m)),
        temporal=uniform_attention_weights(n),
        spatial_dw=init.dw(n, _delta(n)),
        spatial_pw=init.pw(1, n, np.zeros((1, n))),
        out_pw=init.pw(n, m, _half_sum(n)),
    )
    return NetWeights(cfg=cfg, mrm=mrm, msem=msem, esem=esem)


# -------------------- MRMW1 I/O --------------------


def _flatten(model: BaseModel, prefix: str, out: dict[str, np.ndarray]) -> None:
    for name in type(model).model_fields:
        value = getattr(model, name)
        key = f"{prefix}.{name}" if prefix else name
        if isinstance(value, ConvWeights):
            if value.kind == "pointwise":
                out[f"{key}.kernel"] = value.kernel.reshape(1, 1, *value.kernel.shape)
            else:
                out[f"{key}.kernel"] = value.kernel.reshape(1, *value.kernel.shape)
            out[f"{key}.bias"] = value.bias.reshape(1, 1, 1, -1)
        elif isinstance(value, BaseModel) and not isinstance(value, MrmConfig):
            _flatten(value, key, out)


def weight_sections(weights: NetWeights) -> dict[str, np.ndarray]:
    """Section name -> 4-D array, in field order."""
    out: dict[str, np.ndarray] = {}
    for name in ("mrm", "msem", "esem"):
        _flatten(getattr(weights, name), name, out)
    return out


def format_weights(weights: NetWeights) -> str:
    cfg = weights.cfg
    lines = [f"{MRMW_MAGIC} {cfg.C} {cfg.T} {cfg.L}"]
    for name, arr in weight_sections(weights).items():
        lines.append(f"{SECTION_MARK} {name}")
        lines.append("T4 " + " ".join(str(d) for d in arr.shape))
        for row in arr.reshape(-1, arr.shape[-1]).tolist():
            lines.append(" ".join(repr(float(v) + 0.0) for v in row))
    return "\n".join(lines) + "\n"


def write_weights(weights: NetWeights, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, format_weights(weights))


def _rebuild(template: BaseModel, prefix: str, sections: dict[str, np.ndarray], used: set[str]) -> BaseModel:
    updates = {}
    for name in type(template).model_fields:
        value = getattr(template, name)
        key = f"{prefix}.{name}" if prefix else name
        if isinstance(value, ConvWeights):
            kernel = _take(sections, f"{key}.kernel", (1, 1, *value.kernel.shape) if value.kind == "pointwise" else (1, *value.kernel.shape), used)
            bias = _take(sections, f"{key}.bias", (1, 1, 1, value.bias.shape[0]), used)
            updates[name] = ConvWeights(kind=value.kind, kernel=kernel.reshape(value.kernel.shape), bias=bias.reshape(-1))
        elif isinstance(value, BaseModel) and not isinstance(value, MrmConfig):
            updates[name] = _rebuild(value, key, sections, used)
    return template.model_copy(update=updates)


def _take(sections: dict[str, np.ndarray], key: str, shape: tuple, used: set[str]) -> np.ndarray:
    if key not in sections:
        raise WeightsError(f"missing weight section {key}")
    arr = sections[key]
    if arr.shape != tuple(shape):
        raise WeightsError(f"section {key} has shape {arr.shape}, expected {tuple(shape)}")
    used.add(key)
    return arr


def parse_weights(text: str) -> NetWeights:
    tokens = text.split()
    if len(tokens) < 4 or tokens[0] != MRMW_MAGIC:
        raise WeightsError(f"missing {MRMW_MAGIC} header")
    try:
        cfg = MrmConfig(C=int(tokens[1]), T=int(tokens[2]), L=int(tokens[3]))
    except ValueError as e:
        raise WeightsError(f"bad {MRMW_MAGIC} config header {tokens[1:4]}: {e}") from None

    sections: dict[str, np.ndarray] = {}
    pos = 4
    while pos < len(tokens):
        if tokens[pos] != SECTION_MARK or pos + 1 >= len(tokens):
            raise WeightsError(f"expected '{SECTION_MARK} <name>' at token {pos}")
        name = tokens[pos + 1]
        if name in sections:
            raise WeightsError(f"duplicate weight section {name}")
        try:
            sections[name], pos = parse_t4(tokens, pos + 2)
        except EventParseError as e:
            raise WeightsError(f"section {name}: {e}") from None

    used: set[str] = set()
    template = identity_net_weights(cfg)
    try:
        weights = _rebuild(template, "", sections, used)
    except ShapeMismatchError as e:
        raise WeightsError(str(e)) from None
    extra = sorted(set(sections) - used)
    if extra:
        raise WeightsError(f"unknown weight sections: {', '.join(extra)}")
    return weights


def read_weights(path: Union[str, Path], expected: Optional[MrmConfig] = None) -> NetWeights:
    """Load an MRMW1 file; with ``expected`` the header config must match."""
    with open(path, encoding="utf-8") as f:
        weights = parse_weights(f.read())
    if expected is not None and (weights.cfg.C, weights.cfg.T, weights.cfg.L) != (expected.C, expected.T, expected.L):
        raise WeightsError(
            f"weights built for C={weights.cfg.C} T={weights.cfg.T} L={weights.cfg.L}, "
            f"expected C={expected.C} T={expected.T} L={expected.L}"
        )
    logger.info(f"[weights] loaded path={path} C={weights.cfg.C} T={weights.cfg.T} L={weights.cfg.L}")
    return weights
