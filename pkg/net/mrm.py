"""Modality-specific attention: semantic (channel tokens), motion (temporal
tokens) and bidirectional cross-modality attention.

Attention is ``A = softmax(Q K^T)`` over the token axis without scaling,
and the output tokens are ``A @ V``. Q, K and V are each a pointwise
projection followed by a depthwise 3x3 convolution.
"""
from __future__ import annotations

from typing import Literal

import numpy as np

from errors import ShapeMismatchError
from models import MrmConfig
from net.tensor import (
    as_tensor4,
    concat_channels,
    conv1x1,
    dwconv3x3,
    from_motion_tokens,
    from_semantic_tokens,
    matmul_batched,
    motion_tokens,
    semantic_tokens,
    softmax,
)
from net.weights import AttentionWeights, MrmWeights

TokenMode = Literal["semantic", "motion"]


def project(x: np.ndarray, pw, dw) -> np.ndarray:
    return dwconv3x3(conv1x1(x, pw), dw)


def _tokens(x: np.ndarray, cfg: MrmConfig, mode: TokenMode) -> np.ndarray:
    if mode == "semantic":
        return semantic_tokens(x, cfg.C, cfg.T, cfg.L)
    return motion_tokens(x, cfg.C, cfg.T, cfg.L)


def _untokens(tokens: np.ndarray, cfg: MrmConfig, mode: TokenMode, H: int, W: int) -> np.ndarray:
    if mode == "semantic":
        return from_semantic_tokens(tokens, H, W)
    return from_motion_tokens(tokens, cfg.C, H, W)


def _check(x, cfg: MrmConfig, name: str) -> np.ndarray:
    x = as_tensor4(x, name)
    if x.shape[1] != cfg.N:
        raise ShapeMismatchError(f"{name} has {x.shape[1]} channels, config expects N = C*T = {cfg.N}")
    return x


def attention_map(qk_src, cfg: MrmConfig, w: AttentionWeights, mode: TokenMode) -> np.ndarray:
    """B x L x tokens x tokens attention matrix computed from ``qk_src``."""
    x = _check(qk_src, cfg, "qk source")
    q = _tokens(project(x, w.q_pw, w.q_dw), cfg, mode)
    k = _tokens(project(x, w.k_pw, w.k_dw), cfg, mode)
    return softmax(matmul_batched(q, np.swapaxes(k, -1, -2)))


def attend(qk_src, v_src, residual_src, cfg: MrmConfig, w: AttentionWeights, mode: TokenMode) -> np.ndarray:
    """Generic attention block; Q/K from ``qk_src``, V from ``v_src``."""
    v_src = _check(v_src, cfg, "value source")
    qk_src = _check(qk_src, cfg, "qk source")
    if qk_src.shape != v_src.shape:
        raise ShapeMismatchError(f"feature shapes differ: {qk_src.shape} vs {v_src.shape}")
    H, W = v_src.shape[2:]
    A = attention_map(qk_src, cfg, w, mode)
    v = _tokens(project(v_src, w.v_pw, w.v_dw), cfg, mode)
    out = _untokens(matmul_batched(A, v), cfg, mode, H, W)
    if w.out is not None:
        out = conv1x1(out, w.out)
    if cfg.residual:
        out = out + residual_src
    return out


def semantic_attention(F_I, cfg: MrmConfig, w: AttentionWeights) -> np.ndarray:
    """Channel-token self-attention on image features: A is B x L x C_L x C_L."""
    return attend(F_I, F_I, F_I, cfg, w, "semantic")


def motion_attention(F_E, cfg: MrmConfig, w: AttentionWeights) -> np.ndarray:
    """Temporal-token self-attention on event features: A is B x L x T_L x T_L."""
    return attend(F_E, F_E, F_E, cfg, w, "motion")


def cross_modality_directions(F_I, F_E, cfg: MrmConfig, w: MrmWeights) -> tuple[np.ndarray, np.ndarray]:
    """(image -> event, event -> image) outputs before the fusion projection.

    Image -> event takes Q/K from the image features with temporal tokens and
    V from the event features (residual on events); event -> image takes Q/K
    from the event features with channel tokens and V from the image features.
    """
    F_I = _check(F_I, cfg, "F_I")
    F_E = _check(F_E, cfg, "F_E")
    if F_I.shape != F_E.shape:
        raise ShapeMismatchError(f"F_I shape {F_I.shape} != F_E shape {F_E.shape}")
    i2e = attend(F_I, F_E, F_E, cfg, w.i2e, "motion")
    e2i = attend(F_E, F_I, F_I, cfg, w.e2i, "semantic")
    return i2e, e2i


def cross_modality(F_I, F_E, cfg: MrmConfig, w: MrmWeights) -> np.ndarray:
    """Both directions concatenated on channels and projected back to N."""
    i2e, e2i = cross_modality_directions(F_I, F_E, cfg, w)
    return conv1x1(concat_channels(i2e, e2i), w.fuse)


def mrm_forward(F_I, F_E, cfg: MrmConfig, w: MrmWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Semantic and motion self-attention, then cross-modality fusion.

    Returns (F_I', F_E', fused).
    """
    F_I2 = semantic_attention(F_I, cfg, w.semantic)
    F_E2 = motion_attention(F_E, cfg, w.motion)
    return F_I2, F_E2, cross_modality(F_I2, F_E2, cfg, w)
