"""Cross-modal interaction modules.

MSEM injects event motion saliency into image features; ESEM engraves
channel-attended image semantics into event features. Both map
B x N x H x W inputs to a B x N x H x W output and expose a trace of their
intermediates.
"""
from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict

from errors import ShapeMismatchError
from net.mrm import motion_attention, project
from net.tensor import (
    as_tensor4,
    concat_channels,
    conv1x1,
    downsample2,
    dwconv3x3,
    relu,
    sigmoid,
    split_channels,
    upsample2,
)
from net.weights import EsemWeights, MsemWeights


def _pair(a, b, first: str, second: str) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_tensor4(a, first), as_tensor4(b, second)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{first} shape {a.shape} != {second} shape {b.shape}")
    return a, b


# -------------------- MSEM --------------------


class MsemTrace(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    S: np.ndarray  # high-frequency saliency
    F1: np.ndarray  # F_E * S + F_E
    F_mix: np.ndarray
    gamma: np.ndarray
    F2: np.ndarray  # gamma * F1
    out: np.ndarray


def high_freq(x, dw1, dw2) -> np.ndarray:
    """Downsample-then-subtract residual passed through two depthwise convs."""
    x = as_tensor4(x)
    return dwconv3x3(dwconv3x3(x - upsample2(downsample2(x)), dw1), dw2)


def msem_trace(F_E, F_I, w: MsemWeights) -> MsemTrace:
    F_E, F_I = _pair(F_E, F_I, "F_E", "F_I")
    S = high_freq(F_E, w.hf_dw1, w.hf_dw2)
    F1 = F_E * S + F_E
    F_mix = dwconv3x3(dwconv3x3(conv1x1(concat_channels(F1, F_I), w.mix_pw), w.mix_dw1), w.mix_dw2)
    gamma = sigmoid(conv1x1(F_mix, w.gate_pw))
    F2 = gamma * F1
    out = conv1x1(concat_channels(F_mix, F2), w.out_pw)
    return MsemTrace(S=S, F1=F1, F_mix=F_mix, gamma=gamma, F2=F2, out=out)


def msem_forward(F_E, F_I, w: MsemWeights) -> np.ndarray:
    """Event-to-image feature F_E2I."""
    return msem_trace(F_E, F_I, w).out


# -------------------- ESEM --------------------


class EsemTrace(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    F_hat_I: np.ndarray  # encoded image features
    beta: np.ndarray  # B x N x 1 x 1 channel weights
    F_sem: np.ndarray
    F_mix: np.ndarray
    F_bar_E: np.ndarray  # temporal branch
    spatial_gate: np.ndarray  # B x 1 x H x W
    F_bar_sem: np.ndarray  # spatial branch
    out: np.ndarray


def channel_attention(x: np.ndarray, reduce, expand) -> np.ndarray:
    """Squeeze-excite weights: spatial mean, reduce, relu, expand, sigmoid."""
    squeezed = x.mean(axis=(2, 3), keepdims=True)
    return sigmoid(conv1x1(relu(conv1x1(squeezed, reduce)), expand))


def esem_trace(F_I, F_E, w: EsemWeights) -> EsemTrace:
    F_I, F_E = _pair(F_I, F_E, "F_I", "F_E")
    M = w.fuse_pw.out_channels
    if M % 2:
        raise ShapeMismatchError(f"fused channel count must be even, got {M}")
    if M // 2 != w.temporal_cfg.N:
        raise ShapeMismatchError(f"fused half has {M // 2} channels, temporal config expects {w.temporal_cfg.N}")

    F_hat_I = project(F_I, w.enc_pw, w.enc_dw)
    beta = channel_attention(F_hat_I, w.se_reduce, w.se_expand)
    F_sem = beta * F_hat_I
    F_mix = conv1x1(concat_channels(F_sem, F_E), w.fuse_pw)
    # first half follows F_sem, second half follows F_E
    semantic_half, event_half = split_channels(F_mix, M // 2)
    F_bar_E = motion_attention(event_half, w.temporal_cfg, w.temporal)
    gate = sigmoid(conv1x1(dwconv3x3(semantic_half, w.spatial_dw), w.spatial_pw))
    if gate.shape[1] != 1:
        raise ShapeMismatchError(f"spatial gate must have one channel, got {gate.shape[1]}")
    F_bar_sem = gate * semantic_half
    out = conv1x1(concat_channels(F_bar_E, F_bar_sem), w.out_pw)
    return EsemTrace(
        F_hat_I=F_hat_I,
        beta=beta,
        F_sem=F_sem,
        F_mix=F_mix,
        F_bar_E=F_bar_E,
        spatial_gate=gate,
        F_bar_sem=F_bar_sem,
        out=out,
    )


def esem_forward(F_I, F_E, w: EsemWeights) -> np.ndarray:
    """Image-to-event feature F_I2E."""
    return esem_trace(F_I, F_E, w).out
