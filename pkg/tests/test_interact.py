import numpy as np
import pytest

from errors import ShapeMismatchError
from models import MrmConfig
from net.interact import channel_attention, esem_forward, esem_trace, high_freq, msem_forward, msem_trace
from net.mrm import motion_attention, mrm_forward
from net.tensor import ConvWeights, conv1x1, downsample2, dwconv3x3, upsample2
from net.weights import identity_net_weights, random_net_weights

CFG = MrmConfig(C=2, T=2, L=1)
N, H, W = CFG.N, 4, 6


def feats(seed: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(1, N, H, W))


def motion_mean(x: np.ndarray) -> np.ndarray:
    """Uniform temporal attention with identity values, broadcast back over T."""
    per_c = x[0].reshape(CFG.C, CFG.T, H, W).mean(axis=1, keepdims=True)
    return np.broadcast_to(per_c, (CFG.C, CFG.T, H, W)).reshape(1, N, H, W)


# -------------------- MSEM --------------------


def test_high_freq_of_flat_map_is_zero():
    w = identity_net_weights(CFG).msem
    flat = np.full((1, N, H, W), 2.5)
    np.testing.assert_array_equal(high_freq(flat, w.hf_dw1, w.hf_dw2), 0.0)


def test_msem_identity_weights_closed_form():
    w = identity_net_weights(CFG).msem
    F_E, F_I = feats(0), feats(1)
    tr = msem_trace(F_E, F_I, w)
    S = F_E - upsample2(downsample2(F_E))
    F1 = F_E * S + F_E
    F_mix = 0.5 * (F1 + F_I)
    np.testing.assert_allclose(tr.S, S, atol=1e-12)
    np.testing.assert_allclose(tr.F1, F1, atol=1e-12)
    np.testing.assert_allclose(tr.F_mix, F_mix, atol=1e-12)
    np.testing.assert_array_equal(tr.gamma, 0.5)
    np.testing.assert_allclose(tr.out, 0.5 * (F_mix + 0.5 * F1), atol=1e-12)


def test_msem_flat_events_pass_through():
    w = identity_net_weights(CFG).msem
    F_E = np.full((1, N, H, W), 0.8)
    F_I = feats(2)
    np.testing.assert_allclose(msem_forward(F_E, F_I, w), 0.5 * (0.5 * (F_E + F_I) + 0.5 * F_E), atol=1e-12)


def test_msem_saturated_gate_keeps_features():
    w = identity_net_weights(CFG).msem
    w = w.model_copy(update={"gate_pw": ConvWeights.pointwise(np.zeros((N, N)), np.full(N, 40.0))})
    tr = msem_trace(feats(3), feats(4), w)
    np.testing.assert_array_equal(tr.gamma, 1.0)
    np.testing.assert_array_equal(tr.F2, tr.F1)


def test_msem_shape_mismatch():
    w = identity_net_weights(CFG).msem
    with pytest.raises(ShapeMismatchError):
        msem_forward(feats(0), np.zeros((1, N, H, W + 2)), w)


# -------------------- ESEM --------------------


def test_channel_attention_zero_logits():
    w = identity_net_weights(CFG).esem
    beta = channel_attention(feats(5), w.se_reduce, w.se_expand)
    assert beta.shape == (1, N, 1, 1)
    np.testing.assert_array_equal(beta, 0.5)


def test_esem_identity_weights_closed_form():
    w = identity_net_weights(CFG).esem
    F_I, F_E = feats(6), feats(7)
    tr = esem_trace(F_I, F_E, w)
    F_sem = 0.5 * F_I
    np.testing.assert_allclose(tr.F_sem, F_sem, atol=1e-12)
    np.testing.assert_allclose(tr.F_mix, np.concatenate([F_sem, F_E], axis=1), atol=1e-12)
    # temporal branch: event half, uniform attention plus residual
    F_bar_E = motion_mean(F_E) + F_E
    np.testing.assert_allclose(tr.F_bar_E, F_bar_E, atol=1e-12)
    assert tr.spatial_gate.shape == (1, 1, H, W)
    np.testing.assert_allclose(tr.F_bar_sem, 0.5 * F_sem, atol=1e-12)
    np.testing.assert_allclose(tr.out, 0.5 * (F_bar_E + 0.5 * F_sem), atol=1e-12)


def test_esem_zero_image_leaves_semantic_half_empty():
    w = identity_net_weights(CFG).esem
    F_E = feats(14)
    tr = esem_trace(np.zeros_like(F_E), F_E, w)
    np.testing.assert_array_equal(tr.F_sem, 0.0)
    np.testing.assert_array_equal(tr.F_bar_sem, 0.0)
    np.testing.assert_allclose(tr.F_bar_E, motion_mean(F_E) + F_E, atol=1e-12)
    np.testing.assert_allclose(tr.out, 0.5 * tr.F_bar_E, atol=1e-12)


def test_esem_saturated_channel_attention():
    w = identity_net_weights(CFG).esem
    r = w.se_expand.in_channels
    w = w.model_copy(update={"se_expand": ConvWeights.pointwise(np.zeros((N, r)), np.full(N, 40.0))})
    tr = esem_trace(feats(8), feats(9), w)
    np.testing.assert_array_equal(tr.beta, 1.0)
    np.testing.assert_array_equal(tr.F_sem, tr.F_hat_I)


def test_esem_closed_spatial_gate():
    w = identity_net_weights(CFG).esem
    w = w.model_copy(update={"spatial_pw": ConvWeights.pointwise(np.zeros((1, N)), np.array([-1000.0]))})
    tr = esem_trace(feats(10), feats(11), w)
    np.testing.assert_array_equal(tr.spatial_gate, 0.0)
    np.testing.assert_array_equal(tr.F_bar_sem, 0.0)


def test_esem_rejects_mismatched_temporal_config():
    w = identity_net_weights(CFG).esem
    w = w.model_copy(update={"temporal_cfg": MrmConfig(C=1, T=2)})
    with pytest.raises(ShapeMismatchError):
        esem_forward(feats(0), feats(1), w)


def test_random_weights_forward():
    weights = random_net_weights(CFG, seed=5)
    F_I, F_E = feats(12), feats(13)
    a = esem_forward(F_I, F_E, weights.esem)
    b = msem_forward(F_E, F_I, weights.msem)
    assert a.shape == b.shape == (1, N, H, W)
    assert np.isfinite(a).all() and np.isfinite(b).all()
    np.testing.assert_array_equal(a, esem_forward(F_I, F_E, weights.esem))


# -------------------- Random weights --------------------


def test_msem_matches_step_composition():
    w = random_net_weights(CFG, seed=31).msem
    F_E, F_I = feats(32), feats(33)
    S = dwconv3x3(dwconv3x3(F_E - upsample2(downsample2(F_E)), w.hf_dw1), w.hf_dw2)
    F1 = F_E * S + F_E
    F_mix = conv1x1(np.concatenate([F1, F_I], axis=1), w.mix_pw)
    F_mix = dwconv3x3(dwconv3x3(F_mix, w.mix_dw1), w.mix_dw2)
    gamma = 1.0 / (1.0 + np.exp(-conv1x1(F_mix, w.gate_pw)))
    out = conv1x1(np.concatenate([F_mix, gamma * F1], axis=1), w.out_pw)
    np.testing.assert_allclose(msem_forward(F_E, F_I, w), out, rtol=0, atol=1e-8)


def test_esem_matches_step_composition():
    w = random_net_weights(CFG, seed=34).esem
    F_I, F_E = feats(35), feats(36)
    F_hat = dwconv3x3(conv1x1(F_I, w.enc_pw), w.enc_dw)
    squeezed = F_hat.mean(axis=(2, 3), keepdims=True)
    beta = 1.0 / (1.0 + np.exp(-conv1x1(np.maximum(conv1x1(squeezed, w.se_reduce), 0.0), w.se_expand)))
    F_mix = conv1x1(np.concatenate([beta * F_hat, F_E], axis=1), w.fuse_pw)
    semantic, event = F_mix[:, :N], F_mix[:, N:]
    F_bar_E = motion_attention(event, CFG, w.temporal)
    gate = 1.0 / (1.0 + np.exp(-conv1x1(dwconv3x3(semantic, w.spatial_dw), w.spatial_pw)))
    out = conv1x1(np.concatenate([F_bar_E, gate * semantic], axis=1), w.out_pw)
    np.testing.assert_allclose(esem_forward(F_I, F_E, w), out, rtol=0, atol=1e-8)


def test_random_configs_preserve_shape():
    rng = np.random.default_rng(37)
    for _ in range(10):
        L = int(rng.integers(1, 3))
        cfg = MrmConfig(C=L * int(rng.integers(1, 3)), T=L * int(rng.integers(1, 3)), L=L)
        h, wd = 2 * int(rng.integers(1, 4)), 2 * int(rng.integers(1, 4))
        weights = random_net_weights(cfg, seed=int(rng.integers(1000)))
        F_I, F_E = rng.normal(size=(2, 1, cfg.N, h, wd))
        shape = (1, cfg.N, h, wd)
        assert all(x.shape == shape for x in mrm_forward(F_I, F_E, cfg, weights.mrm))
        assert msem_forward(F_E, F_I, weights.msem).shape == shape
        assert esem_forward(F_I, F_E, weights.esem).shape == shape


@pytest.mark.parametrize("seed", [40, 41, 42])
def test_gates_strictly_inside_unit_interval(seed):
    weights = random_net_weights(CFG, seed=seed)
    F_I, F_E = feats(seed), feats(seed + 100)
    m = msem_trace(F_E, F_I, weights.msem)
    e = esem_trace(F_I, F_E, weights.esem)
    for gate in (m.gamma, e.beta, e.spatial_gate):
        assert ((gate > 0.0) & (gate < 1.0)).all()
    assert (np.abs(m.F2) <= np.abs(m.F1)).all()
    assert (np.abs(e.F_sem) <= np.abs(e.F_hat_I)).all()
