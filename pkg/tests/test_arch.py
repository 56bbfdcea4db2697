"""Architecture blocks against straight-line numpy compositions, and model-level contracts."""
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rarunet import ops
from rarunet.arch import (
    ArchConfig,
    attention_refine,
    build_model,
    channel_attention,
    decoder_block,
    param_count,
    plan_parameters,
    residual_block_path,
    residual_encoder_block,
    spatial_attention,
)
from rarunet.adl import dice_loss
from rarunet.tensor import ShapeError, Tensor
from test_tensor import brute_conv2d, brute_conv_transpose


def np_relu(a):
    return np.maximum(a, 0.0)


def np_sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def conv_pair(rng, cin, cout, k=3, scale=0.4):
    return rng.standard_normal((cout, cin, k, k)) * scale, rng.standard_normal(cout) * 0.1


def spatial_loop(f):
    n, c, h, w = f.shape
    out = np.zeros((n, 1, h, w))
    for i in range(n):
        for r in range(h):
            for q in range(w):
                col = f[i, :, r, q]
                out[i, 0, r, q] = np_sigmoid(sum(col) / c + max(col))
    return out


def channel_loop(f):
    n, c, h, w = f.shape
    out = np.zeros((n, c, 1, 1))
    for i in range(n):
        for k in range(c):
            vals = f[i, k].ravel()
            out[i, k, 0, 0] = np_sigmoid(vals.sum() / vals.size + vals.max())
    return out


ALL_TOGGLES = list(itertools.product([False, True], repeat=3))


def config_for(enc, skip, att, **kw):
    return ArchConfig(use_residual_encoders=enc, use_residual_skips=skip, use_attention_decoders=att, **kw)


# ---------------------------------------------------------------- blocks

def test_encoder_block_off_with_zero_weights_is_zero():
    x = T(np.random.default_rng(0).standard_normal((2, 3, 8, 8)))
    c1 = (T(np.zeros((6, 3, 3, 3))), T(np.zeros(6)))
    c2 = (T(np.zeros((6, 6, 3, 3))), T(np.zeros(6)))
    out = residual_encoder_block(x, c1, c2, residual=False)
    assert out.shape == (2, 6, 8, 8) and not out.data.any()


@pytest.mark.parametrize("conv2_out", [4, 8])
def test_encoder_block_matches_composition(conv2_out):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 4, 8, 8))
    w1, b1 = conv_pair(rng, 4, 8)
    w2, b2 = conv_pair(rng, 8, conv2_out)
    out = residual_encoder_block(T(x), (T(w1), T(b1)), (T(w2), T(b2)), residual=True).data
    a = np_relu(brute_conv2d(x, w1, b1, 1, 1))
    b = np_relu(brute_conv2d(a, w2, b2, 1, 1))
    np.testing.assert_allclose(out, np.concatenate([x, b], axis=1), atol=1e-12)
    np.testing.assert_array_equal(out[:, :4], x)


def test_residual_path_examples():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 4, 4))
    zero = [(T(np.zeros((2, 2, 3, 3))), T(np.zeros(2)))]
    np.testing.assert_array_equal(residual_block_path(T(x), zero).data, np_relu(x))
    pos = np.abs(x)
    np.testing.assert_array_equal(residual_block_path(T(pos), zero * 3).data, pos)
    w, b = conv_pair(rng, 2, 2)
    out = residual_block_path(T(x), [(T(w), T(b))]).data
    np.testing.assert_allclose(out, np_relu(np_relu(brute_conv2d(x, w, b, 1, 1)) + x), atol=1e-12)
    with pytest.raises(ValueError):
        residual_block_path(T(x), [])


def test_spatial_attention_examples():
    assert np.all(spatial_attention(T(np.zeros((1, 3, 4, 4)))).data == 0.5)
    f = np.random.default_rng(3).standard_normal((1, 1, 4, 4))
    np.testing.assert_allclose(spatial_attention(T(f)).data, np_sigmoid(2 * f), atol=1e-15)
    f = np.random.default_rng(4).standard_normal((1, 3, 4, 4))
    np.testing.assert_allclose(spatial_attention(T(f)).data, spatial_loop(f), atol=1e-14)


def test_channel_attention_examples():
    assert np.all(channel_attention(T(np.zeros((1, 3, 4, 4)))).data == 0.5)
    f = np.random.default_rng(5).standard_normal((2, 3, 1, 1))
    np.testing.assert_allclose(channel_attention(T(f)).data, np_sigmoid(2 * f), atol=1e-15)
    f = np.random.default_rng(6).standard_normal((1, 4, 3, 3))
    np.testing.assert_allclose(channel_attention(T(f)).data, channel_loop(f), atol=1e-14)


def test_learned_attention_matches_composition():
    rng = np.random.default_rng(7)
    f = rng.standard_normal((1, 4, 5, 5))
    kernel = rng.standard_normal((1, 2, 7, 7)) * 0.2
    w1, b1 = conv_pair(rng, 4, 2, k=1)
    w2, b2 = conv_pair(rng, 2, 4, k=1)
    out = attention_refine(T(f), T(kernel), (T(w1), T(b1), T(w2), T(b2))).data
    pooled = np.concatenate([f.mean(axis=1, keepdims=True), f.max(axis=1, keepdims=True)], axis=1)
    ws = np_sigmoid(brute_conv2d(pooled, kernel, None, 1, 3))
    g = f * ws

    def mlp(v):
        return brute_conv2d(np_relu(brute_conv2d(v, w1, b1, 1, 0)), w2, b2, 1, 0)
    wc = np_sigmoid(mlp(g.mean(axis=(2, 3), keepdims=True)) + mlp(g.max(axis=(2, 3), keepdims=True)))
    np.testing.assert_allclose(out, g * wc, atol=1e-12)


def test_attention_refine_examples():
    assert not attention_refine(T(np.zeros((1, 3, 4, 4)))).data.any()
    v = 5.0
    out = attention_refine(T(np.full((1, 2, 3, 3), v))).data
    s = np_sigmoid(2 * v)
    np.testing.assert_allclose(out, v * s * np_sigmoid(2 * v * s))
    assert np.all(out < v)
    f = np.random.default_rng(8).standard_normal((1, 2, 4, 4))
    g = f * spatial_loop(f)
    np.testing.assert_allclose(attention_refine(T(f)).data, g * channel_loop(g), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 20.0))
def test_attention_contracts_and_keeps_sign(seed, scale):
    f = np.random.default_rng(seed).standard_normal((1, 3, 4, 4)) * scale
    out = attention_refine(T(f)).data
    assert np.all(np.abs(out) <= np.abs(f))
    assert np.all(np.sign(out) == np.sign(f))


def test_decoder_block_zero_cases():
    rng = np.random.default_rng(9)
    skip, below = T(rng.standard_normal((1, 2, 8, 8))), T(rng.standard_normal((1, 4, 4, 4)))
    up = (T(np.zeros((4, 2, 2, 2))), T(np.zeros(2)))
    c1 = (T(np.zeros((2, 4, 3, 3))), T(np.zeros(2)))
    c2 = (T(np.zeros((2, 2, 3, 3))), T(np.zeros(2)))
    out = decoder_block(skip, below, up, c1, c2)
    assert out.shape == (1, 2, 8, 8) and not out.data.any()
    out = decoder_block(skip, below, up, c1, c2, attention=True)
    assert not out.data.any()
    with pytest.raises(ShapeError):
        decoder_block(skip, T(np.zeros((1, 4, 3, 4))), up, c1, c2)


def test_decoder_block_matches_composition():
    rng = np.random.default_rng(10)
    skip, below = rng.standard_normal((1, 2, 8, 8)), rng.standard_normal((1, 4, 4, 4))
    wu, bu = rng.standard_normal((4, 2, 2, 2)) * 0.5, rng.standard_normal(2) * 0.1
    w1, b1 = conv_pair(rng, 4, 2)
    w2, b2 = conv_pair(rng, 2, 2)
    blocks = [conv_pair(rng, 2, 2) for _ in range(2)]
    out = decoder_block(T(skip), T(below), (T(wu), T(bu)), (T(w1), T(b1)), (T(w2), T(b2)),
                        skip_blocks=[(T(w), T(b)) for w, b in blocks], attention=True).data
    s = skip
    for w, b in blocks:
        s = np_relu(np_relu(brute_conv2d(s, w, b, 1, 1)) + s)
    u = brute_conv_transpose(below, wu, bu)
    y = np_relu(brute_conv2d(np.concatenate([s, u], axis=1), w1, b1, 1, 1))
    y = np_relu(brute_conv2d(y, w2, b2, 1, 1))
    g = y * spatial_loop(y)
    np.testing.assert_allclose(out, g * channel_loop(g), atol=1e-12)


# ---------------------------------------------------------------- model

def test_base1_plain_count_matches_hand_sum():
    def conv(cin, cout, k=3):
        return cout * cin * k * k + cout
    enc = conv(1, 1) + conv(1, 1) + conv(1, 2) + conv(2, 2) + conv(2, 4) + conv(4, 4) + conv(4, 8) + conv(8, 8)
    bottleneck = conv(8, 16) + conv(16, 16)
    up = (16 * 8 * 4 + 8) + (8 * 4 * 4 + 4) + (4 * 2 * 4 + 2) + (2 * 1 * 4 + 1)
    dec = conv(16, 8) + conv(8, 8) + conv(8, 4) + conv(4, 4) + conv(4, 2) + conv(2, 2) + conv(2, 1) + conv(1, 1)
    head = conv(1, 1, k=1)
    expected = enc + bottleneck + up + dec + head
    assert expected == 7692
    assert param_count(config_for(False, False, False, base_channels=1)) == expected


@pytest.mark.parametrize("attention_transform", ["learned", "none"])
def test_each_toggle_increases_count(attention_transform):
    kw = dict(attention_transform=attention_transform, base_channels=8)
    off = param_count(config_for(False, False, False, **kw))
    singles = []
    for i in range(3):
        flags = [False] * 3
        flags[i] = True
        c = param_count(config_for(*flags, **kw))
        if i == 2 and attention_transform == "none":
            assert c == off  # parameter-free gates
        else:
            assert c > off
        singles.append(c - off)
    full = param_count(config_for(True, True, True, **kw))
    assert full - off >= sum(singles)


def test_narrow_encoders_shrink_the_network():
    # conv2 gives up the channels the concatenated input takes over
    off = param_count(config_for(False, False, False, encoder_concat="narrow"))
    on = param_count(config_for(True, False, False, encoder_concat="narrow"))
    assert on < off
    plan = plan_parameters(config_for(True, False, False, encoder_concat="narrow", base_channels=4))
    assert plan["enc2.conv2.weight"].shape == (4, 8, 3, 3)
    assert plan["enc3.conv1.weight"].shape == (16, 8, 3, 3)


def test_default_counts_follow_ablation_ordering():
    rows = [(False, False, False), (False, False, True), (False, True, False), (True, False, False),
            (True, False, True), (True, True, False), (True, True, True)]
    counts = [param_count(config_for(*r)) for r in rows]
    assert counts == sorted(counts) and len(set(counts)) == len(counts)


@pytest.mark.parametrize("enc,skip,att", ALL_TOGGLES)
def test_every_parameter_is_wired(enc, skip, att):
    model = build_model(config_for(enc, skip, att, base_channels=2), seed=0, dtype=np.float64)
    for name in model.params:
        if name.endswith(".bias"):
            model.params[name].data = model.params[name].data + 0.05
    x = Tensor(np.random.default_rng(0).random((1, 1, 16, 16)))
    target = np.zeros((1, 1, 16, 16))
    target[0, 0, 4:12, 4:12] = 1
    dice_loss(model(x), target).backward()
    assert param_count(model) == param_count(model.config)
    for name, p in model.params.items():
        assert p.grad is not None, name


def test_forward_contract():
    model = build_model(ArchConfig(base_channels=2), seed=3)
    x = np.random.default_rng(1).standard_normal((2, 1, 32, 16)).astype(np.float32) * 10
    out = model(x).data
    assert out.shape == (2, 1, 32, 16)
    assert np.all(out > 0) and np.all(out < 1)
    np.testing.assert_array_equal(model(x).data, out)
    with pytest.raises(ShapeError, match="16"):
        model(np.zeros((1, 1, 24, 16), np.float32))
    with pytest.raises(ShapeError):
        model(np.zeros((1, 2, 16, 16), np.float32))


def test_same_seed_same_parameters():
    a = build_model(ArchConfig(base_channels=4), seed=11)
    b = build_model(ArchConfig(base_channels=4), seed=11)
    c = build_model(ArchConfig(base_channels=4), seed=12)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    assert any(not np.array_equal(a.params[n].data, c.params[n].data) for n in a.params if n.endswith("weight"))


def test_he_uniform_bounds():
    model = build_model(ArchConfig(base_channels=4), seed=0)
    for name, plan in plan_parameters(model.config).items():
        data = model.params[name].data
        if plan.is_bias:
            assert not data.any()
        else:
            assert np.abs(data).max() <= np.sqrt(6.0 / plan.fan_in)


def test_config_validation_and_roundtrip():
    cfg = ArchConfig(base_channels=4, use_residual_skips=False)
    assert ArchConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ArchConfig.from_dict({"base_chanels": 4})
    with pytest.raises(ValueError):
        ArchConfig(depth=3)
    with pytest.raises(ValueError):
        ArchConfig(encoder_concat="tall")
