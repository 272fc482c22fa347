import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iqfed.encoder import (
    EncoderConfig,
    EncoderParams,
    activations,
    backward,
    backward_batch,
    encode,
    forward,
    forward_flops,
    init_params,
    param_count,
    receptive_field,
    transform,
)
from iqfed.signal import IqFrame

from gradcheck import fd_check

SMALL = EncoderConfig(depth=3, kernel_size=3, channels=4, feature_dim=8)


def hand_count(depth, c_in, ch, k, d):
    total, prev = 0, c_in
    for _ in range(depth):
        total += ch * prev * k + ch + ch  # kernel, g, bias
        prev = ch
    return total + d * ch + d


def test_receptive_field_examples():
    assert receptive_field(EncoderConfig(depth=1)) == 3
    assert receptive_field(EncoderConfig(depth=3)) == 15
    assert receptive_field(EncoderConfig()) == 2047


def test_param_count_examples():
    assert param_count(EncoderConfig(depth=1, channels=4, feature_dim=4)) == 52
    cfg = EncoderConfig(depth=3, channels=5, feature_dim=7)
    wider = EncoderConfig(depth=3, channels=5, feature_dim=14)
    assert param_count(wider) - param_count(cfg) == (5 + 1) * 7
    assert 240_000 <= param_count(EncoderConfig()) <= 255_000


@given(st.integers(1, 6), st.integers(2, 5), st.integers(1, 12), st.integers(1, 20))
def test_param_count_matches_hand_count(depth, k, ch, d):
    cfg = EncoderConfig(depth=depth, kernel_size=k, channels=ch, feature_dim=d)
    assert param_count(cfg) == hand_count(depth, 2, ch, k, d)
    assert EncoderParams(cfg).flat.size == param_count(cfg)


def test_config_validation():
    for bad in (dict(depth=0), dict(kernel_size=1), dict(channels=0)):
        with pytest.raises(ValueError):
            EncoderConfig(**bad)
    assert [EncoderConfig().dilation(i) for i in range(4)] == [1, 2, 4, 8]


def test_init_properties():
    cfg = EncoderConfig(depth=4, channels=16, feature_dim=32)
    a = init_params(cfg, np.random.default_rng(0))
    b = init_params(cfg, np.random.default_rng(0))
    assert a.flat.tobytes() == b.flat.tobytes()
    for i in range(cfg.depth):
        v, g, bias = a.layer(i)
        assert np.all(bias == 0) and np.all(g == 1)
        limit = np.sqrt(6 / (v.shape[1] * v.shape[2] + v.shape[0] * v.shape[2]))
        assert np.max(np.abs(v)) <= limit
    assert np.all(a["head.b"] == 0)


def test_init_kernel_mean_near_zero():
    cfg = EncoderConfig(depth=10, channels=40, feature_dim=8)
    p = init_params(cfg, np.random.default_rng(1))
    entries = np.concatenate([p.layer(i)[0].ravel() for i in range(cfg.depth)])
    assert entries.size >= 10**4
    # 10^5 entries overall from repeated draws
    more = np.concatenate([entries] + [np.concatenate([init_params(cfg, np.random.default_rng(s)).layer(i)[0].ravel() for i in range(cfg.depth)]) for s in range(2, 4)])
    assert abs(more.mean()) <= 3 * more.std() / np.sqrt(more.size)


def test_flat_structured_roundtrip():
    p = init_params(SMALL, np.random.default_rng(2))
    q = EncoderParams.from_structured(SMALL, p.structured())
    assert q.flat.tobytes() == p.flat.tobytes()
    p["conv1.g"][0] = 5.0
    assert p.flat[p.segments()[4].start] == 5.0  # views write through
    with pytest.raises(ValueError):
        EncoderParams(SMALL, np.zeros(3))


def test_zero_input_gives_zero_feature():
    p = init_params(SMALL, np.random.default_rng(3))
    assert np.all(forward(p, np.zeros((2, 16))) == 0)


def test_identity_kernel_example():
    cfg = EncoderConfig(depth=1, kernel_size=3, channels=1, feature_dim=1, input_channels=1)
    p = EncoderParams(cfg)
    p["conv0.v"][...] = np.array([[[0.0, 0.0, 1.0]]])
    p["conv0.g"][...] = 1.0
    z = activations(p, np.array([[[1.0, 2.0, 3.0]]]))[0]["z"]
    np.testing.assert_allclose(z[0, 0], [1, 2, 3])


def test_input_errors():
    p = init_params(SMALL, np.random.default_rng(0))
    with pytest.raises(ValueError):
        encode(p, np.zeros((1, 2, 0)))
    with pytest.raises(ValueError):
        encode(p, np.zeros((1, 3, 8)))
    with pytest.raises(ValueError):
        backward(p, np.zeros((2, 8)), np.zeros(3))


@given(st.integers(0, 2**32), st.integers(2, 40))
def test_causality(seed, t):
    rng = np.random.default_rng(seed)
    p = init_params(SMALL, rng)
    p.flat += rng.normal(0, 0.1, p.flat.size)
    x = rng.normal(size=(1, 2, t))
    cut = int(rng.integers(1, t))
    full, prefix = activations(p, x), activations(p, x[:, :, :cut])
    for a, b in zip(full, prefix):
        assert np.max(np.abs(a["h"][:, :, :cut] - b["h"])) < 1e-12


@given(st.integers(0, 2**32), st.integers(0, 2))
def test_weight_norm_scale_equivariance(seed, layer):
    rng = np.random.default_rng(seed)
    p = init_params(SMALL, rng)
    x = rng.normal(size=(1, 2, 20))
    before = activations(p, x)
    q = p.copy()
    q[f"conv{layer}.g"][...] *= 2
    after = activations(q, x)
    np.testing.assert_allclose(after[layer]["z"], 2 * before[layer]["z"], rtol=1e-12, atol=1e-12)


def test_forward_accepts_frame_types():
    p = init_params(SMALL, np.random.default_rng(4))
    z = np.exp(1j * np.arange(10))
    a = forward(p, IqFrame(z))
    b = forward(p, z)
    c = forward(p, np.stack([z.real, z.imag]))
    assert a.tobytes() == b.tobytes() == c.tobytes()


def test_transform_matches_encode():
    p = init_params(SMALL, np.random.default_rng(5))
    x = np.random.default_rng(6).normal(size=(7, 2, 12))
    np.testing.assert_allclose(transform(p, x, batch_size=3), encode(p, x)[0], rtol=1e-12, atol=1e-14)
    assert transform(p, np.zeros((0, 2, 12))).shape == (0, 8)


def test_padded_lengths_match_unpadded():
    p = init_params(SMALL, np.random.default_rng(7))
    x = np.random.default_rng(8).normal(size=(1, 2, 9))
    padded = np.concatenate([x, np.full((1, 2, 6), 50.0)], axis=2)
    np.testing.assert_allclose(encode(p, padded, lengths=[9])[0], encode(p, x)[0], atol=1e-12)


def test_backward_zero_and_dead_paths():
    p = init_params(SMALL, np.random.default_rng(9))
    x = np.random.default_rng(10).normal(size=(2, 16))
    assert np.all(backward(p, x, np.zeros(8)) == 0)
    up = np.zeros(8)
    up[0] = 1.0
    g = EncoderParams(SMALL, backward(p, x, up))
    assert np.all(g["head.w"][1:] == 0) and np.all(g["head.b"][1:] == 0)


def test_backward_batch_is_sum_of_single():
    p = init_params(SMALL, np.random.default_rng(11))
    rng = np.random.default_rng(12)
    x = rng.normal(size=(3, 2, 10))
    up = rng.normal(size=(3, 8))
    _, cache = encode(p, x, keep_cache=True)
    total = sum(backward(p, x[i], up[i]) for i in range(3))
    np.testing.assert_allclose(backward_batch(p, cache, up), total, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = init_params(SMALL, rng)
    x = rng.normal(size=(2, 32))
    up = rng.normal(size=8)
    analytic = backward(p, x, up)
    worst, checked, skipped = fd_check(p, x, lambda q: float(forward(q, x) @ up), analytic, h=1e-4)
    assert worst < 1e-4
    assert checked > 0.9 * (checked + skipped)


def test_forward_flops_formula():
    cfg = EncoderConfig(depth=2, kernel_size=3, channels=4, feature_dim=8)
    f = forward_flops(cfg, 10)
    assert f["conv"] == 2 * (4 * 2 * 3 + 4 * 4 * 3) * 10
    assert f["head"] == 2 * 8 * 4
