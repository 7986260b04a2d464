import numpy as np
import pytest
from hypothesis import given, strategies as st

from giamic import tensor as T
from giamic.config import ModelConfig
from giamic.errors import DimensionError
from giamic.msr import (DIRECTIONS, cross_attend, direction_key, gate, gated_mix, gia_fuse, init_gia,
                        msr_forward)
from giamic.params import subset
from oracles import attention_rows, gate_vector, msr_straight_line


def direction_params(rng, d, bias=0.0):
    p = {k: T.parameter(rng.uniform(-1, 1, size=(d, d))) for k in ("W_Q", "W_K", "W_V", "W_g")}
    p["b_g"] = T.parameter(np.full(d, bias))
    return p


def test_single_key_returns_value_row(rng):
    p = direction_params(rng, 3)
    HA, HB = rng.normal(size=(4, 3)), rng.normal(size=(1, 3))
    out = cross_attend(T.Tensor(HA), T.Tensor(HB), p).data
    np.testing.assert_allclose(out, np.repeat(HB @ p["W_V"].data, 4, axis=0), atol=1e-12)


def test_zero_query_key_gives_uniform_mean(rng):
    p = direction_params(rng, 3)
    p["W_Q"].data[...] = 0
    p["W_K"].data[...] = 0
    p["W_V"].data[...] = np.eye(3)
    HB = rng.normal(size=(5, 3))
    out = cross_attend(T.Tensor(rng.normal(size=(2, 3))), T.Tensor(HB), p).data
    np.testing.assert_allclose(out, np.repeat(HB.mean(0, keepdims=True), 2, axis=0), atol=1e-12)


def test_cross_attend_matches_row_oracle(rng):
    p = direction_params(rng, 2)
    HA, HB = rng.normal(size=(2, 2)), rng.normal(size=(3, 2))
    expected = attention_rows(HA, HB, *(p[k].data for k in ("W_Q", "W_K", "W_V")))
    np.testing.assert_allclose(cross_attend(T.Tensor(HA), T.Tensor(HB), p).data, expected, atol=1e-12)


def test_cross_attend_width_mismatch(rng):
    with pytest.raises(DimensionError):
        cross_attend(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 4))), direction_params(rng, 3))


def test_gate_half_when_zero(rng):
    p = direction_params(rng, 4)
    p["W_g"].data[...] = 0
    G = gate(T.Tensor(rng.normal(size=(3, 4))), p).data
    assert G.shape == (1, 4)
    assert np.all(G == 0.5)


def test_gate_saturates_with_large_bias(rng):
    p = direction_params(rng, 4, bias=50.0)
    p["W_g"].data[...] = 0
    G = gate(T.Tensor(rng.normal(size=(3, 4))), p).data
    assert np.abs(G - 1).max() < 1e-9


def test_gate_matches_composition_oracle(rng):
    p = direction_params(rng, 5, bias=0.3)
    H = rng.normal(size=(4, 5))
    np.testing.assert_allclose(gate(T.Tensor(H), p).data[0], gate_vector(H, p["W_g"].data, p["b_g"].data),
                               atol=1e-12)


@pytest.mark.parametrize("bias,which", [(50.0, "attended"), (-50.0, "original")])
def test_gate_limits(bias, which, rng):
    p_ab, p_ba = direction_params(rng, 3, bias), direction_params(rng, 3, bias)
    for p in (p_ab, p_ba):
        p["W_g"].data[...] = 0
    HA, HB = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
    out_a, out_b = gia_fuse(T.Tensor(HA), T.Tensor(HB), p_ab, p_ba)
    expected_a = cross_attend(T.Tensor(HA), T.Tensor(HB), p_ab).data if which == "attended" else HA
    np.testing.assert_allclose(out_a.data, expected_a, atol=1e-9)
    assert out_b.shape == (4, 3)


def test_gate_midpoint(rng):
    p = direction_params(rng, 3)
    p["W_g"].data[...] = 0
    HA, HB = rng.normal(size=(2, 3)), rng.normal(size=(3, 3))
    out, _ = gia_fuse(T.Tensor(HA), T.Tensor(HB), p, direction_params(rng, 3))
    H_ab = cross_attend(T.Tensor(HA), T.Tensor(HB), p).data
    np.testing.assert_allclose(out.data, 0.5 * (H_ab + HA), atol=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_convex_combination_bound(seed, ta, tb, d):
    rng = np.random.default_rng(seed)
    p = direction_params(rng, d, bias=rng.normal())
    HA, HB = T.Tensor(rng.normal(size=(ta, d)) * 3), T.Tensor(rng.normal(size=(tb, d)) * 3)
    H_ab = cross_attend(HA, HB, p)
    G = gate(H_ab, p)
    out = gated_mix(G, H_ab, HA).data
    lo, hi = np.minimum(H_ab.data, HA.data), np.maximum(H_ab.data, HA.data)
    assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()
    assert (G.data > 0).all() and (G.data < 1).all()


def tiny_msr(rng, lengths=(3, 4, 5), d=2):
    cfg = ModelConfig(d=d, n_heads=1)
    params = init_gia(cfg, rng)
    H = {m: rng.normal(size=(t, d)) for m, t in zip("VST", lengths)}
    return cfg, params, H


def test_closed_gates_double_inputs(rng):
    cfg, params, H = tiny_msr(rng)
    for a, b in DIRECTIONS:
        params[direction_key(a, b) + ".W_g"].data[...] = 0
        params[direction_key(a, b) + ".b_g"].data[...] = -60.0
    out = msr_forward({m: T.Tensor(v) for m, v in H.items()}, params)
    for m in "VST":
        np.testing.assert_allclose(out[m].data, 2 * H[m], atol=1e-12)


def test_msr_shape_law(rng):
    cfg, params, H = tiny_msr(rng, (3, 4, 5), 2)
    out = msr_forward({m: T.Tensor(v) for m, v in H.items()}, params)
    assert out.concat.shape == (12, 2)
    assert np.array_equal(out.concat.data[:3], out.V.data)
    assert np.array_equal(out.concat.data[3:7], out.S.data)
    assert np.array_equal(out.concat.data[7:], out.T.data)


def test_msr_matches_straight_line_oracle(rng):
    cfg, params, H = tiny_msr(rng, (2, 3, 2), 3)
    for k, v in params.items():
        if k.endswith("b_g"):
            v.data[...] = rng.normal(size=v.shape)
    out = msr_forward({m: T.Tensor(v) for m, v in H.items()}, params)
    msr, concat = msr_straight_line(H, {k: v.data for k, v in params.items()})
    np.testing.assert_allclose(out.concat.data, concat, atol=1e-12)
    for m in "VST":
        np.testing.assert_allclose(out[m].data, msr[m], atol=1e-12)


def test_every_gia_parameter_gets_gradient(rng):
    cfg, params, H = tiny_msr(rng, (3, 2, 4), 4)
    out = msr_forward({m: T.Tensor(v) for m, v in H.items()}, params)
    weights = T.Tensor(rng.normal(size=out.concat.shape))
    T.backward(T.sum(T.sigmoid(out.concat) * weights), params.values())
    for name, p in params.items():
        assert np.abs(p.grad).max() > 0, name


def test_directions_have_independent_parameters(rng):
    cfg = ModelConfig(d=4, n_heads=1)
    params = init_gia(cfg, rng)
    assert len(DIRECTIONS) == 6
    a = subset(params, "gia.V->S")["W_Q"].data
    b = subset(params, "gia.S->V")["W_Q"].data
    assert not np.array_equal(a, b)
