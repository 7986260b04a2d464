import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from giamic import tensor as T
from giamic.config import ModelConfig
from giamic.errors import ContractError, DimensionError
from giamic.mir import (align, init_mig, mic_loss, mig_attend, mig_block, mig_mask, mig_refine, mir_forward,
                        shared_query, skl)
from giamic.msr import init_gia, msr_forward
from giamic.params import subset
from oracles import attention_rows, central_diff, layer_norm, mir_straight_line, skl_loop

SKL_HAND_CASE = 0.43944491546724385  # scalar-loop oracle, rows [0.5, 0.5] vs [0.9, 0.1]


def mig_params(rng, d, ksize=3):
    params = init_mig(ModelConfig(d=d, n_heads=1, refine_ksize=ksize), rng)
    return subset(params, "mig.V")


def test_shared_query_single_steps(rng):
    H = [rng.normal(size=(1, 3)) for _ in range(3)]
    q = shared_query(*(T.Tensor(h) for h in H)).data
    np.testing.assert_array_equal(q, np.vstack(H))


@pytest.mark.parametrize("k,m,n", [(2, 3, 4), (1, 1, 1), (5, 2, 3)])
def test_shared_query_slices_recover_inputs(k, m, n, rng):
    H = [rng.normal(size=(t, 2)) for t in (k, m, n)]
    q = shared_query(*(T.Tensor(h) for h in H)).data
    assert q.shape[0] == k + m + n
    assert np.array_equal(q[:k], H[0])
    assert np.array_equal(q[k:k + m], H[1])
    assert np.array_equal(q[k + m:], H[2])


def test_mig_attend_single_key(rng):
    p = mig_params(rng, 3)
    H_M = rng.normal(size=(1, 3))
    out = mig_attend(T.Tensor(rng.normal(size=(6, 3))), T.Tensor(H_M), p).data
    np.testing.assert_allclose(out, np.repeat(H_M @ p["W_V"].data, 6, axis=0), atol=1e-12)


def test_mig_attend_uniform(rng):
    p = mig_params(rng, 3)
    p["W_Q"].data[...] = 0
    p["W_V"].data[...] = np.eye(3)
    H_M = rng.normal(size=(4, 3))
    out = mig_attend(T.Tensor(rng.normal(size=(6, 3))), T.Tensor(H_M), p).data
    np.testing.assert_allclose(out, np.repeat(H_M.mean(0, keepdims=True), 6, axis=0), atol=1e-12)


def test_mig_attend_matches_oracle(rng):
    p = mig_params(rng, 2)
    Q, K = rng.normal(size=(5, 2)), rng.normal(size=(3, 2))
    expected = attention_rows(Q, K, p["W_Q"].data, p["W_K"].data, p["W_V"].data)
    np.testing.assert_allclose(mig_attend(T.Tensor(Q), T.Tensor(K), p).data, expected, atol=1e-12)


def test_align_places_segment(rng):
    H_S = rng.normal(size=(3, 2))
    canvas = align(T.Tensor(H_S), "S", (2, 3, 4)).data
    assert canvas.shape == (9, 2)
    assert np.array_equal(canvas[2:5], H_S)
    assert not canvas[:2].any() and not canvas[5:].any()


def test_align_wrong_length():
    with pytest.raises(ContractError):
        align(T.Tensor(np.ones((2, 2))), "T", (2, 3, 4))


def test_zero_mask_kernel_halves(rng):
    p = mig_params(rng, 3)
    p["mask.kernel"].data[...] = 0
    share = rng.normal(size=(6, 3))
    out = mig_mask(T.Tensor(share), T.Tensor(rng.normal(size=(6, 3))), T.Tensor(rng.normal(size=(6, 3))), p)
    np.testing.assert_array_equal(out.data, 0.5 * share)


def test_zero_share_annihilates(rng):
    p = mig_params(rng, 3)
    out = mig_mask(T.Tensor(np.zeros((6, 3))), T.Tensor(rng.normal(size=(6, 3))),
                   T.Tensor(rng.normal(size=(6, 3))), p)
    assert not out.data.any()


def test_mask_composition_oracle(rng):
    p = mig_params(rng, 2)
    p["mask.bias"].data[...] = rng.normal(size=2)
    share, aligned, q = (rng.normal(size=(5, 2)) for _ in range(3))
    z = np.concatenate([aligned, q], axis=1) @ p["mask.kernel"].data[0] + p["mask.bias"].data
    act = np.where(z > 0, z, 0.25 * z)
    expected = share / (1 + np.exp(-act))
    out = mig_mask(T.Tensor(share), T.Tensor(aligned), T.Tensor(q), p).data
    np.testing.assert_allclose(out, expected, atol=1e-12)
    assert ((out / share > 0) & (out / share < 1)).all()


def test_mask_shape_contract(rng):
    p = mig_params(rng, 2)
    with pytest.raises(ContractError):
        mig_mask(T.Tensor(np.ones((5, 2))), T.Tensor(np.ones((4, 2))), T.Tensor(np.ones((5, 2))), p)


def test_refine_zero_kernel_is_residual_norm(rng):
    p = mig_params(rng, 3)
    p["refine.kernel"].data[...] = 0
    q = rng.normal(size=(6, 3))
    out = mig_refine(T.Tensor(rng.normal(size=(6, 3))), T.Tensor(q), p).data
    np.testing.assert_allclose(out, layer_norm(q), atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_refine_shape_any_stride(stride, rng):
    p = mig_params(rng, 3)
    out = mig_refine(T.Tensor(rng.normal(size=(7, 3))), T.Tensor(rng.normal(size=(7, 3))), p, stride=stride)
    assert out.shape == (7, 3)


def test_refine_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        mig_refine(T.Tensor(np.ones((4, 3))), T.Tensor(np.ones((5, 3))), mig_params(rng, 3))


def build_mir(rng, lengths, d):
    cfg = ModelConfig(d=d, n_heads=1)
    params = {**init_gia(cfg, rng), **init_mig(cfg, rng)}
    for k, v in params.items():
        if k.endswith("bias") or k.endswith("b_g"):
            v.data[...] = rng.normal(size=v.shape) * 0.3
    H = {m: rng.normal(size=(t, d)) for m, t in zip("VST", lengths)}
    return cfg, params, H


def run_mir(cfg, params, H):
    Ht = {m: T.Tensor(v) for m, v in H.items()}
    msr = msr_forward(Ht, params)
    return msr, mir_forward(Ht, {m: msr[m] for m in "VST"}, msr.concat, params, cfg)


def test_mir_shape_law_unit_lengths(rng):
    cfg, params, H = build_mir(rng, (1, 1, 1), 2)
    _, out = run_mir(cfg, params, H)
    assert out.mir.shape == (9, 2)
    assert out.fus.shape == (12, 2)


def test_mir_without_msr_segment(rng):
    cfg, params, H = build_mir(rng, (2, 1, 3), 2)
    Ht = {m: T.Tensor(v) for m, v in H.items()}
    msr = msr_forward(Ht, params)
    out = mir_forward(Ht, {m: msr[m] for m in "VST"}, None, params, cfg)
    assert out.fus.shape == (18, 2)


def test_mir_matches_straight_line_oracle(rng):
    cfg, params, H = build_mir(rng, (2, 3, 2), 3)
    msr, out = run_mir(cfg, params, H)
    arrays = {k: v.data for k, v in params.items()}
    migs, mir, fus = mir_straight_line(H, {m: msr[m].data for m in "VST"}, msr.concat.data, arrays)
    np.testing.assert_allclose(out.mir.data, mir, atol=1e-12)
    np.testing.assert_allclose(out.fus.data, fus, atol=1e-12)
    for m in "VST":
        np.testing.assert_allclose(out.mig(m).data, migs[m], atol=1e-12)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 999))
def test_fused_length_law(k, m, n, seed):
    cfg, params, H = build_mir(np.random.default_rng(seed), (k, m, n), 2)
    _, out = run_mir(cfg, params, H)
    assert out.fus.shape[0] == 4 * (k + m + n)


# -- SKL --------------------------------------------------------------------


def test_skl_identical_is_zero(rng):
    A = rng.normal(size=(4, 5))
    assert abs(skl(T.Tensor(A), T.Tensor(A)).item()) < 1e-12


def test_skl_hand_case():
    value = skl(T.Tensor([[0.0, 0.0]]), T.Tensor([[math.log(9.0), 0.0]])).item()
    assert abs(value - SKL_HAND_CASE) < 1e-9
    assert abs(value - 0.5 * (0.51083 + 0.36806)) < 1e-5


def test_skl_matches_loop_oracle(rng):
    P, Q = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)) * 2
    assert abs(skl(T.Tensor(P), T.Tensor(Q)).item() - skl_loop(P, Q)) < 1e-12


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(2, 6))
def test_skl_symmetric_and_nonnegative(seed, t, d):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(t, d)) * 4, rng.normal(size=(t, d)) * 4
    ab = skl(T.Tensor(A), T.Tensor(B)).item()
    ba = skl(T.Tensor(B), T.Tensor(A)).item()
    assert ab == ba
    assert ab >= -1e-12


def test_skl_shape_mismatch():
    with pytest.raises(DimensionError):
        skl(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((3, 3))))


def test_skl_batched(rng):
    P, Q = rng.normal(size=(4, 3, 5)), rng.normal(size=(4, 3, 5))
    batched = skl(T.Tensor(P), T.Tensor(Q)).data
    assert batched.shape == (4,)
    np.testing.assert_allclose(batched, [skl_loop(P[i], Q[i]) for i in range(4)], atol=1e-12)


def test_mic_loss_identical_zero(rng):
    A = rng.normal(size=(5, 4))
    assert mic_loss(T.Tensor(A), T.Tensor(A), T.Tensor(A)).item() == 0.0


def test_mic_loss_zero_iff_rows_coincide(rng):
    A = rng.normal(size=(5, 4))
    # a per-row constant shift leaves the feature softmax unchanged
    B = A + rng.normal(size=(5, 1))
    assert mic_loss(T.Tensor(A), T.Tensor(B), T.Tensor(A)).item() < 1e-9
    C = A.copy()
    C[2, 1] += 0.5
    assert mic_loss(T.Tensor(A), T.Tensor(A), T.Tensor(C)).item() > 1e-6


def test_mic_loss_cyclic_invariance(rng):
    V, S, Tm = (T.Tensor(rng.normal(size=(4, 3))) for _ in range(3))
    assert abs(mic_loss(V, S, Tm).item() - mic_loss(S, Tm, V).item()) < 1e-14


def test_mic_loss_matches_oracle(rng):
    V, S, Tm = (rng.normal(size=(4, 3)) for _ in range(3))
    expected = skl_loop(V, S) + skl_loop(S, Tm) + skl_loop(Tm, V)
    assert abs(mic_loss(T.Tensor(V), T.Tensor(S), T.Tensor(Tm)).item() - expected) < 1e-12


def test_mic_loss_gradcheck_over_mig_params(rng):
    cfg, params, H = build_mir(rng, (2, 2, 1), 3)
    Ht = {m: T.Tensor(v) for m, v in H.items()}
    H_VST = shared_query(*(Ht[m] for m in "VST"))

    def loss():
        migs = [mig_block(H_VST, Ht[m], m, (2, 2, 1), subset(params, f"mig.{m}"), cfg).mig for m in "VST"]
        return mic_loss(*migs)

    mig_names = [k for k in params if k.startswith("mig.")]
    for k in mig_names:
        params[k].grad = None
    T.backward(loss(), [params[k] for k in mig_names])
    for k in mig_names:
        numeric = central_diff(lambda: loss().item(), params[k].data)
        err = np.abs(params[k].grad - numeric) / np.maximum(1, np.abs(numeric))
        assert err.max() < 1e-4, k
