"""Residual blocks, volume flattening, and the gated block contracts."""

import time

import numpy as np
import pytest

from spineseg import Tensor, grad_check, tsum
from spineseg.mamba import (flatten_volume, init_mamba_block, init_res_block,
                            mamba_block, mamba_inner, residual_block,
                            unflatten_volume)


def _zero_block(p):
    p.kernel.data = np.zeros_like(p.kernel.data)
    p.beta.data = np.zeros_like(p.beta.data)


def test_residual_block_identity_when_zeroed():
    rng = np.random.default_rng(0)
    p = init_res_block(4, rng)
    _zero_block(p)
    x = Tensor(rng.standard_normal((1, 4, 5, 5, 5)))
    out = residual_block(x, p)
    np.testing.assert_array_equal(out.data, x.data)


def test_residual_block_shape_contract():
    rng = np.random.default_rng(1)
    p = init_res_block(4, rng)
    x = Tensor(rng.standard_normal((1, 4, 8, 8, 8)))
    assert residual_block(x, p).shape == (1, 4, 8, 8, 8)


def test_residual_block_gradient():
    rng = np.random.default_rng(2)
    p = init_res_block(2, rng)
    x = Tensor(rng.standard_normal((1, 2, 4, 4, 4)))
    report = grad_check(
        lambda xt, k, g, b: tsum(residual_block(
            xt, type(p)(kernel=k, gamma=g, beta=b))),
        [x, p.kernel, p.gamma, p.beta], tol=1e-4, max_probes=60)
    assert report.passed, report


def test_flatten_order_is_row_major():
    x = Tensor(np.arange(8.0).reshape(1, 1, 2, 2, 2))
    s = flatten_volume(x)
    np.testing.assert_array_equal(s.data.reshape(-1), np.arange(8.0))


def test_flatten_roundtrip_bit_exact():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((2, 3, 4, 5, 6)))
    back = unflatten_volume(flatten_volume(x), (4, 5, 6))
    np.testing.assert_array_equal(back.data, x.data)


def test_flatten_channel_permutation_property():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 4, 2, 3, 2))
    perm = np.array([2, 0, 3, 1])
    s = flatten_volume(Tensor(x)).data
    s_perm = flatten_volume(Tensor(x[:, perm])).data
    np.testing.assert_array_equal(s_perm, s[:, :, perm])


def test_mamba_block_shape_contract():
    rng = np.random.default_rng(5)
    p = init_mamba_block(8, rng, state_size=4)
    x = Tensor(rng.standard_normal((2, 8, 4, 4, 4)))
    assert mamba_block(x, p).shape == (2, 8, 4, 4, 4)


def test_mamba_block_zero_out_projection_is_residual_identity():
    rng = np.random.default_rng(6)
    p = init_mamba_block(4, rng, state_size=4)
    p.inner.w_out.data = np.zeros_like(p.inner.w_out.data)
    x = Tensor(rng.standard_normal((1, 4, 3, 3, 3)))
    out = mamba_block(x, p)
    expected = residual_block(residual_block(x, p.res1), p.res2)
    np.testing.assert_array_equal(out.data, expected.data)


def test_mamba_block_zero_gate_kills_inner_branch():
    rng = np.random.default_rng(7)
    p = init_mamba_block(4, rng, state_size=4)
    p.inner.w_in_z.data = np.zeros_like(p.inner.w_in_z.data)
    x = Tensor(rng.standard_normal((1, 4, 3, 3, 3)))
    out = mamba_block(x, p)
    expected = residual_block(residual_block(x, p.res1), p.res2)
    np.testing.assert_array_equal(out.data, expected.data)


def test_mamba_block_deterministic():
    rng = np.random.default_rng(8)
    p = init_mamba_block(4, rng, state_size=4)
    x = Tensor(np.random.default_rng(1).standard_normal((1, 4, 3, 3, 3)))
    a = mamba_block(x, p).data
    b = mamba_block(x, p).data
    np.testing.assert_array_equal(a, b)


def test_mamba_block_end_to_end_gradient():
    rng = np.random.default_rng(9)
    p = init_mamba_block(2, rng, state_size=2, expand=2, conv_width=3)
    x = Tensor(rng.standard_normal((1, 2, 2, 2, 2)))

    q = p.inner
    leaves = [x, p.res1.kernel, p.res2.kernel, q.ln_gamma, q.w_in_x,
              q.w_in_z, q.conv1d, q.ssm.A, q.ssm.dt_base, q.ssm.w_dt,
              q.ssm.w_b, q.ssm.w_c, q.ssm.skip, q.w_out]

    def f(*ts):
        return tsum(mamba_block(ts[0], p))

    report = grad_check(f, leaves, tol=1e-3, max_probes=40)
    assert report.passed, report


def test_inner_block_token_time_scales_linearly():
    # doubling token count must not blow past ~2x wall time (hard cap 4x)
    rng = np.random.default_rng(10)
    p = init_mamba_block(8, rng, state_size=4, dtype=np.float32).inner

    def run(length):
        s = Tensor(rng.standard_normal((1, length, 8)).astype(np.float32))
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            mamba_inner(s, p)
            best = min(best, time.perf_counter() - t0)
        return best

    run(8192)  # warm up
    t1 = run(8192)
    t2 = run(16384)
    assert t2 < 4.0 * t1, (t1, t2)
