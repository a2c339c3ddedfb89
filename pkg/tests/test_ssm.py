"""Scan kernels against brute-force oracles and closed forms."""

import mpmath
import numpy as np
import pytest

from spineseg import (DiscreteSSM, SSMParams, Tape, Tensor, apply_global_conv,
                      build_conv_kernel, discretize_zoh, grad_check,
                      init_ssm_params, linear_recurrence, scan_chunked,
                      scan_sequential, selective_scan, tsum)
from spineseg.errors import DomainError, ShapeError


def brute_force_scan(abar, bbar, c, x, skip=None):
    """Independent oracle: explicit double loop over time and state."""
    length, d = x.shape
    n = abar.shape[1]
    cm = np.broadcast_to(c, (d, n))
    bb = np.broadcast_to(bbar, (d, n))
    h = np.zeros((d, n))
    y = np.zeros((length, d))
    for t in range(length):
        for di in range(d):
            for ni in range(n):
                h[di, ni] = abar[di, ni] * h[di, ni] + bb[di, ni] * x[t, di]
            acc = 0.0
            for ni in range(n):
                acc += cm[di, ni] * h[di, ni]
            y[t, di] = acc
            if skip is not None:
                y[t, di] += skip[di] * x[t, di]
    return y


def random_invariant_system(rng, length=None, n=None, d=None):
    length = length or int(rng.integers(1, 33))
    n = n or int(rng.integers(1, 9))
    d = d or int(rng.integers(1, 5))
    a = -np.exp(rng.uniform(-2, 1, size=(d, n)))
    b = rng.standard_normal((d, n))
    dt = np.exp(rng.uniform(np.log(1e-3), np.log(1.0), size=d))
    c = rng.standard_normal((d, n))
    x = rng.standard_normal((length, d))
    return a, b, dt, c, x


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------


def test_zoh_scalar_closed_form():
    disc = discretize_zoh(Tensor([[-1.0]]), Tensor([[1.0]]), Tensor([1.0]))
    assert disc.abar.data[0, 0] == pytest.approx(np.exp(-1.0), rel=1e-12)
    assert disc.bbar.data[0, 0] == pytest.approx(1.0 - np.exp(-1.0), rel=1e-12)


def test_zoh_matches_high_precision_oracle():
    # oracle: abar = e^{dA}, bbar = (e^{dA} - 1)/A * B at 50 digits
    mpmath.mp.dps = 50
    rng = np.random.default_rng(0)
    for _ in range(25):
        a = -float(np.exp(rng.uniform(-3, 2)))
        b = float(rng.standard_normal())
        dt = float(np.exp(rng.uniform(np.log(1e-4), np.log(2.0))))
        disc = discretize_zoh(Tensor([[a]]), Tensor([[b]]), Tensor([dt]))
        abar_ref = mpmath.e ** (dt * a)
        bbar_ref = (mpmath.e ** (dt * a) - 1) / a * b
        assert disc.abar.data[0, 0] == pytest.approx(float(abar_ref), rel=1e-12)
        assert disc.bbar.data[0, 0] == pytest.approx(float(bbar_ref), rel=1e-12)


def test_zoh_taylor_limit():
    disc = discretize_zoh(Tensor([[-1.0]]), Tensor([[1.0]]), Tensor([1e-12]))
    assert disc.abar.data[0, 0] == pytest.approx(1.0, abs=1e-11)
    assert disc.bbar.data[0, 0] == pytest.approx(1e-12, rel=1e-9)


def test_zoh_branch_consistency():
    # exact and first-order forms agree when |dA| is small but above the switch
    a, b, dt = -1.0, 1.3, 1e-4
    disc = discretize_zoh(Tensor([[a]]), Tensor([[b]]), Tensor([dt]))
    taylor = dt * b
    assert disc.bbar.data[0, 0] == pytest.approx(taylor, rel=1e-4)
    exact = (np.exp(dt * a) - 1.0) / a * b
    assert disc.bbar.data[0, 0] == pytest.approx(exact, rel=1e-6)


def test_zoh_rejects_nonpositive_dt():
    with pytest.raises(DomainError):
        discretize_zoh(Tensor([[-1.0]]), Tensor([[1.0]]), Tensor([0.0]))


def test_zoh_limits_invariant():
    # dt -> 0: abar -> 1 and bbar -> 0 elementwise
    rng = np.random.default_rng(1)
    a = -np.exp(rng.uniform(-1, 1, (3, 4)))
    b = rng.standard_normal((3, 4))
    disc = discretize_zoh(Tensor(a), Tensor(b), Tensor(np.full(3, 1e-11)))
    np.testing.assert_allclose(disc.abar.data, 1.0, atol=1e-10)
    np.testing.assert_allclose(disc.bbar.data, 0.0, atol=1e-9)


# ---------------------------------------------------------------------------
# sequential scan
# ---------------------------------------------------------------------------


def test_scan_zero_input_is_zero():
    disc = DiscreteSSM(Tensor(np.full((2, 3), 0.5)), Tensor(np.ones((2, 3))))
    y = scan_sequential(disc, Tensor(np.ones((2, 3))), Tensor(np.zeros((5, 2))))
    np.testing.assert_array_equal(y.data, np.zeros((5, 2)))


def test_scan_scalar_hand_recurrence():
    disc = DiscreteSSM(Tensor([[0.5]]), Tensor([[1.0]]))
    y = scan_sequential(disc, Tensor([[1.0]]), Tensor([[1.0], [0.0], [0.0]]))
    np.testing.assert_allclose(y.data[:, 0], [1.0, 0.5, 0.25], rtol=1e-15)


def test_scan_matches_brute_force_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b, dt, c, x = random_invariant_system(rng)
        disc = discretize_zoh(Tensor(a), Tensor(b), Tensor(dt))
        y = scan_sequential(disc, Tensor(c), Tensor(x))
        ref = brute_force_scan(disc.abar.data, disc.bbar.data, c, x)
        np.testing.assert_allclose(y.data, ref, atol=1e-13)


def test_scan_with_skip_matches_oracle():
    rng = np.random.default_rng(3)
    a, b, dt, c, x = random_invariant_system(rng, length=12, n=4, d=3)
    skip = rng.standard_normal(3)
    disc = discretize_zoh(Tensor(a), Tensor(b), Tensor(dt))
    y = scan_sequential(disc, Tensor(c), Tensor(x), skip=Tensor(skip))
    ref = brute_force_scan(disc.abar.data, disc.bbar.data, c, x, skip=skip)
    np.testing.assert_allclose(y.data, ref, atol=1e-13)


def test_scan_linearity_time_invariant():
    rng = np.random.default_rng(4)
    a, b, dt, c, _ = random_invariant_system(rng, length=16, n=4, d=2)
    disc = discretize_zoh(Tensor(a), Tensor(b), Tensor(dt))
    x1 = rng.standard_normal((16, 2))
    x2 = rng.standard_normal((16, 2))
    al, be = 0.7, -1.9
    lhs = scan_sequential(disc, Tensor(c), Tensor(al * x1 + be * x2)).data
    rhs = al * scan_sequential(disc, Tensor(c), Tensor(x1)).data \
        + be * scan_sequential(disc, Tensor(c), Tensor(x2)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_scan_stability_bound():
    rng = np.random.default_rng(5)
    for _ in range(10):
        a, b, dt, c, x = random_invariant_system(rng, length=64)
        disc = discretize_zoh(Tensor(a), Tensor(b), Tensor(dt))
        abar, bbar = disc.abar.data, disc.bbar.data
        bx = Tensor(np.broadcast_to(bbar, abar.shape)[None]
                    * x[:, :, None][None])
        am = Tensor(np.broadcast_to(abar, (1,) + x.shape + (abar.shape[1],)).copy())
        h = linear_recurrence(am, bx, axis=1).data
        bound = np.abs(bbar).max() * np.abs(x).max() / (1.0 - abar.max())
        assert np.abs(h).max() <= bound + 1e-9


# ---------------------------------------------------------------------------
# convolution view
# ---------------------------------------------------------------------------


def test_kernel_length_one():
    disc = DiscreteSSM(Tensor([[0.5, 0.3]]), Tensor([[1.0, 2.0]]))
    k = build_conv_kernel(disc, Tensor([[1.0, 1.0]]), 1)
    assert k.data[0, 0] == pytest.approx(3.0)  # C.B̄ = 1*1 + 1*2


def test_kernel_geometric_decay_values():
    disc = DiscreteSSM(Tensor([[0.5]]), Tensor([[1.0]]))
    k = build_conv_kernel(disc, Tensor([[1.0]]), 3)
    np.testing.assert_allclose(k.data[:, 0], [1.0, 0.5, 0.25], rtol=1e-15)


def test_kernel_monotone_decay_property():
    rng = np.random.default_rng(6)
    for _ in range(10):
        d, n = int(rng.integers(1, 4)), int(rng.integers(1, 6))
        abar = rng.uniform(0.05, 0.95, (d, n))
        bbar = rng.uniform(0.1, 2.0, (d, n))
        c = rng.uniform(0.1, 2.0, (d, n))
        k = build_conv_kernel(DiscreteSSM(Tensor(abar), Tensor(bbar)), Tensor(c), 12)
        mags = np.abs(k.data)
        assert np.all(mags[1:] <= mags[:-1] + 1e-15)


def test_global_conv_impulse_response_is_kernel():
    rng = np.random.default_rng(7)
    a, b, dt, c, _ = random_invariant_system(rng, length=10, n=3, d=2)
    disc = discretize_zoh(Tensor(a), Tensor(b), Tensor(dt))
    k = build_conv_kernel(disc, Tensor(c), 10)
    x = np.zeros((10, 2))
    x[0] = 1.0
    y = apply_global_conv(Tensor(x), k)
    np.testing.assert_allclose(y.data, k.data, atol=1e-14)


def test_global_conv_memoryless_case():
    # abar = 0 forgets everything: y is constant C*B̄*x for constant input
    disc = DiscreteSSM(Tensor([[0.0]]), Tensor([[0.7]]))
    k = build_conv_kernel(disc, Tensor([[2.0]]), 6)
    y = apply_global_conv(Tensor(np.full((6, 1), 3.0)), k)
    np.testing.assert_allclose(y.data, np.full((6, 1), 2.0 * 0.7 * 3.0), rtol=1e-14)


def test_global_conv_length_mismatch():
    disc = DiscreteSSM(Tensor([[0.5]]), Tensor([[1.0]]))
    k = build_conv_kernel(disc, Tensor([[1.0]]), 4)
    with pytest.raises(ShapeError):
        apply_global_conv(Tensor(np.zeros((5, 1))), k)


def test_duality_recurrence_equals_convolution():
    rng = np.random.default_rng(8)
    for _ in range(20):
        a, b, dt, c, x = random_invariant_system(
            rng, length=int(rng.integers(1, 65)), n=int(rng.integers(1, 17)))
        disc = discretize_zoh(Tensor(a), Tensor(b), Tensor(dt))
        y_scan = scan_sequential(disc, Tensor(c), Tensor(x)).data
        kernel = build_conv_kernel(disc, Tensor(c), x.shape[0])
        y_conv = apply_global_conv(Tensor(x), kernel).data
        assert np.abs(y_scan - y_conv).max() <= 1e-10


# ---------------------------------------------------------------------------
# chunked scan
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("chunk", [1, 2, 3, 7, 31])
def test_chunked_matches_sequential(chunk):
    rng = np.random.default_rng(chunk)
    a, b, dt, c, x = random_invariant_system(rng, length=31, n=6, d=3)
    disc = discretize_zoh(Tensor(a), Tensor(b), Tensor(dt))
    y_seq = scan_sequential(disc, Tensor(c), Tensor(x)).data
    y_chunk = scan_chunked(disc, Tensor(c), Tensor(x), chunk_size=chunk).data
    assert np.abs(y_seq - y_chunk).max() <= 1e-12


def test_chunked_full_length_is_sequential():
    rng = np.random.default_rng(9)
    a, b, dt, c, x = random_invariant_system(rng, length=16, n=4, d=2)
    disc = discretize_zoh(Tensor(a), Tensor(b), Tensor(dt))
    y_seq = scan_sequential(disc, Tensor(c), Tensor(x)).data
    y_full = scan_chunked(disc, Tensor(c), Tensor(x), chunk_size=16).data
    np.testing.assert_array_equal(y_seq, y_full)


# ---------------------------------------------------------------------------
# selective scan
# ---------------------------------------------------------------------------


def _small_params(rng, d=3, n=4, **kw):
    return init_ssm_params(d, n, rng, **kw)


def test_selective_reduces_to_time_invariant():
    # zero the dt projection and confine B/C selection to a constant input row
    rng = np.random.default_rng(10)
    d, n, length = 3, 4, 12
    params = _small_params(rng, d, n, with_skip=False)
    params.w_dt.data = np.zeros((d, d))
    wb = np.zeros((d, n))
    wb[0] = rng.standard_normal(n)
    wc = np.zeros((d, n))
    wc[0] = rng.standard_normal(n)
    params.w_b.data = wb
    params.w_c.data = wc
    x = rng.standard_normal((length, d))
    x[:, 0] = 1.0  # constant selection source
    y_sel = selective_scan(params, Tensor(x), chunk_size=1).data

    dt = np.logaddexp(0.0, params.dt_base.data)
    abar = np.exp(dt[:, None] * params.A.data)
    bbar = dt[:, None] * wb[0][None, :]
    y_ref = brute_force_scan(abar, bbar, wc[0], x)
    np.testing.assert_allclose(y_sel, y_ref, atol=1e-13)


def test_selective_single_step():
    rng = np.random.default_rng(11)
    d, n = 2, 3
    params = _small_params(rng, d, n, with_skip=False)
    x = rng.standard_normal((1, d))
    y = selective_scan(params, Tensor(x)).data
    dt = np.logaddexp(0.0, x[0] @ params.w_dt.data + params.dt_base.data)
    b1 = x[0] @ params.w_b.data
    c1 = x[0] @ params.w_c.data
    h1 = (dt[:, None] * b1[None]) * x[0][:, None]  # abar*h0 = 0
    np.testing.assert_allclose(y[0], (c1[None] * h1).sum(-1), atol=1e-13)


def test_selective_chunk_choice_is_invisible():
    rng = np.random.default_rng(12)
    params = _small_params(rng)
    x = rng.standard_normal((2, 50, 3))
    y1 = selective_scan(params, Tensor(x), chunk_size=1).data
    for chunk in (2, 3, 7, 50, None):
        y = selective_scan(params, Tensor(x), chunk_size=chunk).data
        assert np.abs(y - y1).max() <= 1e-12


def test_selective_full_gradient_vs_fd():
    rng = np.random.default_rng(13)
    params = _small_params(rng, d=2, n=3)
    x = Tensor(rng.standard_normal((1, 6, 2)))

    def f(xt, a, dtb, wdt, wb, wc, skip):
        p = SSMParams(A=a, dt_base=dtb, w_dt=wdt, w_b=wb, w_c=wc, skip=skip)
        return tsum(selective_scan(p, xt, chunk_size=3))

    report = grad_check(
        f, [x, params.A, params.dt_base, params.w_dt, params.w_b,
            params.w_c, params.skip], tol=1e-4)
    assert report.passed, report


def test_selective_exact_discretization_close_to_taylor():
    rng = np.random.default_rng(14)
    params = _small_params(rng, d=2, n=3, dt_min=1e-4, dt_max=1e-3,
                           with_skip=False)
    x = rng.standard_normal((8, 2)) * 0.1
    y_taylor = selective_scan(params, Tensor(x)).data
    params.exact_discretization = True
    y_exact = selective_scan(params, Tensor(x)).data
    np.testing.assert_allclose(y_exact, y_taylor, rtol=1e-2, atol=1e-6)


def test_linear_recurrence_gradient():
    rng = np.random.default_rng(15)
    a = Tensor(rng.uniform(0.1, 0.9, (1, 9, 2, 3)))
    b = Tensor(rng.standard_normal((1, 9, 2, 3)))
    for chunk in (1, 4):
        report = grad_check(
            lambda at, bt: tsum(mul_square(linear_recurrence(at, bt, axis=1, chunk_size=chunk))),
            [a, b], tol=1e-6)
        assert report.passed, report


def mul_square(t):
    from spineseg.tensor import mul
    return mul(t, t)


def test_ssm_params_reject_nonnegative_a():
    with pytest.raises(DomainError):
        SSMParams(A=Tensor([[0.5]]), dt_base=Tensor([0.0]),
                  w_dt=Tensor([[0.0]]), w_b=Tensor([[0.0]]), w_c=Tensor([[0.0]]))
