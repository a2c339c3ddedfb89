"""Selective state-space scan kernels.

The continuous system h' = A h + B x, y = C h is discretized with a
zero-order hold and evaluated either as a linear recurrence (sequential or
chunked) or as a causal global convolution with the structured kernel
(C B̄, C Ā B̄, ..., C Ā^{L-1} B̄).  The input-dependent variant projects
Δ, B and C from each input token before running the recurrence.

The recurrence itself is a single registered primitive with a hand-written
adjoint: the gradient recurrence runs the same scan machinery backward in
time, so long sequences stay cheap under differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .tensor import (Tensor, _apply, as_tensor, broadcast_to, linear, mul,
                     reciprocal, register_op, reshape, softplus, texp, tsum,
                     where)

_TAYLOR_THRESHOLD = 1e-8


# ---------------------------------------------------------------------------
# linear recurrence primitive: h[t] = a[t] * h[t-1] + b[t], h[-1] = 0
# ---------------------------------------------------------------------------


def _scan_sequential_l_first(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    h = np.empty_like(b)
    carry = np.zeros(b.shape[1:], dtype=b.dtype)
    for t in range(b.shape[0]):
        carry = a[t] * carry + b[t]
        h[t] = carry
    return h


def _scan_chunked_l_first(a: np.ndarray, b: np.ndarray, chunk: int) -> np.ndarray:
    length = b.shape[0]
    if chunk <= 1 or chunk >= length:
        return _scan_sequential_l_first(a, b)
    nc = -(-length // chunk)
    pad = nc * chunk - length
    if pad:
        a = np.concatenate([a, np.ones((pad,) + a.shape[1:], a.dtype)])
        b = np.concatenate([b, np.zeros((pad,) + b.shape[1:], b.dtype)])
    rest = b.shape[1:]
    # chunk-first layout keeps every per-step slab contiguous
    ac = np.ascontiguousarray(a.reshape((nc, chunk) + rest).swapaxes(0, 1))
    bc = np.ascontiguousarray(b.reshape((nc, chunk) + rest).swapaxes(0, 1))
    # local responses from a zero state, plus running in-chunk products
    h_local = np.empty_like(bc)
    p_local = np.empty_like(ac)
    h = np.zeros((nc,) + rest, dtype=b.dtype)
    p = np.ones((nc,) + rest, dtype=a.dtype)
    for g in range(chunk):
        h = ac[g] * h + bc[g]
        p = p * ac[g]
        h_local[g] = h
        p_local[g] = p
    # carry chunk states left to right: (a2,b2) o (a1,b1) = (a2*a1, a2*b1 + b2)
    carries = np.empty((nc,) + rest, dtype=b.dtype)
    c = np.zeros(rest, dtype=b.dtype)
    a_chunk = p_local[-1]
    b_chunk = h_local[-1]
    for i in range(nc):
        carries[i] = c
        c = a_chunk[i] * c + b_chunk[i]
    out = h_local + p_local * carries[None]
    out = out.swapaxes(0, 1).reshape((nc * chunk,) + rest)
    return np.ascontiguousarray(out[:length])


def _fwd_linear_recurrence(a, b, axis, chunk):
    if a.shape != b.shape:
        raise ShapeError(
            f"linear_recurrence: coefficient shape {a.shape} != input shape {b.shape}")
    am = np.moveaxis(a, axis, 0)
    bm = np.moveaxis(b, axis, 0)
    h = _scan_chunked_l_first(am, bm, chunk)
    return np.ascontiguousarray(np.moveaxis(h, 0, axis))


def _vjp_linear_recurrence(g, h, ins, at):
    a, _ = ins
    axis, chunk = at["axis"], at["chunk"]
    am = np.moveaxis(a, axis, 0)
    gm = np.moveaxis(g, axis, 0)
    hm = np.moveaxis(h, axis, 0)
    # gbar[t] = g[t] + a[t+1] * gbar[t+1]: the same recurrence, reversed
    ar = np.concatenate([np.ones((1,) + am.shape[1:], am.dtype), am[:0:-1]])
    gbar = _scan_chunked_l_first(ar, gm[::-1], chunk)[::-1]
    h_prev = np.concatenate([np.zeros((1,) + hm.shape[1:], hm.dtype), hm[:-1]])
    da = np.moveaxis(gbar * h_prev, 0, axis)
    db = np.moveaxis(gbar, 0, axis)
    return [np.ascontiguousarray(da), np.ascontiguousarray(db)]


register_op("linear_recurrence", _fwd_linear_recurrence, _vjp_linear_recurrence)


def _resolve_chunk(length: int, chunk_size: int | None) -> int:
    if chunk_size is not None:
        if chunk_size < 1:
            raise DomainError(f"chunk_size must be >= 1, got {chunk_size}")
        return int(chunk_size)
    if length <= 32:
        return 1
    return int(min(256, max(8, round(math.sqrt(length)))))


def linear_recurrence(a, b, axis: int = 1, chunk_size: int | None = None) -> Tensor:
    """Differentiable scan h[t] = a[t] h[t-1] + b[t] along ``axis`` (h[-1] = 0)."""
    a = as_tensor(a)
    axis = axis % a.ndim
    chunk = _resolve_chunk(a.shape[axis], chunk_size)
    return _apply("linear_recurrence", [a, as_tensor(b)], axis=axis, chunk=chunk)


# ---------------------------------------------------------------------------
# parameters and discretization
# ---------------------------------------------------------------------------


@dataclass
class SSMParams:
    """Per-channel diagonal state-space parameters with selection projections.

    ``A`` is (D, N) and strictly negative.  ``w_dt``, ``w_b`` and ``w_c``
    project an input token (D,) to the per-step timescale (D,), input
    matrix (N,) and output matrix (N,).  ``skip`` is an optional
    per-channel passthrough.
    """

    A: Tensor
    dt_base: Tensor
    w_dt: Tensor
    w_b: Tensor
    w_c: Tensor
    skip: Tensor | None = None
    exact_discretization: bool = False

    def __post_init__(self):
        if np.any(self.A.data >= 0):
            raise DomainError("state matrix entries must be strictly negative")

    @property
    def channels(self) -> int:
        return self.A.shape[0]

    @property
    def state_size(self) -> int:
        return self.A.shape[1]


def init_ssm_params(channels: int, state_size: int, rng: np.random.Generator,
                    dt_min: float = 1e-3, dt_max: float = 0.1,
                    with_skip: bool = True, dtype=np.float64) -> SSMParams:
    """Negative-ramp state init with a log-uniform timescale span."""
    a = -np.tile(np.arange(1, state_size + 1, dtype=dtype), (channels, 1))
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=channels))
    dt_base = np.log(np.expm1(dt)).astype(dtype)
    scale = dtype(channels) ** -0.5
    w_dt = (rng.standard_normal((channels, channels)) * scale).astype(dtype)
    w_b = (rng.standard_normal((channels, state_size)) * scale).astype(dtype)
    w_c = (rng.standard_normal((channels, state_size)) * scale).astype(dtype)
    skip = Tensor(np.ones(channels, dtype=dtype), requires_grad=True) if with_skip else None
    return SSMParams(
        A=Tensor(a, requires_grad=True),
        dt_base=Tensor(dt_base, requires_grad=True),
        w_dt=Tensor(w_dt, requires_grad=True),
        w_b=Tensor(w_b, requires_grad=True),
        w_c=Tensor(w_c, requires_grad=True),
        skip=skip,
    )


@dataclass
class DiscreteSSM:
    """Discrete transition Ā and input matrix B̄ (both broadcastable to (D, N))."""

    abar: Tensor
    bbar: Tensor


def _exact_bbar(abar: Tensor, a, b, da_values: np.ndarray) -> Tensor:
    """(exp(ΔA) - 1) / A * B with the divisor masked where the hold degenerates."""
    mask = np.abs(da_values) < _TAYLOR_THRESHOLD
    a_safe = where(mask, np.ones((), dtype=da_values.dtype), a)
    return mul(mul(abar - 1.0, reciprocal(a_safe)), b)


def discretize_zoh(a, b, dt) -> DiscreteSSM:
    """Zero-order-hold discretization of diagonal (A, B) at timescale Δ > 0.

    Ā = exp(ΔA) elementwise; B̄ = (ΔA)^{-1}(exp(ΔA) - 1)·ΔB, replaced by the
    first-order form ΔB wherever |ΔA| < 1e-8.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    dt = as_tensor(dt)
    if np.any(dt.data <= 0):
        raise DomainError("timescale must be strictly positive")
    if dt.ndim == 1 and a.ndim == 2:
        dt = reshape(dt, (dt.shape[0], 1))
    da = mul(dt, a)
    abar = texp(da)
    exact = _exact_bbar(abar, a, b, da.data)
    mask = np.abs(da.data) < _TAYLOR_THRESHOLD
    bbar = where(mask, mul(dt, b), exact)
    return DiscreteSSM(abar=abar, bbar=bbar)


# ---------------------------------------------------------------------------
# scans over a (B, L, D) or (L, D) sequence
# ---------------------------------------------------------------------------


def _with_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected (L, D) or (B, L, D), got {x.shape}")


def _readout(h: Tensor, c: Tensor, x: Tensor, skip) -> Tensor:
    y = tsum(mul(h, c), axis=-1)
    if skip is not None:
        y = y + mul(skip, x)
    return y


def scan_sequential(disc: DiscreteSSM, c, x, skip=None) -> Tensor:
    """Run the recurrence h_t = Ā h_{t-1} + B̄ x_t, y_t = <C, h_t> step by step."""
    x, squeeze = _with_batch(as_tensor(x))
    bsz, length, d = x.shape
    n = disc.abar.shape[-1]
    a = broadcast_to(disc.abar, (bsz, length, d, n))
    bx = mul(disc.bbar, reshape(x, (bsz, length, d, 1)))
    h = linear_recurrence(a, bx, axis=1, chunk_size=1)
    y = _readout(h, as_tensor(c), x, skip)
    return reshape(y, y.shape[1:]) if squeeze else y


def scan_chunked(disc: DiscreteSSM, c, x, chunk_size: int, skip=None) -> Tensor:
    """Chunked evaluation of the same recurrence; output matches sequential."""
    x, squeeze = _with_batch(as_tensor(x))
    bsz, length, d = x.shape
    n = disc.abar.shape[-1]
    a = broadcast_to(disc.abar, (bsz, length, d, n))
    bx = mul(disc.bbar, reshape(x, (bsz, length, d, 1)))
    h = linear_recurrence(a, bx, axis=1, chunk_size=chunk_size)
    y = _readout(h, as_tensor(c), x, skip)
    return reshape(y, y.shape[1:]) if squeeze else y


def build_conv_kernel(disc: DiscreteSSM, c, length: int) -> Tensor:
    """Structured kernel K[j, d] = sum_n C Ā^j B̄ for j = 0..L-1 (not differentiable)."""
    if length < 1:
        raise DomainError("kernel length must be >= 1")
    abar = np.asarray(disc.abar.data)
    bbar = np.broadcast_to(np.asarray(disc.bbar.data), abar.shape)
    cm = np.broadcast_to(np.asarray(as_tensor(c).data), abar.shape)
    kernel = np.empty((length, abar.shape[0]), dtype=abar.dtype)
    power = np.ones_like(abar)
    for j in range(length):
        kernel[j] = (cm * power * bbar).sum(axis=-1)
        power = power * abar
    return Tensor(kernel)


def apply_global_conv(x, kernel) -> Tensor:
    """Causal convolution y_t = sum_{j<=t} K_j x_{t-j} per channel (not differentiable)."""
    x = as_tensor(x)
    k = np.asarray(as_tensor(kernel).data)
    xs = x.data
    squeeze = xs.ndim == 2
    if squeeze:
        xs = xs[None]
    if xs.shape[1] != k.shape[0]:
        raise ShapeError(
            f"kernel length {k.shape[0]} != sequence length {xs.shape[1]}")
    out = np.empty_like(xs)
    for bi in range(xs.shape[0]):
        for d in range(xs.shape[2]):
            out[bi, :, d] = np.convolve(xs[bi, :, d], k[:, d])[: xs.shape[1]]
    return Tensor(out[0] if squeeze else out)


def selective_scan(params: SSMParams, x, chunk_size: int | None = None) -> Tensor:
    """Input-dependent scan: Δ, B, C are projected from each token.

    Δ_t = softplus(W_Δ x_t + Δ_base); Ā_t = exp(Δ_t A); B̄_t follows the
    first-order form Δ_t B_t (or the exact hold when the params request it);
    then h_t = Ā_t h_{t-1} + B̄_t x_t and y_t = <C_t, h_t> (+ skip ⊙ x_t).
    Differentiable end to end.
    """
    x, squeeze = _with_batch(as_tensor(x))
    bsz, length, d = x.shape
    n = params.state_size
    dt = softplus(linear(x, params.w_dt, params.dt_base))
    b_t = linear(x, params.w_b)
    c_t = linear(x, params.w_c)
    dt4 = reshape(dt, (bsz, length, d, 1))
    x4 = reshape(x, (bsz, length, d, 1))
    c4 = reshape(c_t, (bsz, length, 1, n))
    da = mul(dt4, params.A)
    abar = texp(da)
    b4 = reshape(b_t, (bsz, length, 1, n))
    if params.exact_discretization:
        exact = _exact_bbar(abar, params.A, b4, da.data)
        mask = np.abs(da.data) < _TAYLOR_THRESHOLD
        bbar = where(mask, mul(dt4, b4), exact)
        bx = mul(bbar, x4)
    else:
        # (dt * x) stays (B, L, D, 1); only one full-rank product is formed
        bx = mul(b4, mul(dt4, x4))
    h = linear_recurrence(abar, bx, axis=1, chunk_size=chunk_size)
    y = tsum(mul(h, c4), axis=-1)
    if params.skip is not None:
        y = y + mul(params.skip, x)
    return reshape(y, y.shape[1:]) if squeeze else y
