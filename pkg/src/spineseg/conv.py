"""3D cross-correlation and causal depthwise 1D convolution.

The 3D kernel is evaluated as a shift-and-add: one small channel-mixing
einsum per kernel tap over a strided view of the padded input.  On a
dual-core box this beats an explicit im2col copy for the kernel sizes used
here (1x1x1 and 3x3x3), and the same access pattern serves the two adjoints,
so there is a single code path to trust.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, _apply, as_tensor, register_op


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 3:
            raise ShapeError(f"expected 3 entries, got {v!r}")
        return tuple(int(x) for x in v)
    return (int(v),) * 3


def _conv3d_out_shape(spatial, ksize, stride, pad):
    out = []
    for s, k, st, p in zip(spatial, ksize, stride, pad):
        span = s + 2 * p - k
        if span < 0:
            raise ShapeError(
                f"kernel extent {k} exceeds padded input extent {s + 2 * p}")
        out.append(span // st + 1)
    return tuple(out)


def _pad_spatial(x, pad):
    if not any(pad):
        return x
    width = [(0, 0), (0, 0)] + [(p, p) for p in pad]
    return np.pad(x, width)


def _fwd_conv3d(x, k, stride, padding):
    if x.ndim != 5 or k.ndim != 5:
        raise ShapeError("conv3d expects x (B,Ci,H,W,D) and k (Co,Ci,kh,kw,kd)")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(
            f"conv3d: channel mismatch (input {x.shape[1]}, kernel {k.shape[1]})")
    b, _, *spatial = x.shape
    co = k.shape[0]
    ks = k.shape[2:]
    out_sp = _conv3d_out_shape(spatial, ks, stride, padding)
    xp = _pad_spatial(x, padding)
    sh, sw, sd = stride
    oh, ow, od = out_sp
    out = np.zeros((b, co) + out_sp, dtype=x.dtype)
    tmp = np.empty_like(out)
    for i in range(ks[0]):
        for j in range(ks[1]):
            for l in range(ks[2]):
                window = xp[:, :,
                            i:i + sh * (oh - 1) + 1:sh,
                            j:j + sw * (ow - 1) + 1:sw,
                            l:l + sd * (od - 1) + 1:sd]
                np.einsum("oc,bcxyz->boxyz", k[:, :, i, j, l], window,
                          out=tmp, optimize=True)
                out += tmp
    return out


def _vjp_conv3d(g, o, ins, at):
    x, k = ins
    stride = at["stride"]
    padding = at["padding"]
    ks = k.shape[2:]
    sh, sw, sd = stride
    oh, ow, od = g.shape[2:]

    xp = _pad_spatial(x, padding)
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(k)
    tmp = np.empty(x.shape[:1] + (x.shape[1],) + g.shape[2:], dtype=g.dtype)
    for i in range(ks[0]):
        for j in range(ks[1]):
            for l in range(ks[2]):
                sl = (slice(None), slice(None),
                      slice(i, i + sh * (oh - 1) + 1, sh),
                      slice(j, j + sw * (ow - 1) + 1, sw),
                      slice(l, l + sd * (od - 1) + 1, sd))
                gk[:, :, i, j, l] = np.einsum(
                    "boxyz,bcxyz->oc", g, xp[sl], optimize=True)
                np.einsum("oc,boxyz->bcxyz", k[:, :, i, j, l], g,
                          out=tmp, optimize=True)
                gxp[sl] += tmp
    ph, pw, pd = padding
    h, w, d = x.shape[2:]
    gx = gxp[:, :, ph:ph + h, pw:pw + w, pd:pd + d]
    if any(padding):
        gx = np.ascontiguousarray(gx)
    return [gx, gk]


register_op("conv3d", _fwd_conv3d, _vjp_conv3d)


def conv3d(x, k, stride=1, padding=0) -> Tensor:
    """Cross-correlate x (B,Ci,H,W,D) with k (Co,Ci,kh,kw,kd).

    Output spatial extent is floor((S + 2p - k)/stride) + 1 per axis.
    """
    return _apply("conv3d", [as_tensor(x), as_tensor(k)],
                  stride=_triple(stride), padding=_triple(padding))


def _fwd_dwconv1d(x, k):
    if x.ndim != 3 or k.ndim != 2:
        raise ShapeError("depthwise_conv1d expects x (B,C,L) and k (C,kw)")
    if x.shape[1] != k.shape[0]:
        raise ShapeError(
            f"depthwise_conv1d: channel mismatch ({x.shape[1]} vs {k.shape[0]})")
    kw = k.shape[1]
    length = x.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (kw - 1, 0)))
    out = np.zeros_like(x)
    for j in range(kw):
        out += k[None, :, j, None] * xp[:, :, j:j + length]
    return out


def _vjp_dwconv1d(g, o, ins, at):
    x, k = ins
    kw = k.shape[1]
    length = x.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (kw - 1, 0)))
    gk = np.empty_like(k)
    for j in range(kw):
        gk[:, j] = np.einsum("bct,bct->c", g, xp[:, :, j:j + length])
    gp = np.pad(g, ((0, 0), (0, 0), (0, kw - 1)))
    gx = np.zeros_like(x)
    for j in range(kw):
        gx += k[None, :, j, None] * gp[:, :, kw - 1 - j:kw - 1 - j + length]
    return [gx, gk]


register_op("depthwise_conv1d", _fwd_dwconv1d, _vjp_dwconv1d)


def depthwise_conv1d(x, k) -> Tensor:
    """Per-channel causal 1D convolution; left-padding keeps length L."""
    return _apply("depthwise_conv1d", [as_tensor(x), as_tensor(k)])
