"""Residual conv blocks and the gated dual-path Mamba block for volumes.

A block takes a (B, C, H, W, D) feature volume through two residual conv
blocks, flattens it to a (B, L, C) token sequence (L = H*W*D, row-major,
H slowest), and runs the gated selective-scan inner block with a residual
connection around it before restoring the volume layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import conv3d, depthwise_conv1d
from .ssm import SSMParams, init_ssm_params, selective_scan
from .tensor import (Tensor, add, instance_norm, layer_norm, leaky_relu,
                     linear, mul, permute, reshape, silu)

LEAKY_SLOPE = 0.01


def _he_kernel(rng, co, ci, ksize, dtype):
    fan_in = ci * int(np.prod(ksize))
    std = (2.0 / fan_in) ** 0.5
    return (rng.standard_normal((co, ci) + tuple(ksize)) * std).astype(dtype)


def _param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


@dataclass
class ResBlockParams:
    """Channel-preserving residual unit: x + LeakyReLU(IN(conv3x3(x)))."""

    kernel: Tensor
    gamma: Tensor
    beta: Tensor


def init_res_block(channels: int, rng: np.random.Generator,
                   dtype=np.float64) -> ResBlockParams:
    return ResBlockParams(
        kernel=_param(_he_kernel(rng, channels, channels, (3, 3, 3), dtype)),
        gamma=_param(np.ones(channels, dtype=dtype)),
        beta=_param(np.zeros(channels, dtype=dtype)),
    )


def residual_block(x, params: ResBlockParams) -> Tensor:
    y = conv3d(x, params.kernel, stride=1, padding=1)
    y = instance_norm(y, params.gamma, params.beta)
    return add(x, leaky_relu(y, LEAKY_SLOPE))


@dataclass
class ConvBlockParams:
    """Plain conv + IN + LeakyReLU; changes channels and may stride."""

    kernel: Tensor
    gamma: Tensor
    beta: Tensor


def init_conv_block(in_channels: int, out_channels: int, ksize,
                    rng: np.random.Generator, dtype=np.float64) -> ConvBlockParams:
    return ConvBlockParams(
        kernel=_param(_he_kernel(rng, out_channels, in_channels, ksize, dtype)),
        gamma=_param(np.ones(out_channels, dtype=dtype)),
        beta=_param(np.zeros(out_channels, dtype=dtype)),
    )


def conv_block(x, params: ConvBlockParams, stride=1, padding=1) -> Tensor:
    y = conv3d(x, params.kernel, stride=stride, padding=padding)
    return leaky_relu(instance_norm(y, params.gamma, params.beta), LEAKY_SLOPE)


@dataclass
class ProjResBlockParams:
    """Residual unit with a 1x1x1 projection shortcut; changes channels."""

    kernel: Tensor
    gamma: Tensor
    beta: Tensor
    shortcut: Tensor


def init_proj_res_block(in_channels: int, out_channels: int,
                        rng: np.random.Generator,
                        dtype=np.float64) -> ProjResBlockParams:
    return ProjResBlockParams(
        kernel=_param(_he_kernel(rng, out_channels, in_channels, (3, 3, 3), dtype)),
        gamma=_param(np.ones(out_channels, dtype=dtype)),
        beta=_param(np.zeros(out_channels, dtype=dtype)),
        shortcut=_param(_he_kernel(rng, out_channels, in_channels, (1, 1, 1), dtype)),
    )


def proj_res_block(x, params: ProjResBlockParams) -> Tensor:
    main = conv3d(x, params.kernel, stride=1, padding=1)
    main = leaky_relu(instance_norm(main, params.gamma, params.beta), LEAKY_SLOPE)
    return add(conv3d(x, params.shortcut, stride=1, padding=0), main)


# ---------------------------------------------------------------------------
# volume <-> sequence layout
# ---------------------------------------------------------------------------


def flatten_volume(x) -> Tensor:
    """(B, C, H, W, D) -> (B, L, C) with L = H*W*D, row-major, H slowest."""
    b, c, h, w, d = x.shape
    return reshape(permute(x, (0, 2, 3, 4, 1)), (b, h * w * d, c))


def unflatten_volume(s, spatial: tuple[int, int, int]) -> Tensor:
    """Inverse of :func:`flatten_volume`."""
    b, length, c = s.shape
    h, w, d = spatial
    if length != h * w * d:
        from .errors import ShapeError
        raise ShapeError(f"sequence length {length} != {h}*{w}*{d}")
    return permute(reshape(s, (b, h, w, d, c)), (0, 4, 1, 2, 3))


# ---------------------------------------------------------------------------
# the gated block
# ---------------------------------------------------------------------------


@dataclass
class MambaInnerParams:
    """The gated selective-scan block on a (B, L, C) token sequence.

    Expands C -> E = expand * C on both paths, runs a causal depthwise conv
    + SiLU + selective scan on one path, SiLU on the other, gates them
    elementwise, and projects back E -> C.
    """

    ln_gamma: Tensor
    ln_beta: Tensor
    w_in_x: Tensor
    w_in_z: Tensor
    conv1d: Tensor
    ssm: SSMParams
    w_out: Tensor

    @property
    def channels(self) -> int:
        return self.w_in_x.shape[0]

    @property
    def expanded(self) -> int:
        return self.w_in_x.shape[1]


@dataclass
class MambaBlockParams:
    """Two residual conv blocks followed by the gated inner block."""

    res1: ResBlockParams
    res2: ResBlockParams
    inner: MambaInnerParams

    @property
    def channels(self) -> int:
        return self.inner.channels


def init_mamba_inner(channels: int, rng: np.random.Generator,
                     state_size: int = 8, expand: int = 2,
                     conv_width: int = 4, dtype=np.float64) -> MambaInnerParams:
    e = expand * channels
    scale_in = channels ** -0.5
    scale_out = e ** -0.5
    return MambaInnerParams(
        ln_gamma=_param(np.ones(channels, dtype=dtype)),
        ln_beta=_param(np.zeros(channels, dtype=dtype)),
        w_in_x=_param((rng.standard_normal((channels, e)) * scale_in).astype(dtype)),
        w_in_z=_param((rng.standard_normal((channels, e)) * scale_in).astype(dtype)),
        conv1d=_param((rng.standard_normal((e, conv_width))
                       * conv_width ** -0.5).astype(dtype)),
        ssm=init_ssm_params(e, state_size, rng, dtype=dtype),
        w_out=_param((rng.standard_normal((e, channels)) * scale_out).astype(dtype)),
    )


def init_mamba_block(channels: int, rng: np.random.Generator,
                     state_size: int = 8, expand: int = 2,
                     conv_width: int = 4, dtype=np.float64) -> MambaBlockParams:
    return MambaBlockParams(
        res1=init_res_block(channels, rng, dtype),
        res2=init_res_block(channels, rng, dtype),
        inner=init_mamba_inner(channels, rng, state_size=state_size,
                               expand=expand, conv_width=conv_width,
                               dtype=dtype),
    )


def mamba_inner(s, params: MambaInnerParams,
                chunk_size: int | None = None) -> Tensor:
    """Gated selective-scan block on a (B, L, C) sequence, residual included."""
    sbar = layer_norm(s, params.ln_gamma, params.ln_beta)
    u = linear(sbar, params.w_in_x)
    u = permute(u, (0, 2, 1))
    u = depthwise_conv1d(u, params.conv1d)
    u = silu(permute(u, (0, 2, 1)))
    path1 = selective_scan(params.ssm, u, chunk_size=chunk_size)
    path2 = silu(linear(sbar, params.w_in_z))
    merged = mul(path1, path2)
    return add(s, linear(merged, params.w_out))


def mamba_seq(x, params: MambaInnerParams,
              chunk_size: int | None = None) -> Tensor:
    """Inner block applied to a volume via flatten/unflatten."""
    spatial = x.shape[2:]
    out = mamba_inner(flatten_volume(x), params, chunk_size=chunk_size)
    return unflatten_volume(out, spatial)


def mamba_block(x, params: MambaBlockParams,
                chunk_size: int | None = None) -> Tensor:
    """Full block on a (B, C, H, W, D) volume; output shape equals input shape."""
    y = residual_block(residual_block(x, params.res1), params.res2)
    return mamba_seq(y, params.inner, chunk_size=chunk_size)
