"""Learnable anatomical shape prior injected into skip connections.

A single learnable template ``v0`` of shape (1, N, h, w, l) lives at 1/16 of
the patch resolution.  At each equipped skip the template is refined by two
stacked Mamba blocks, then split into two interacting paths:

* local path: the refined template is upsampled to the skip's scale,
  channel-aligned, concatenated onto the (residually filtered) skip
  features, refined by two more Mamba blocks, and split back into an
  enhanced skip feature and a refined prior;
* global path: the refined prior is mapped back to N channels, downsampled
  to the template grid, and added onto the reshaped template output.

The enhanced skip feature replaces the plain skip; the enhanced template is
exposed for inspection and checkpointing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import conv3d
from .errors import ConfigError
from .mamba import (MambaBlockParams, ProjResBlockParams, ResBlockParams,
                    init_mamba_block, init_proj_res_block, init_res_block,
                    mamba_block, proj_res_block, residual_block)
from .tensor import Tensor, add, broadcast_to, concat, split, upsample_nearest, \
    downsample_stride


@dataclass
class ShapePrior:
    """Learnable class templates on a coarse spatial grid."""

    v0: Tensor
    frozen: bool = False

    @property
    def n_classes(self) -> int:
        return self.v0.shape[1]

    @property
    def spatial(self) -> tuple[int, int, int]:
        return self.v0.shape[2:]


def init_shape_prior(n_classes: int, spatial, rng: np.random.Generator,
                     scale: float = 0.01, dtype=np.float64) -> ShapePrior:
    shape = (1, n_classes) + tuple(int(s) for s in spatial)
    if any(s < 1 for s in shape):
        raise ConfigError(f"shape prior extents must be >= 1, got {shape}")
    v0 = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return ShapePrior(v0=Tensor(v0, requires_grad=True))


@dataclass
class VSPParams:
    """Per-skip parameters of the shape prior module."""

    mam_g1: MambaBlockParams
    mam_g2: MambaBlockParams
    res_u: ResBlockParams
    prior_proj: Tensor | None
    res_f1: ResBlockParams
    res_f2: ResBlockParams
    mam_l1: MambaBlockParams
    mam_l2: MambaBlockParams
    res_v: ProjResBlockParams
    up_factor: tuple[int, int, int]


def init_vsp_params(channels: int, n_classes: int, up_factor,
                    rng: np.random.Generator, state_size: int = 8,
                    expand: int = 2, conv_width: int = 4,
                    dtype=np.float64) -> VSPParams:
    up_factor = tuple(int(f) for f in up_factor)
    kw = dict(state_size=state_size, expand=expand, conv_width=conv_width,
              dtype=dtype)
    if channels == n_classes:
        prior_proj = None
    else:
        std = n_classes ** -0.5
        prior_proj = Tensor(
            (rng.standard_normal((channels, n_classes, 1, 1, 1)) * std).astype(dtype),
            requires_grad=True)
    return VSPParams(
        mam_g1=init_mamba_block(n_classes, rng, **kw),
        mam_g2=init_mamba_block(n_classes, rng, **kw),
        res_u=init_res_block(n_classes, rng, dtype),
        prior_proj=prior_proj,
        res_f1=init_res_block(channels, rng, dtype),
        res_f2=init_res_block(channels, rng, dtype),
        mam_l1=init_mamba_block(2 * channels, rng, **kw),
        mam_l2=init_mamba_block(2 * channels, rng, **kw),
        res_v=init_proj_res_block(channels, n_classes, rng, dtype),
        up_factor=up_factor,
    )


def prior_features(prior: ShapePrior, params: VSPParams,
                   chunk_size: int | None = None) -> Tensor:
    """Shared template refinement: two stacked Mamba blocks on v0."""
    v = mamba_block(prior.v0, params.mam_g1, chunk_size=chunk_size)
    return mamba_block(v, params.mam_g2, chunk_size=chunk_size)


def local_shape_prior(f_o, v0_features, params: VSPParams,
                      chunk_size: int | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Fuse the upsampled template with the skip features.

    Returns (enhanced skip feature, refined prior, filtered skip feature).
    """
    vu = residual_block(v0_features, params.res_u)
    vu = upsample_nearest(vu, params.up_factor)
    if params.prior_proj is not None:
        vu = conv3d(vu, params.prior_proj)
    vu = broadcast_to(vu, (f_o.shape[0],) + vu.shape[1:])
    f_r = residual_block(residual_block(f_o, params.res_f1), params.res_f2)
    f_c = concat([vu, f_r], axis=1)
    f_l = mamba_block(f_c, params.mam_l1, chunk_size=chunk_size)
    f_l = mamba_block(f_l, params.mam_l2, chunk_size=chunk_size)
    f_f, v_f = split(f_l, 2, axis=1)
    f_e = add(f_f, f_r)
    return f_e, v_f, f_r


def global_fuse(v0_features, v_f, params: VSPParams) -> Tensor:
    """Map the refined prior back onto the template grid and add it on."""
    v_re = proj_res_block(v_f, params.res_v)
    spatial = v_re.shape[2:]
    target = v0_features.shape[2:]
    factors = []
    for s, t in zip(spatial, target):
        if s % t != 0:
            raise ConfigError(
                f"non-integer downsample factor from {spatial} to {target}")
        factors.append(s // t)
    down = downsample_stride(v_re, tuple(factors))
    return add(down, v0_features)


def vsp_forward(f_o, prior: ShapePrior, params: VSPParams,
                chunk_size: int | None = None) -> tuple[Tensor, Tensor]:
    """Run both paths; returns (enhanced skip feature, enhanced prior).

    The enhanced feature has the shape of ``f_o``; the enhanced prior has
    the template's (batch, N, h, w, l) shape.
    """
    expected = tuple(p * f for p, f in zip(prior.spatial, params.up_factor))
    if tuple(f_o.shape[2:]) != expected:
        raise ConfigError(
            f"skip spatial {f_o.shape[2:]} does not match prior "
            f"{prior.spatial} x {params.up_factor}")
    v0f = prior_features(prior, params, chunk_size=chunk_size)
    f_e, v_f, _ = local_shape_prior(f_o, v0f, params, chunk_size=chunk_size)
    v_e = global_fuse(v0f, v_f, params)
    return f_e, v_e
