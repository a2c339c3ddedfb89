"""U-shaped 3D segmentation network with optional shape-prior skips.

Encoder stages are residual conv pairs; the deepest stage always carries
the gated scan block, and the "enc" variant carries one in every stage.
Decoder stages are nearest-neighbor upsampling, a 1x1x1 channel-align conv,
an additive skip merge, and two residual conv blocks.  When the shape prior
is enabled, every skip whose grid divides the prior grid integrally (the
downsampled skips) routes through the prior module instead of the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .conv import conv3d
from .errors import ConfigError, ShapeError
from .mamba import (ConvBlockParams, MambaInnerParams, ResBlockParams,
                    _he_kernel, conv_block, init_conv_block, init_mamba_inner,
                    init_res_block, mamba_seq, residual_block)
from .params import named_parameters, parameter_manifest
from .shape_prior import (ShapePrior, VSPParams, init_shape_prior,
                          init_vsp_params, vsp_forward)
from .tensor import Tensor, add, reshape, upsample_nearest

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class NetworkConfig:
    """Architecture knobs; see README for the JSON schema."""

    patch_size: tuple[int, int, int]
    n_classes: int
    channels: list[int]
    pooling_per_axis: list[tuple[int, int, int]]
    variant: str = "bot"
    vsp: bool = False
    input_channels: int = 1
    vsp_ratio: int = 16
    state_size: int = 8
    expand: int = 2
    conv_width: int = 4
    dtype: str = "f64"

    @property
    def stages(self) -> int:
        return len(self.channels)

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    def validate(self) -> None:
        if self.stages < 2:
            raise ConfigError(f"need at least 2 stages, got {self.stages}")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigError(
                f"channels must strictly increase toward the bottleneck: {self.channels}")
        if len(self.pooling_per_axis) != self.stages - 1:
            raise ConfigError(
                f"expected {self.stages - 1} pooling triples, got "
                f"{len(self.pooling_per_axis)}")
        if self.variant not in ("bot", "enc"):
            raise ConfigError(f"variant must be 'bot' or 'enc', got {self.variant!r}")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes (background + 1)")
        for axis in range(3):
            total = 1
            for trip in self.pooling_per_axis:
                total *= trip[axis]
            if self.patch_size[axis] % total != 0:
                raise ConfigError(
                    f"pooling product {total} does not divide patch axis "
                    f"{axis} ({self.patch_size[axis]})")
        if self.vsp:
            for axis in range(3):
                if self.patch_size[axis] % self.vsp_ratio != 0:
                    raise ConfigError(
                        f"patch axis {axis} ({self.patch_size[axis]}) not "
                        f"divisible by the prior ratio {self.vsp_ratio}")

    def stage_spatial(self, stage: int) -> tuple[int, int, int]:
        ext = list(self.patch_size)
        for trip in self.pooling_per_axis[:stage]:
            for axis in range(3):
                ext[axis] //= trip[axis]
        return tuple(ext)

    def prior_spatial(self) -> tuple[int, int, int]:
        return tuple(max(1, p // self.vsp_ratio) for p in self.patch_size)

    def vsp_stages(self) -> list[int]:
        """Skip stages that route through the prior module when enabled."""
        if not self.vsp:
            return []
        prior = self.prior_spatial()
        out = []
        for s in range(1, self.stages - 1):
            ext = self.stage_spatial(s)
            if all(e % p == 0 for e, p in zip(ext, prior)):
                out.append(s)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_size"] = list(self.patch_size)
        d["pooling_per_axis"] = [list(t) for t in self.pooling_per_axis]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d["patch_size"] = tuple(d["patch_size"])
        d["pooling_per_axis"] = [tuple(t) for t in d["pooling_per_axis"]]
        d["channels"] = list(d["channels"])
        cfg = cls(**d)
        cfg.validate()
        return cfg


def mini_config(**overrides) -> NetworkConfig:
    """The desk-scale default: patch 32^3, 4 stages, channels [8,16,32,64]."""
    base = dict(
        patch_size=(32, 32, 32),
        n_classes=5,
        channels=[8, 16, 32, 64],
        pooling_per_axis=[(2, 2, 2)] * 3,
        variant="bot",
        vsp=False,
        state_size=4,
        expand=2,
        conv_width=4,
    )
    base.update(overrides)
    cfg = NetworkConfig(**base)
    cfg.validate()
    return cfg


@dataclass
class EncoderStage:
    transition: ConvBlockParams | None
    res1: ResBlockParams
    res2: ResBlockParams
    inner: MambaInnerParams | None


@dataclass
class DecoderStage:
    upconv: Tensor
    res1: ResBlockParams
    res2: ResBlockParams


@dataclass
class SegNetwork:
    cfg: NetworkConfig
    stem: ConvBlockParams
    encoder: list[EncoderStage]
    decoder: list[DecoderStage]
    head_kernel: Tensor
    head_bias: Tensor
    prior: ShapePrior | None
    vsp: dict[str, VSPParams] = field(default_factory=dict)

    def named_parameters(self):
        for name, t in named_parameters(self):
            if not name.startswith("cfg"):
                yield name, t

    def manifest(self):
        return [(n, t.shape, str(t.dtype)) for n, t in self.named_parameters()]


def build_network(cfg: NetworkConfig, seed: int = 0) -> SegNetwork:
    """Deterministic build; the prior draws from its own stream so that
    toggling it never shifts the backbone initialization."""
    cfg.validate()
    ss = np.random.SeedSequence(seed)
    rng, rng_vsp = (np.random.default_rng(s) for s in ss.spawn(2))
    dt = cfg.np_dtype
    mamba_kw = dict(state_size=cfg.state_size, expand=cfg.expand,
                    conv_width=cfg.conv_width, dtype=dt)

    stem = init_conv_block(cfg.input_channels, cfg.channels[0], (3, 3, 3), rng, dt)
    encoder: list[EncoderStage] = []
    for s, ch in enumerate(cfg.channels):
        transition = None
        if s > 0:
            transition = init_conv_block(cfg.channels[s - 1], ch, (3, 3, 3), rng, dt)
        with_mamba = cfg.variant == "enc" or s == cfg.stages - 1
        encoder.append(EncoderStage(
            transition=transition,
            res1=init_res_block(ch, rng, dt),
            res2=init_res_block(ch, rng, dt),
            inner=init_mamba_inner(ch, rng, **mamba_kw) if with_mamba else None,
        ))
    decoder: list[DecoderStage] = []
    for s in range(cfg.stages - 1):
        decoder.append(DecoderStage(
            upconv=Tensor(_he_kernel(rng, cfg.channels[s], cfg.channels[s + 1],
                                     (1, 1, 1), dt), requires_grad=True),
            res1=init_res_block(cfg.channels[s], rng, dt),
            res2=init_res_block(cfg.channels[s], rng, dt),
        ))
    head_kernel = Tensor(_he_kernel(rng, cfg.n_classes, cfg.channels[0],
                                    (1, 1, 1), dt), requires_grad=True)
    head_bias = Tensor(np.zeros(cfg.n_classes, dtype=dt), requires_grad=True)

    prior = None
    vsp: dict[str, VSPParams] = {}
    if cfg.vsp:
        prior = init_shape_prior(cfg.n_classes, cfg.prior_spatial(), rng_vsp,
                                 dtype=dt)
        prior_sp = cfg.prior_spatial()
        for s in cfg.vsp_stages():
            ext = cfg.stage_spatial(s)
            up = tuple(e // p for e, p in zip(ext, prior_sp))
            vsp[str(s)] = init_vsp_params(cfg.channels[s], cfg.n_classes, up,
                                          rng_vsp, **mamba_kw)
    return SegNetwork(cfg=cfg, stem=stem, encoder=encoder, decoder=decoder,
                      head_kernel=head_kernel, head_bias=head_bias,
                      prior=prior, vsp=vsp)


def forward(net: SegNetwork, x, use_vsp: bool | None = None,
            return_priors: bool = False):
    """Logits at input resolution: (B, N, H, W, L).

    ``use_vsp=False`` bypasses the prior module (identity skips), which
    reproduces the plain build bit-exactly when both were built from the
    same seed.
    """
    cfg = net.cfg
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 5 or x.shape[1] != cfg.input_channels:
        raise ShapeError(f"expected (B,{cfg.input_channels},H,W,L), got {x.shape}")
    if tuple(x.shape[2:]) != tuple(cfg.patch_size):
        raise ShapeError(
            f"spatial extents {x.shape[2:]} != patch size {cfg.patch_size}")
    if x.dtype != cfg.np_dtype:
        x = Tensor(x.data.astype(cfg.np_dtype), requires_grad=x.requires_grad)
    if use_vsp is None:
        use_vsp = cfg.vsp and net.prior is not None

    cur = conv_block(x, net.stem, stride=1, padding=1)
    skips: list[Tensor] = []
    for s, stage in enumerate(net.encoder):
        if stage.transition is not None:
            cur = conv_block(cur, stage.transition,
                             stride=cfg.pooling_per_axis[s - 1], padding=1)
        cur = residual_block(residual_block(cur, stage.res1), stage.res2)
        if stage.inner is not None:
            cur = mamba_seq(cur, stage.inner)
        if s < cfg.stages - 1:
            skips.append(cur)

    priors: dict[str, Tensor] = {}
    for s in range(cfg.stages - 2, -1, -1):
        dec = net.decoder[s]
        cur = upsample_nearest(cur, cfg.pooling_per_axis[s])
        cur = conv3d(cur, dec.upconv)
        skip = skips[s]
        if use_vsp and str(s) in net.vsp:
            skip, v_e = vsp_forward(skip, net.prior, net.vsp[str(s)])
            priors[str(s)] = v_e
        cur = add(cur, skip)
        cur = residual_block(residual_block(cur, dec.res1), dec.res2)

    logits = conv3d(cur, net.head_kernel)
    logits = add(logits, reshape(net.head_bias, (cfg.n_classes, 1, 1, 1)))
    return (logits, priors) if return_priors else logits
