"""The finite-difference verification suite, grouped by subsystem.

Every differentiable primitive is probed at three seeded points; composite
blocks (the gated block, the shape prior module, the full network loss) are
probed at one point over a sampled subset of coordinates.  Exercised by the
``gradcheck`` CLI command and the acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import conv3d, depthwise_conv1d
from .mamba import (ResBlockParams, init_mamba_block, mamba_block,
                    residual_block)
from .network import build_network, forward, mini_config
from .shape_prior import ShapePrior, init_shape_prior, init_vsp_params, vsp_forward
from .ssm import SSMParams, linear_recurrence, selective_scan, init_ssm_params
from .tensor import (Tensor, grad_check, instance_norm, layer_norm,
                     leaky_relu, linear, mul, reciprocal, sigmoid, silu,
                     softplus, texp, tlog, tsqrt, tsum)
from .training import combined_loss, cross_entropy_loss, dice_loss

OP_TOL = 1e-4
SMOOTH_TOL = 1e-6
COMPOSITE_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    module: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _run(name, module, fn, inputs, tol, seeds=(11, 22, 33), max_probes=None):
    worst = 0.0
    for seed in seeds:
        report = grad_check(fn, inputs(np.random.default_rng(seed)),
                            tol=tol, max_probes=max_probes, seed=seed)
        worst = max(worst, report.max_rel_err)
    return CheckResult(name=name, module=module, max_rel_err=worst, tol=tol)


def _tensor_checks():
    smooth = {
        "silu": silu, "softplus": softplus, "exp": texp,
        "sigmoid": sigmoid,
        "leaky_relu": lambda t: leaky_relu(t, 0.01),
    }
    checks = []
    for name, fn in smooth.items():
        checks.append((f"elementwise.{name}", "tensor",
                       lambda t, fn=fn: tsum(fn(t)),
                       lambda rng: [Tensor(rng.standard_normal((3, 4)) + 0.27)],
                       SMOOTH_TOL, None))
    for name, fn, off in (("log", tlog, 3.0), ("sqrt", tsqrt, 3.0),
                          ("reciprocal", reciprocal, 3.0)):
        checks.append((f"elementwise.{name}", "tensor",
                       lambda t, fn=fn: tsum(fn(t)),
                       lambda rng, off=off: [Tensor(rng.standard_normal((3, 4)) * 0.4 + off)],
                       SMOOTH_TOL, None))
    checks.append(("linear", "tensor",
                   lambda x, w, b: tsum(silu(linear(x, w, b))),
                   lambda rng: [Tensor(rng.standard_normal((2, 3))),
                                Tensor(rng.standard_normal((3, 4))),
                                Tensor(rng.standard_normal(4))],
                   SMOOTH_TOL, None))
    checks.append(("conv3d", "tensor",
                   lambda x, k: tsum(silu(conv3d(x, k, 1, 1))),
                   lambda rng: [Tensor(rng.standard_normal((1, 2, 4, 4, 4))),
                                Tensor(rng.standard_normal((2, 2, 3, 3, 3)) * 0.4)],
                   OP_TOL, None))
    checks.append(("depthwise_conv1d", "tensor",
                   lambda x, k: tsum(silu(depthwise_conv1d(x, k))),
                   lambda rng: [Tensor(rng.standard_normal((1, 3, 6))),
                                Tensor(rng.standard_normal((3, 4)))],
                   OP_TOL, None))
    checks.append(("instance_norm", "tensor",
                   lambda x, g, b: tsum(silu(instance_norm(x, g, b))),
                   lambda rng: [Tensor(rng.standard_normal((1, 2, 3, 3, 3))),
                                Tensor(rng.standard_normal(2)),
                                Tensor(rng.standard_normal(2))],
                   OP_TOL, None))
    checks.append(("layer_norm", "tensor",
                   lambda x, g, b: tsum(silu(layer_norm(x, g, b))),
                   lambda rng: [Tensor(rng.standard_normal((2, 5, 4))),
                                Tensor(rng.standard_normal(4)),
                                Tensor(rng.standard_normal(4))],
                   OP_TOL, None))
    return checks


def _ssm_checks():
    def scan_fn(a, b):
        return tsum(mul(linear_recurrence(a, b, axis=1, chunk_size=4),
                        linear_recurrence(a, b, axis=1, chunk_size=4)))

    def selective_fn(x, a, dtb, wdt, wb, wc, skip):
        p = SSMParams(A=a, dt_base=dtb, w_dt=wdt, w_b=wb, w_c=wc, skip=skip)
        return tsum(selective_scan(p, x, chunk_size=3))

    def selective_inputs(rng):
        p = init_ssm_params(2, 3, rng)
        return [Tensor(rng.standard_normal((1, 7, 2))), p.A, p.dt_base,
                p.w_dt, p.w_b, p.w_c, p.skip]

    return [
        ("linear_recurrence", "ssm", scan_fn,
         lambda rng: [Tensor(rng.uniform(0.1, 0.9, (1, 9, 2, 3))),
                      Tensor(rng.standard_normal((1, 9, 2, 3)))],
         SMOOTH_TOL, None),
        ("selective_scan", "ssm", selective_fn, selective_inputs, OP_TOL, None),
    ]


def _mamba_checks():
    def fn_factory(rng):
        p = init_mamba_block(2, rng, state_size=2, expand=2, conv_width=3)
        x = Tensor(rng.standard_normal((1, 2, 2, 2, 2)))
        q = p.inner
        leaves = [x, p.res1.kernel, p.res1.gamma, p.res2.kernel, q.ln_gamma,
                  q.w_in_x, q.w_in_z, q.conv1d, q.ssm.A, q.ssm.dt_base,
                  q.ssm.w_dt, q.ssm.w_b, q.ssm.w_c, q.ssm.skip, q.w_out]
        return p, leaves

    holder = {}

    def inputs(rng):
        p, leaves = fn_factory(rng)
        holder["p"] = p
        return leaves

    def fn(*ts):
        return tsum(mamba_block(ts[0], holder["p"]))

    return [
        ("residual_block", "mamba",
         lambda x, k, g, b: tsum(residual_block(
             x, ResBlockParams(kernel=k, gamma=g, beta=b))),
         lambda rng: [Tensor(rng.standard_normal((1, 2, 4, 4, 4))),
                      Tensor(rng.standard_normal((2, 2, 3, 3, 3)) * 0.4),
                      Tensor(rng.standard_normal(2)),
                      Tensor(rng.standard_normal(2))],
         OP_TOL, 60),
        ("mamba_block", "mamba", fn, inputs, COMPOSITE_TOL, 40),
    ]


def _vsp_checks():
    holder = {}

    def inputs(rng):
        prior = init_shape_prior(2, (2, 2, 2), rng)
        prior.v0.data = rng.standard_normal(prior.v0.shape)
        params = init_vsp_params(2, 2, (2, 2, 2), rng, state_size=2,
                                 expand=1, conv_width=3)
        holder["params"] = params
        f_o = Tensor(rng.standard_normal((1, 2, 4, 4, 4)))
        return [prior.v0, f_o]

    def fn(v0, f_o):
        f_e, v_e = vsp_forward(f_o, ShapePrior(v0=v0), holder["params"])
        return tsum(mul(f_e, f_e)) + tsum(mul(v_e, v_e))

    return [("vsp_forward", "vsp", fn, inputs, COMPOSITE_TOL, 40)]


def _loss_checks():
    def dice_inputs(rng):
        return [Tensor(rng.standard_normal((1, 3, 3, 3, 3)))]

    labels_holder = {}

    def dice_fn(t):
        return dice_loss(t, labels_holder["y"])

    def make_inputs(rng):
        labels_holder["y"] = rng.integers(0, 3, size=(1, 3, 3, 3))
        return dice_inputs(rng)

    def ce_fn(t):
        return cross_entropy_loss(t, labels_holder["y"])

    def comb_fn(t):
        return combined_loss(t, labels_holder["y"])

    return [
        ("dice_loss", "losses", dice_fn, make_inputs, 1e-5, None),
        ("cross_entropy_loss", "losses", ce_fn, make_inputs, SMOOTH_TOL, None),
        ("combined_loss", "losses", comb_fn, make_inputs, 1e-5, None),
    ]


def _network_checks(probes: int = 3):
    holder = {}

    def inputs(rng):
        cfg = mini_config(vsp=True, dtype="f64")
        net = build_network(cfg, seed=int(rng.integers(1 << 30)))
        holder["net"] = net
        holder["labels"] = rng.integers(0, cfg.n_classes,
                                        size=(1,) + tuple(cfg.patch_size))
        x = Tensor(rng.standard_normal((1, 1) + tuple(cfg.patch_size)) * 0.3 + 0.5)
        names = [n for n, _ in net.named_parameters()]
        picks = rng.choice(len(names), size=12, replace=False)
        lookup = dict(net.named_parameters())
        return [x] + [lookup[names[i]] for i in picks]

    def fn(*ts):
        logits = forward(holder["net"], ts[0])
        return combined_loss(logits, holder["labels"])

    return [("mini_network_loss", "network", fn, inputs, COMPOSITE_TOL,
             probes, (101,))]


def run_gradcheck_suite(modules=None, network_probes: int = 3) -> list[CheckResult]:
    """Run the suite; returns one result per check."""
    groups = {
        "tensor": _tensor_checks,
        "ssm": _ssm_checks,
        "mamba": _mamba_checks,
        "vsp": _vsp_checks,
        "losses": _loss_checks,
        "network": lambda: _network_checks(network_probes),
    }
    if modules is None:
        selected = list(groups)
    else:
        unknown = set(modules) - set(groups)
        if unknown:
            raise ValueError(f"unknown gradcheck module(s): {sorted(unknown)}; "
                             f"choose from {sorted(groups)}")
        selected = list(modules)
    results = []
    for mod in selected:
        for check in groups[mod]():
            name, module, fn, inputs, tol, probes = check[:6]
            seeds = check[6] if len(check) > 6 else (11, 22, 33)
            results.append(_run(name, module, fn, inputs, tol,
                                seeds=seeds, max_probes=probes))
    return results
