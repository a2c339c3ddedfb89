"""Scan-kernel wall-clock benchmark and the quadratic attention reference.

Records are line-oriented: ``L, variant, wall_ns, max_abs_err_vs_sequential``.
The attention reference computes softmax(QK^T)V in row blocks, so memory
stays bounded while the arithmetic remains O(L^2); its error field is 0 by
convention since it approximates nothing.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .ssm import (Tensor, apply_global_conv, build_conv_kernel, discretize_zoh,
                  init_ssm_params, scan_chunked, scan_sequential,
                  selective_scan)

VARIANTS = ("seq", "chunked", "conv", "selective", "attention")


def naive_attention(x: np.ndarray, wq, wk, wv, block: int = 1024) -> np.ndarray:
    """Single-head softmax attention with an explicit L x L score pass."""
    q = x @ wq
    k = x @ wk
    v = x @ wv
    scale = 1.0 / math.sqrt(x.shape[1])
    out = np.empty_like(q)
    for i0 in range(0, x.shape[0], block):
        s = (q[i0:i0 + block] @ k.T) * scale
        s -= s.max(axis=1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=1, keepdims=True)
        out[i0:i0 + block] = s @ v
    return out


def _median_ns(fn, repeats: int) -> int:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return int(np.median(times))


def run_scan_bench(lmin: int = 256, lmax: int = 16384,
                   variants=("seq", "chunked", "conv"), channels: int = 16,
                   state_size: int = 8, repeats: int = 3,
                   seed: int = 0) -> list[dict]:
    """Benchmark each variant over L = lmin, 2*lmin, ..., lmax."""
    variants = tuple(variants)
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; choose from {VARIANTS}")
    records: list[dict] = []
    length = lmin
    while length <= lmax:
        rng = np.random.default_rng(seed + length)
        params = init_ssm_params(channels, state_size, rng, with_skip=False)
        a = -np.exp(rng.uniform(-2, 0, (channels, state_size)))
        b = rng.standard_normal((channels, state_size))
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(0.1), channels))
        c = rng.standard_normal((channels, state_size))
        disc = discretize_zoh(Tensor(a), Tensor(b), Tensor(dt))
        x = rng.standard_normal((length, channels))
        xt = Tensor(x)
        y_seq = None
        if {"seq", "chunked", "conv"} & set(variants):
            y_seq = scan_sequential(disc, Tensor(c), xt).data

        for variant in variants:
            if variant == "seq":
                wall = _median_ns(lambda: scan_sequential(disc, Tensor(c), xt),
                                  repeats)
                err = 0.0
            elif variant == "chunked":
                chunk = max(8, int(math.sqrt(length)))
                wall = _median_ns(
                    lambda: scan_chunked(disc, Tensor(c), xt, chunk_size=chunk),
                    repeats)
                y = scan_chunked(disc, Tensor(c), xt, chunk_size=chunk).data
                err = float(np.abs(y - y_seq).max())
            elif variant == "conv":
                def run_conv():
                    kern = build_conv_kernel(disc, Tensor(c), length)
                    return apply_global_conv(xt, kern)
                wall = _median_ns(run_conv, repeats)
                err = float(np.abs(run_conv().data - y_seq).max())
            elif variant == "selective":
                wall = _median_ns(lambda: selective_scan(params, xt), repeats)
                y1 = selective_scan(params, xt, chunk_size=1).data
                y2 = selective_scan(params, xt).data
                err = float(np.abs(y2 - y1).max())
            else:  # attention
                wq = rng.standard_normal((channels, channels))
                wk = rng.standard_normal((channels, channels))
                wv = rng.standard_normal((channels, channels))
                wall = _median_ns(lambda: naive_attention(x, wq, wk, wv),
                                  repeats)
                err = 0.0
            records.append({
                "L": length,
                "variant": variant,
                "wall_ns": wall,
                "max_abs_err_vs_sequential": err,
            })
        length *= 2
    return records


def fit_exponent(records: list[dict], variant: str) -> float:
    """Least-squares slope of log(wall time) against log(L)."""
    pts = [(r["L"], r["wall_ns"]) for r in records if r["variant"] == variant]
    if len(pts) < 2:
        raise ValueError(f"need >= 2 records for variant {variant!r}")
    logl = np.log([p[0] for p in pts])
    logt = np.log([p[1] for p in pts])
    slope = np.polyfit(logl, logt, 1)[0]
    return float(slope)


def format_records(records: list[dict]) -> str:
    lines = ["L, variant, wall_ns, max_abs_err_vs_sequential"]
    for r in records:
        lines.append(f"{r['L']}, {r['variant']}, {r['wall_ns']}, "
                     f"{r['max_abs_err_vs_sequential']:.3e}")
    return "\n".join(lines) + "\n"
