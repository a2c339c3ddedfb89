"""Dense tensors with a reverse-mode differentiation tape.

The engine is deliberately small: a ``Tensor`` wraps a numpy array, and a
``Tape`` records every operation executed while it is active.  Each recorded
node stores the op name, the ids of its input nodes, the non-differentiable
attributes, and the forward value, so a tape can be replayed forward
(bit-exactly in f64) and walked backward to accumulate gradients.

Ops are registered in a forward/vjp registry.  Forward functions are pure
numpy; vjp functions map an upstream gradient to per-input gradients.  New
primitives (e.g. the scan kernel) register themselves through
``register_op`` from their own modules.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError, UsageError

FLOAT_DTYPES = (np.float32, np.float64)


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """Dense N-dimensional real array with an optional gradient slot.

    Data is immutable by convention once the tensor participates in a tape;
    the optimizer rebinds ``data`` rather than mutating it in place.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar; everything funnels through the registered ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# op registry
# ---------------------------------------------------------------------------

ForwardFn = Callable[..., np.ndarray]
# vjp(grad_out, out_value, input_values, attrs) -> list of per-input grads
VjpFn = Callable[[np.ndarray, np.ndarray, Sequence[np.ndarray], dict], list]

_FORWARD: dict[str, ForwardFn] = {}
_VJP: dict[str, VjpFn] = {}


def register_op(name: str, forward: ForwardFn, vjp: VjpFn) -> None:
    if name in _FORWARD:
        raise UsageError(f"op {name!r} already registered")
    _FORWARD[name] = forward
    _VJP[name] = vjp


def registered_ops() -> list[str]:
    return sorted(_FORWARD)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


@dataclass
class TapeNode:
    op: str
    inputs: tuple[int, ...]
    attrs: dict
    value: np.ndarray
    needs_grad: bool


_ACTIVE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = []
        _ACTIVE.stack = stack
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations; node order is a topological order."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.outputs: list[int] = []
        self._tensors: list[Tensor | None] = []
        self._ids: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    def _register_leaf(self, t: Tensor) -> int:
        nid = self._ids.get(id(t))
        if nid is not None:
            return nid
        nid = len(self.nodes)
        self.nodes.append(
            TapeNode("leaf", (), {}, t.data, needs_grad=t.requires_grad)
        )
        self._tensors.append(t)
        self._ids[id(t)] = nid
        return nid

    def _record(self, op: str, inputs: Sequence[Tensor], attrs: dict, out: Tensor) -> None:
        in_ids = tuple(self._register_leaf(t) for t in inputs)
        needs = any(self.nodes[i].needs_grad for i in in_ids)
        nid = len(self.nodes)
        self.nodes.append(TapeNode(op, in_ids, attrs, out.data, needs_grad=needs))
        self._tensors.append(out)
        self._ids[id(out)] = nid

    def node_id(self, t: Tensor) -> int | None:
        return self._ids.get(id(t))

    def backward(self, output: Tensor) -> None:
        """Accumulate d(output)/d(leaf) into every requires-grad leaf."""
        if output.size != 1:
            raise UsageError("backward requires a scalar output")
        oid = self._ids.get(id(output))
        if oid is None:
            raise UsageError("output was not recorded on this tape")
        self.outputs.append(oid)
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[oid] = np.ones_like(output.data)
        for i in range(oid, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            if node.op == "leaf":
                t = self._tensors[i]
                if t is not None and t.requires_grad:
                    t.grad = g if t.grad is None else t.grad + g
                continue
            if not node.needs_grad:
                grads[i] = None
                continue
            in_vals = [self.nodes[j].value for j in node.inputs]
            in_grads = _VJP[node.op](g, node.value, in_vals, node.attrs)
            for j, gj in zip(node.inputs, in_grads):
                if gj is None or not self.nodes[j].needs_grad:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
            grads[i] = None

    def replay(self) -> list[np.ndarray]:
        """Recompute every node value from the recorded leaf values."""
        vals: list[np.ndarray] = []
        for node in self.nodes:
            if node.op == "leaf":
                vals.append(node.value)
            else:
                ins = [vals[j] for j in node.inputs]
                vals.append(_FORWARD[node.op](*ins, **node.attrs))
        return vals

    def replay_matches(self) -> bool:
        """True when a forward replay reproduces every recorded value bit-exactly."""
        vals = self.replay()
        return all(np.array_equal(v, node.value) for v, node in zip(vals, self.nodes))


def backward(tape: Tape, output: Tensor) -> None:
    tape.backward(output)


def _apply(op: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    arrays = [t.data for t in inputs]
    value = _FORWARD[op](*arrays, **attrs)
    out = Tensor.__new__(Tensor)
    out.data = value
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    tape = current_tape()
    if tape is not None:
        tape._record(op, inputs, attrs, out)
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------


def _check_broadcast(sa: tuple, sb: tuple) -> None:
    for a, b in zip(reversed(sa), reversed(sb)):
        if a != b and a != 1 and b != 1:
            raise ShapeError(f"shapes {sa} and {sb} are not broadcast-compatible")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to ``shape`` by summing over broadcast axes."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # overflow-free: sigmoid(x) = (1 + tanh(x/2)) / 2
    out = np.tanh(x * x.dtype.type(0.5))
    out += x.dtype.type(1.0)
    out *= x.dtype.type(0.5)
    return out


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def _fwd_add(a, b):
    _check_broadcast(a.shape, b.shape)
    return a + b


def _fwd_sub(a, b):
    _check_broadcast(a.shape, b.shape)
    return a - b


def _fwd_mul(a, b):
    _check_broadcast(a.shape, b.shape)
    return a * b


register_op("add", _fwd_add, lambda g, o, ins, at: [
    _unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)])
register_op("sub", _fwd_sub, lambda g, o, ins, at: [
    _unbroadcast(g, ins[0].shape), _unbroadcast(-g, ins[1].shape)])
register_op("mul", _fwd_mul, lambda g, o, ins, at: [
    _unbroadcast(g * ins[1], ins[0].shape), _unbroadcast(g * ins[0], ins[1].shape)])
register_op("neg", lambda a: -a, lambda g, o, ins, at: [-g])
register_op("exp", np.exp, lambda g, o, ins, at: [g * o])
register_op("log", np.log, lambda g, o, ins, at: [g / ins[0]])
register_op("sqrt", np.sqrt, lambda g, o, ins, at: [g * (0.5 / o)])
register_op("reciprocal", np.reciprocal,
            lambda g, o, ins, at: [-g * o * o])
register_op("sigmoid", _sigmoid, lambda g, o, ins, at: [g * o * (1.0 - o)])


def _fwd_silu(a):
    return a * _sigmoid(a)


def _vjp_silu(g, o, ins, at):
    s = _sigmoid(ins[0])
    return [g * (s * (1.0 + ins[0] * (1.0 - s)))]


register_op("silu", _fwd_silu, _vjp_silu)


def _fwd_leaky_relu(a, alpha):
    return np.where(a > 0, a, a * a.dtype.type(alpha))


def _vjp_leaky_relu(g, o, ins, at):
    a = ins[0]
    return [g * np.where(a > 0, a.dtype.type(1.0), a.dtype.type(at["alpha"]))]


register_op("leaky_relu", _fwd_leaky_relu, _vjp_leaky_relu)


def _fwd_softplus(a):
    return np.logaddexp(a.dtype.type(0.0), a)


register_op("softplus", _fwd_softplus,
            lambda g, o, ins, at: [g * _sigmoid(ins[0])])


def _fwd_where(a, b, cond):
    return np.where(cond, a, b)


def _vjp_where(g, o, ins, at):
    cond = at["cond"]
    z = np.zeros_like(g)
    return [_unbroadcast(np.where(cond, g, z), ins[0].shape),
            _unbroadcast(np.where(cond, z, g), ins[1].shape)]


register_op("where", _fwd_where, _vjp_where)


def add(a, b) -> Tensor:
    return _apply("add", [as_tensor(a), as_tensor(b)])


def sub(a, b) -> Tensor:
    return _apply("sub", [as_tensor(a), as_tensor(b)])


def mul(a, b) -> Tensor:
    return _apply("mul", [as_tensor(a), as_tensor(b)])


def neg(a) -> Tensor:
    return _apply("neg", [as_tensor(a)])


def texp(a) -> Tensor:
    return _apply("exp", [as_tensor(a)])


def tlog(a) -> Tensor:
    return _apply("log", [as_tensor(a)])


def tsqrt(a) -> Tensor:
    return _apply("sqrt", [as_tensor(a)])


def reciprocal(a) -> Tensor:
    return _apply("reciprocal", [as_tensor(a)])


def sigmoid(a) -> Tensor:
    return _apply("sigmoid", [as_tensor(a)])


def silu(a) -> Tensor:
    return _apply("silu", [as_tensor(a)])


def leaky_relu(a, alpha: float = 0.01) -> Tensor:
    return _apply("leaky_relu", [as_tensor(a)], alpha=float(alpha))


def softplus(a) -> Tensor:
    return _apply("softplus", [as_tensor(a)])


def where(cond, a, b) -> Tensor:
    """Elementwise select with a constant (non-differentiable) condition."""
    cond = np.asarray(cond, dtype=bool)
    return _apply("where", [as_tensor(a), as_tensor(b)], cond=cond)


_ELEMENTWISE_UNARY = {
    "silu": silu,
    "softplus": softplus,
    "exp": texp,
    "reciprocal": reciprocal,
}
_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, x, y=None, alpha: float = 0.01) -> Tensor:
    """Apply a named elementwise op; binary kinds broadcast trailing axes."""
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind in _ELEMENTWISE_UNARY:
        return _ELEMENTWISE_UNARY[kind](x)
    if kind in _ELEMENTWISE_BINARY:
        if y is None:
            raise UsageError(f"elementwise {kind!r} needs two operands")
        return _ELEMENTWISE_BINARY[kind](x, y)
    raise UsageError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _fwd_sum(a, axis, keepdims):
    return a.sum(axis=axis, keepdims=keepdims)


def _expand_reduced(g, in_shape, axis, keepdims):
    if not keepdims:
        for ax in sorted(_norm_axes(axis, len(in_shape))):
            g = np.expand_dims(g, ax)
    # read-only broadcast view; gradient accumulation never mutates in place
    return np.broadcast_to(g, in_shape)


def _vjp_sum(g, o, ins, at):
    return [_expand_reduced(g, ins[0].shape, at["axis"], at["keepdims"])]


register_op("sum", _fwd_sum, _vjp_sum)


def _fwd_mean(a, axis, keepdims):
    return a.mean(axis=axis, keepdims=keepdims)


def _vjp_mean(g, o, ins, at):
    shape = ins[0].shape
    axes = _norm_axes(at["axis"], len(shape))
    n = 1
    for ax in axes:
        n *= shape[ax]
    return [_expand_reduced(g, shape, at["axis"], at["keepdims"]) / n]


register_op("mean", _fwd_mean, _vjp_mean)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _norm_axes(axis, a.ndim) if axis is not None else None
    return _apply("sum", [a], axis=axis, keepdims=keepdims)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _norm_axes(axis, a.ndim) if axis is not None else None
    return _apply("mean", [a], axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# linear map on the trailing axis
# ---------------------------------------------------------------------------


def _fwd_linear(x, w):
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(
            f"linear: inner dims disagree ({x.shape[-1]} vs {w.shape[0]})")
    return x @ w


def _vjp_linear(g, o, ins, at):
    x, w = ins
    gx = g @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    gw = x2.T @ g2
    return [gx, gw]


register_op("linear", _fwd_linear, _vjp_linear)


def linear(x, w, b=None) -> Tensor:
    """y = x @ w (+ b) applied to the trailing axis of x."""
    out = _apply("linear", [as_tensor(x), as_tensor(w)])
    if b is not None:
        out = add(out, b)
    return out


# ---------------------------------------------------------------------------
# structure ops: reshape / permute / concat / split / resampling
# ---------------------------------------------------------------------------


def _fwd_reshape(a, shape):
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    return a.reshape(shape)


register_op("reshape", _fwd_reshape,
            lambda g, o, ins, at: [g.reshape(ins[0].shape)])


def _fwd_permute(a, axes):
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"invalid permutation {axes} for ndim {a.ndim}")
    return np.ascontiguousarray(a.transpose(axes))


def _vjp_permute(g, o, ins, at):
    inv = np.argsort(at["axes"])
    return [np.ascontiguousarray(g.transpose(tuple(inv)))]


register_op("permute", _fwd_permute, _vjp_permute)


def _fwd_concat(*arrays, axis):
    base = arrays[0].shape
    for a in arrays[1:]:
        if len(a.shape) != len(base):
            raise ShapeError("concat: rank mismatch")
        for i, (x, y) in enumerate(zip(base, a.shape)):
            if i != axis and x != y:
                raise ShapeError(
                    f"concat: extents differ off-axis ({base} vs {a.shape})")
    return np.concatenate(arrays, axis=axis)


def _vjp_concat(g, o, ins, at):
    axis = at["axis"]
    sizes = [a.shape[axis] for a in ins]
    offsets = np.cumsum(sizes)[:-1]
    return list(np.split(g, offsets, axis=axis))


register_op("concat", _fwd_concat, _vjp_concat)


def _fwd_slice(a, axis, start, stop):
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop)
    return np.ascontiguousarray(a[tuple(sl)])


def _vjp_slice(g, o, ins, at):
    out = np.zeros_like(ins[0])
    sl = [slice(None)] * out.ndim
    sl[at["axis"]] = slice(at["start"], at["stop"])
    out[tuple(sl)] = g
    return [out]


register_op("slice", _fwd_slice, _vjp_slice)


def _fwd_upsample(a, factors):
    out = a
    for i, f in enumerate(factors):
        if f > 1:
            out = np.repeat(out, f, axis=a.ndim - len(factors) + i)
    return out


def _vjp_upsample(g, o, ins, at):
    factors = at["factors"]
    nd = ins[0].ndim
    lead = nd - len(factors)
    shape = []
    for i, s in enumerate(ins[0].shape):
        if i < lead:
            shape.append(s)
        else:
            shape.extend((s, factors[i - lead]))
    g = g.reshape(shape)
    axes = tuple(lead + 1 + 2 * i for i in range(len(factors)))
    return [g.sum(axis=axes)]


register_op("upsample_nearest", _fwd_upsample, _vjp_upsample)


def _fwd_downsample(a, strides):
    sl = [slice(None)] * (a.ndim - len(strides))
    sl += [slice(None, None, s) for s in strides]
    return np.ascontiguousarray(a[tuple(sl)])


def _vjp_downsample(g, o, ins, at):
    out = np.zeros_like(ins[0])
    sl = [slice(None)] * (out.ndim - len(at["strides"]))
    sl += [slice(None, None, s) for s in at["strides"]]
    out[tuple(sl)] = g
    return [out]


register_op("downsample_stride", _fwd_downsample, _vjp_downsample)


def _fwd_broadcast(a, shape):
    _check_broadcast(a.shape, shape)
    return np.broadcast_to(a, shape).copy()


register_op("broadcast_to", _fwd_broadcast,
            lambda g, o, ins, at: [_unbroadcast(g, ins[0].shape)])


def reshape(a, shape) -> Tensor:
    return _apply("reshape", [as_tensor(a)], shape=tuple(int(s) for s in shape))


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(ax % a.ndim for ax in axes)
    return _apply("permute", [a], axes=axes)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise UsageError("concat of zero tensors")
    return _apply("concat", ts, axis=axis % ts[0].ndim)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    return _apply("slice", [a], axis=axis % a.ndim, start=int(start), stop=int(stop))


def split(a, sections: int, axis: int = 0) -> list[Tensor]:
    """Split into equal sections along ``axis``; inverse of concat."""
    a = as_tensor(a)
    axis = axis % a.ndim
    extent = a.shape[axis]
    if extent % sections != 0:
        raise ShapeError(f"cannot split extent {extent} into {sections} parts")
    step = extent // sections
    return [slice_axis(a, axis, i * step, (i + 1) * step) for i in range(sections)]


def upsample_nearest(a, factors) -> Tensor:
    """Repeat each element ``factor`` times along the trailing axes."""
    factors = tuple(int(f) for f in factors)
    if any(f < 1 for f in factors):
        raise ShapeError(f"upsample factors must be >= 1, got {factors}")
    return _apply("upsample_nearest", [as_tensor(a)], factors=factors)


def downsample_stride(a, strides) -> Tensor:
    """Keep every s-th element along the trailing axes."""
    strides = tuple(int(s) for s in strides)
    if any(s < 1 for s in strides):
        raise ShapeError(f"strides must be >= 1, got {strides}")
    return _apply("downsample_stride", [as_tensor(a)], strides=strides)


def broadcast_to(a, shape) -> Tensor:
    return _apply("broadcast_to", [as_tensor(a)], shape=tuple(int(s) for s in shape))


# ---------------------------------------------------------------------------
# normalization (single fused primitive; the adjoint is the standard
# mean/variance backward, verified against finite differences)
# ---------------------------------------------------------------------------


def _norm_stats(x, axes, eps):
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    return xc * inv, inv


def _fwd_affine_norm(x, gamma, beta, axes, eps):
    xhat, _ = _norm_stats(x, axes, eps)
    return xhat * gamma + beta


def _vjp_affine_norm(g, o, ins, at):
    x, gamma, beta = ins
    axes, eps = at["axes"], at["eps"]
    xhat, inv = _norm_stats(x, axes, eps)
    g_gamma = _unbroadcast(g * xhat, gamma.shape)
    g_beta = _unbroadcast(g, beta.shape)
    dxhat = g * gamma
    m1 = dxhat.mean(axis=axes, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
    gx = inv * (dxhat - m1 - xhat * m2)
    return [gx, g_gamma, g_beta]


register_op("affine_norm", _fwd_affine_norm, _vjp_affine_norm)


def _normalize(x: Tensor, axes: tuple[int, ...], gamma: Tensor, beta: Tensor,
               eps: float) -> Tensor:
    return _apply("affine_norm", [x, gamma, beta], axes=axes, eps=float(eps))


def instance_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the spatial axes per (sample, channel); gamma/beta per channel."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError("instance_norm expects (B, C, spatial...)")
    axes = tuple(range(2, x.ndim))
    c = as_tensor(gamma).shape[0]
    shape = (c,) + (1,) * (x.ndim - 2)
    return _normalize(x, axes, reshape(gamma, shape), reshape(beta, shape), eps)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing feature axis."""
    x = as_tensor(x)
    return _normalize(x, (x.ndim - 1,), as_tensor(gamma), as_tensor(beta), eps)


def normalize(kind: str, x, gamma, beta, eps: float = 1e-5) -> Tensor:
    if kind == "instance":
        return instance_norm(x, gamma, beta, eps)
    if kind == "layer":
        return layer_norm(x, gamma, beta, eps)
    raise UsageError(f"unknown normalization kind {kind!r}")


# ---------------------------------------------------------------------------
# gradient checking against central differences
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor],
               h: float = 1e-5, tol: float = 1e-4,
               max_probes: int | None = None,
               seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of a scalar map against central differences.

    ``f`` is re-evaluated at perturbed points, so it must be a pure function
    of ``inputs``.  The relative error is the max abs deviation normalized by
    the largest gradient magnitude, reported per input tensor.  When
    ``max_probes`` is set, a seeded subset of coordinates is probed instead
    of every element.
    """
    inputs = [as_tensor(t) for t in inputs]
    saved_rg = [t.requires_grad for t in inputs]
    saved_grad = [t.grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f(*inputs)
    if out.size != 1:
        raise UsageError("grad_check requires a scalar-valued map")
    tape.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]
    for t, rg, gr in zip(inputs, saved_rg, saved_grad):
        t.requires_grad = rg
        t.grad = gr

    rng = np.random.default_rng(seed)
    per_input: list[float] = []
    for ti, t in enumerate(inputs):
        base = t.data
        flat_idx = np.arange(base.size)
        if max_probes is not None and base.size > max_probes:
            flat_idx = rng.choice(base.size, size=max_probes, replace=False)
        fd = np.zeros(len(flat_idx), dtype=np.float64)
        for n, idx in enumerate(flat_idx):
            pert = base.copy().reshape(-1)
            pert[idx] += h
            t.data = pert.reshape(base.shape)
            hi = f(*inputs).item()
            pert[idx] -= 2 * h
            t.data = pert.reshape(base.shape)
            lo = f(*inputs).item()
            fd[n] = (hi - lo) / (2 * h)
        t.data = base
        an = analytic[ti].reshape(-1)[flat_idx]
        scale = max(np.abs(an).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-12)
        per_input.append(float(np.abs(an - fd).max(initial=0.0) / scale))
    worst = max(per_input) if per_input else 0.0
    return GradCheckReport(max_rel_err=worst, tol=tol, per_input=per_input)
