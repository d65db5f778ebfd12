"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A :class:`Tensor` is an immutable wrapper around a numpy array. Tensors that
descend from a leaf registered on a :class:`Tape` carry a node id; every
primitive below appends a node ``(kind, input ids, saved values)`` to that
tape. :meth:`Tape.backward` sweeps the nodes in reverse order and looks the
backward rule for each ``kind`` up in :data:`VJP_RULES`.

Tensors without a tape are plain values and cost nothing beyond the numpy
forward computation, which is how inference runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "Parameter",
    "VJP_RULES",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_bias",
    "relu",
    "sigmoid",
    "transpose",
    "reshape",
    "concat",
    "concat_features",
    "softmax_rows",
    "layer_norm",
    "conv1d",
    "mean",
    "global_avg_pool",
    "reduce_sum",
    "take",
    "cross_entropy_logits",
    "backward",
    "grad_check",
    "grad_check_params",
]


class Tensor:
    """Immutable n-dimensional float64 array, optionally attached to a tape."""

    __slots__ = ("data", "node", "tape")

    def __init__(self, data, *, _node: int | None = None, _tape: "Tape | None" = None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.node = _node
        self.tape = _tape

    @classmethod
    def _wrap(cls, arr: np.ndarray, node=None, tape=None) -> "Tensor":
        # Takes ownership of ``arr`` without copying.
        t = cls.__new__(cls)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        t.data = arr
        t.node = node
        t.tape = tape
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Parameter:
    """A named learnable tensor. Names are checkpoint identities."""

    name: str
    value: Tensor
    requires_grad: bool = True

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Append-only record of primitive applications for one forward pass.

    Not thread-safe; build one tape per forward pass and per thread.
    """

    def __init__(self):
        # (kind, input node ids or None, saved values)
        self.nodes: list[tuple[str, tuple, tuple]] = []
        self.shapes: list[tuple[int, ...]] = []
        self.names: dict[str, int] = {}
        self._grads: list | None = None

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> Tensor:
        arr = value.data if isinstance(value, Tensor) else np.array(value, dtype=np.float64)
        node = len(self.nodes)
        self.nodes.append(("leaf", (), ()))
        self.shapes.append(arr.shape)
        if name is not None:
            if name in self.names:
                raise ContractError(f"duplicate leaf name {name!r}")
            self.names[name] = node
        return Tensor._wrap(arr, node, self)

    def watch(self, params: Mapping[str, Parameter] | Iterable[Parameter]) -> dict[str, Tensor]:
        """Register parameters as leaves; returns name -> tensor for the forward pass."""
        items = params.values() if isinstance(params, Mapping) else params
        out = {}
        for p in items:
            out[p.name] = self.leaf(p.value, p.name) if p.requires_grad else p.value
        return out

    def record(self, kind: str, inputs: tuple[Tensor, ...], out: np.ndarray, saved: tuple = ()) -> Tensor:
        ids = tuple(x.node if x.tape is self else None for x in inputs)
        node = len(self.nodes)
        self.nodes.append((kind, ids, saved))
        self.shapes.append(out.shape)
        return Tensor._wrap(out, node, self)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Reverse sweep from a scalar ``loss``.

        Returns the gradient for every named leaf (zeros where the loss does
        not depend on it).
        """
        if loss.tape is not self:
            raise ContractError("loss was not computed on this tape")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.node] = np.ones(self.shapes[loss.node])
        for i in range(loss.node, -1, -1):
            g = grads[i]
            if g is None:
                continue
            kind, ids, saved = self.nodes[i]
            if kind == "leaf":
                continue
            needs = tuple(j is not None for j in ids)
            in_grads = VJP_RULES[kind](g, needs, *saved)
            for j, gj in zip(ids, in_grads):
                if j is None or gj is None:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
        self._grads = grads
        return {name: self._grad_or_zero(i) for name, i in self.names.items()}

    def grad(self, t: Tensor) -> np.ndarray:
        if self._grads is None:
            raise ContractError("call backward() first")
        if t.tape is not self:
            return np.zeros(t.shape)
        return self._grad_or_zero(t.node)

    def _grad_or_zero(self, i):
        g = self._grads[i]
        return np.zeros(self.shapes[i]) if g is None else g


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of ``loss`` with respect to every named leaf of its tape."""
    if loss.tape is None:
        raise ContractError("loss is not attached to a tape")
    return loss.tape.backward(loss)


VJP_RULES: dict[str, Callable[..., tuple]] = {}


def _rule(kind):
    def register(fn):
        VJP_RULES[kind] = fn
        return fn

    return register


def _tape_of(*xs: Tensor) -> Tape | None:
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise ContractError("operands belong to different tapes")
            tape = x.tape
    return tape


def _same_shape(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    out = a.data + b.data
    tape = _tape_of(a, b)
    return Tensor._wrap(out) if tape is None else tape.record("add", (a, b), out)


@_rule("add")
def _add_vjp(g, needs):
    return g, g


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    out = a.data - b.data
    tape = _tape_of(a, b)
    return Tensor._wrap(out) if tape is None else tape.record("sub", (a, b), out)


@_rule("sub")
def _sub_vjp(g, needs):
    return g, -g


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    out = a.data * b.data
    tape = _tape_of(a, b)
    return Tensor._wrap(out) if tape is None else tape.record("mul", (a, b), out, (a.data, b.data))


@_rule("mul")
def _mul_vjp(g, needs, a, b):
    return g * b, g * a


def scale(x: Tensor, c: float) -> Tensor:
    out = x.data * c
    tape = _tape_of(x)
    return Tensor._wrap(out) if tape is None else tape.record("scale", (x,), out, (c,))


@_rule("scale")
def _scale_vjp(g, needs, c):
    return (g * c,)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x[..., n] + b[n]``, the bias broadcast used by affine maps."""
    if b.data.ndim != 1 or x.shape[-1:] != b.shape:
        raise ShapeError(f"add_bias: shapes {x.shape} and {b.shape} do not align")
    out = x.data + b.data
    tape = _tape_of(x, b)
    return Tensor._wrap(out) if tape is None else tape.record("add_bias", (x, b), out, (x.data.ndim,))


@_rule("add_bias")
def _add_bias_vjp(g, needs, ndim):
    return g, g.reshape(-1, g.shape[-1]).sum(axis=0) if ndim > 1 else g


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    tape = _tape_of(x)
    return Tensor._wrap(out) if tape is None else tape.record("relu", (x,), out, (x.data > 0,))


@_rule("relu")
def _relu_vjp(g, needs, mask):
    return (g * mask,)


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    out[~pos] = e / (1.0 + e)
    tape = _tape_of(x)
    return Tensor._wrap(out) if tape is None else tape.record("sigmoid", (x,), out, (out,))


@_rule("sigmoid")
def _sigmoid_vjp(g, needs, y):
    return (g * y * (1.0 - y),)


# ---------------------------------------------------------------------------
# structural


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D tensor, got {x.shape}")
    out = x.data.T
    tape = _tape_of(x)
    return Tensor._wrap(out) if tape is None else tape.record("transpose", (x,), out)


@_rule("transpose")
def _transpose_vjp(g, needs):
    return (g.T,)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)
    tape = _tape_of(x)
    return Tensor._wrap(out) if tape is None else tape.record("reshape", (x,), out, (x.shape,))


@_rule("reshape")
def _reshape_vjp(g, needs, shape):
    return (g.reshape(shape),)


def concat(xs: list[Tensor], axis: int = 0) -> Tensor:
    ref = xs[0].shape
    ax = axis % len(ref)
    for x in xs[1:]:
        if len(x.shape) != len(ref) or any(s != r for k, (s, r) in enumerate(zip(x.shape, ref)) if k != ax):
            raise ShapeError(f"concat: shapes {ref} and {x.shape} do not align on axis {axis}")
    out = np.concatenate([x.data for x in xs], axis=ax)
    tape = _tape_of(*xs)
    if tape is None:
        return Tensor._wrap(out)
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]
    return tape.record("concat", tuple(xs), out, (ax, bounds))


@_rule("concat")
def _concat_vjp(g, needs, axis, bounds):
    return tuple(np.split(g, bounds, axis=axis))


def concat_features(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two feature vectors ``[p] + [q] -> [p+q]``."""
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"concat_features: expected vectors, got {a.shape} and {b.shape}")
    return concat([a, b], axis=0)


def take(x: Tensor, index: int) -> Tensor:
    """Scalar element ``x[index]`` of a vector."""
    out = np.array(x.data[index])
    tape = _tape_of(x)
    return Tensor._wrap(out) if tape is None else tape.record("take", (x,), out, (x.shape, index))


@_rule("take")
def _take_vjp(g, needs, shape, index):
    gx = np.zeros(shape)
    gx[index] = g
    return (gx,)


# ---------------------------------------------------------------------------
# reductions


def mean(x: Tensor, axis: int) -> Tensor:
    out = x.data.mean(axis=axis)
    tape = _tape_of(x)
    return Tensor._wrap(out) if tape is None else tape.record("mean", (x,), out, (x.shape, axis))


@_rule("mean")
def _mean_vjp(g, needs, shape, axis):
    return (np.broadcast_to(np.expand_dims(g, axis), shape) / shape[axis],)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel mean over time: ``[c x m] -> [c]``."""
    if x.data.ndim != 2:
        raise ShapeError(f"global_avg_pool: expected [channels x length], got {x.shape}")
    return mean(x, axis=1)


def reduce_sum(x: Tensor) -> Tensor:
    out = np.array(x.data.sum())
    tape = _tape_of(x)
    return Tensor._wrap(out) if tape is None else tape.record("sum", (x,), out, (x.shape,))


@_rule("sum")
def _sum_vjp(g, needs, shape):
    return (np.full(shape, float(g)),)


# ---------------------------------------------------------------------------
# linear algebra and layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``[m x p] @ [p x n]``; a 1-D ``a`` is treated as one row."""
    if a.data.ndim not in (1, 2) or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out = a.data @ b.data
    tape = _tape_of(a, b)
    return Tensor._wrap(out) if tape is None else tape.record("matmul", (a, b), out, (a.data, b.data))


@_rule("matmul")
def _matmul_vjp(g, needs, a, b):
    ga = g @ b.T if needs[0] else None
    gb = None
    if needs[1]:
        gb = np.outer(a, g) if a.ndim == 1 else a.T @ g
    return ga, gb


def softmax_rows(x: Tensor) -> Tensor:
    """Numerically stable softmax along the last axis."""
    if x.shape[-1] < 1:
        raise ShapeError("softmax_rows: empty rows")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    tape = _tape_of(x)
    return Tensor._wrap(out) if tape is None else tape.record("softmax", (x,), out, (out,))


@_rule("softmax")
def _softmax_vjp(g, needs, y):
    return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalize ``x`` over ``axis`` with population variance, then scale and shift.

    ``gamma`` and ``beta`` have the length of the normalized axis. ``axis=0``
    on a ``[channels x length]`` map normalizes across channels at every time
    step.
    """
    n = x.shape[axis]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm: x {x.shape} vs gamma {gamma.shape}, beta {beta.shape} on axis {axis}")
    ax = axis % x.data.ndim
    bshape = [1] * x.data.ndim
    bshape[ax] = n
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gb = gamma.data.reshape(bshape)
    out = xhat * gb + beta.data.reshape(bshape)
    tape = _tape_of(x, gamma, beta)
    if tape is None:
        return Tensor._wrap(out)
    return tape.record("layer_norm", (x, gamma, beta), out, (xhat, inv, gb, ax))


@_rule("layer_norm")
def _layer_norm_vjp(g, needs, xhat, inv, gb, ax):
    other = tuple(k for k in range(g.ndim) if k != ax)
    dbeta = g.sum(axis=other) if other else g
    dgamma = (g * xhat).sum(axis=other) if other else g * xhat
    dx = None
    if needs[0]:
        dxhat = g * gb
        dx = inv * (
            dxhat
            - dxhat.mean(axis=ax, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=ax, keepdims=True)
        )
    return dx, dgamma, dbeta


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each channel of ``x[c x m]`` over time; per-channel ``gamma``, ``beta`` of length c."""
    if x.data.ndim != 2:
        raise ShapeError(f"instance_norm expects a [c x m] map, got {x.shape}")
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"instance_norm: x {x.shape} vs gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gb = gamma.data[:, None]
    out = xhat * gb + beta.data[:, None]
    tape = _tape_of(x, gamma, beta)
    if tape is None:
        return Tensor._wrap(out)
    return tape.record("instance_norm", (x, gamma, beta), out, (xhat, inv, gb))


@_rule("instance_norm")
def _instance_norm_vjp(g, needs, xhat, inv, gb):
    dx = None
    if needs[0]:
        dxhat = g * gb
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dx, (g * xhat).sum(axis=1), g.sum(axis=1)


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Cross-correlation of ``x[c_in x m]`` with ``kernels[c_out x c_in x w]``.

    "Same" zero padding: ``(w - 1) // 2`` on the left, the remainder on the
    right, so the output has length ``m``.
    """
    if x.data.ndim != 2 or kernels.data.ndim != 3:
        raise ShapeError(f"conv1d: expected x [c_in x m] and kernels [c_out x c_in x w], got {x.shape} and {kernels.shape}")
    c_in, m = x.shape
    c_out, kc, w = kernels.shape
    if kc != c_in:
        raise ShapeError(f"conv1d: input has {c_in} channels but kernels {kernels.shape} expect {kc}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv1d: bias {bias.shape} does not match {c_out} output channels")
    left = (w - 1) // 2
    xp = np.pad(x.data, ((0, 0), (left, w - 1 - left)))
    # cols[ci * w + j, t] = xp[ci, t + j]
    cols = sliding_window_view(xp, w, axis=1).transpose(0, 2, 1).reshape(c_in * w, m)
    kflat = kernels.data.reshape(c_out, c_in * w)
    out = kflat @ cols + bias.data[:, None]
    tape = _tape_of(x, kernels, bias)
    if tape is None:
        return Tensor._wrap(out)
    return tape.record("conv1d", (x, kernels, bias), out, (cols, kflat, kernels.shape, left, m))


@_rule("conv1d")
def _conv1d_vjp(g, needs, cols, kflat, kshape, left, m):
    c_out, c_in, w = kshape
    dk = (g @ cols.T).reshape(kshape) if needs[1] else None
    db = g.sum(axis=1)
    dx = None
    if needs[0]:
        dcols = (kflat.T @ g).reshape(c_in, w, m)
        dxp = np.zeros((c_in, m + w - 1))
        for j in range(w):
            dxp[:, j : j + m] += dcols[:, j, :]
        dx = dxp[:, left : left + m]
    return dx, dk, db


def cross_entropy_logits(logits: Tensor, label: int) -> Tensor:
    """``-log softmax(logits)[label]`` via log-sum-exp."""
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy_logits: expected a logit vector, got {logits.shape}")
    n = logits.shape[0]
    if not 0 <= label < n:
        raise IndexError(f"label {label} out of range for {n} classes")
    z = logits.data
    zmax = z.max()
    e = np.exp(z - zmax)
    s = e.sum()
    out = np.array(zmax + np.log(s) - z[label])
    tape = _tape_of(logits)
    if tape is None:
        return Tensor._wrap(out)
    return tape.record("cross_entropy", (logits,), out, (e / s, label))


@_rule("cross_entropy")
def _cross_entropy_vjp(g, needs, probs, label):
    d = probs.copy()
    d[label] -= 1.0
    return (float(g) * d,)


# ---------------------------------------------------------------------------
# finite-difference checks


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and central differences."""
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    tape = Tape()
    xt = tape.leaf(x0)
    tape.backward(f(xt))
    analytic = tape.grad(xt)
    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x0)).item()
        flat[i] = orig - h
        fm = f(Tensor(x0)).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
    return float(_rel_err(analytic, numeric).max()) if x0.size else 0.0


def grad_check_params(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Parameter],
    h: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter max relative error of tape gradients against central differences."""
    tape = Tape()
    analytic = tape.backward(loss_fn(tape.watch(params)))
    values = {name: p.value for name, p in params.items()}
    errors = {}
    for name, p in params.items():
        if not p.requires_grad:
            continue
        base = np.array(p.value.data)
        flat = base.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            values[name] = Tensor(base)
            fp = loss_fn(values).item()
            flat[i] = orig - h
            values[name] = Tensor(base)
            fm = loss_fn(values).item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * h)
        values[name] = p.value
        errors[name] = float(_rel_err(analytic[name].reshape(-1), numeric).max())
    return errors
