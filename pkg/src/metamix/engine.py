"""Dense float64 tensors with taped reverse-mode autodiff.

Every backward rule is written out of the same primitive set that builds the
forward pass, so a backward pass can itself be recorded and differentiated
(``create_graph=True``). That closure property is what makes one-step
meta-gradients exact instead of approximated: the gradient of a validation
loss can flow through a gradient computed earlier in the same graph.

All arrays are float64. Non-finite values are rejected at every node
construction, so a NaN or Inf surfaces at the primitive that produced it.
"""

from __future__ import annotations

import itertools
import warnings
from contextlib import nullcontext
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class EngineError(Exception):
    """Base class for tensor engine failures."""


class ShapeError(EngineError):
    """Operands have incompatible or unsupported shapes."""


class NonFiniteError(EngineError):
    """A NaN or Inf appeared in a tensor value."""


class UnreachableTargetWarning(RuntimeWarning):
    """A backward target was not reachable from the loss."""


_node_ids = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager that suppresses graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array plus its position in the computation graph.

    Leaves have no parents. Interior nodes keep a ``vjp`` closure that maps an
    upstream gradient to per-parent gradients, built lazily per parent.
    """

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), vjp=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values produced by '{op}'")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self.op = op
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, grad={self.requires_grad})"

    # operator sugar; scalars route to scale/add_scalar so graphs stay lean
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise TypeError("tensor/tensor division is not a primitive")

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, op: str, parents: tuple, vjp) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, op=op, parents=parents, vjp=vjp)
    return Tensor(data, False, op=op)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def vjp(u, needs):
        ga = _sum_to(u, a.shape) if needs[0] else None
        gb = _sum_to(u, b.shape) if needs[1] else None
        return ga, gb

    return _result(out, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def vjp(u, needs):
        ga = _sum_to(u, a.shape) if needs[0] else None
        gb = neg(_sum_to(u, b.shape)) if needs[1] else None
        return ga, gb

    return _result(out, "sub", (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def vjp(u, needs):
        ga = _sum_to(mul(u, b), a.shape) if needs[0] else None
        gb = _sum_to(mul(u, a), b.shape) if needs[1] else None
        return ga, gb

    return _result(out, "mul", (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, "neg", (a,), lambda u, needs: (neg(u),))


def scale(a, c: float) -> Tensor:
    """a * c for a python scalar c (a graph constant)."""
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, "scale", (a,), lambda u, needs: (scale(u, c),))


def add_scalar(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _result(a.data + float(c), "add_scalar", (a,), lambda u, needs: (u,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not compatible 2-d operands")
    out = a.data @ b.data

    def vjp(u, needs):
        ga = matmul(u, transpose(b)) if needs[0] else None
        gb = matmul(transpose(a), u) if needs[1] else None
        return ga, gb

    return _result(out, "matmul", (a, b), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d, got shape {a.shape}")
    return _result(a.data.T.copy(), "transpose", (a,), lambda u, needs: (transpose(u),))


def bias_add(a, b) -> Tensor:
    """Add a length-c vector to the trailing axis of a."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 1 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias_add: shapes {a.shape} and {b.shape}")
    out = a.data + b.data

    def vjp(u, needs):
        ga = u if needs[0] else None
        gb = _sum_to(u, b.shape) if needs[1] else None
        return ga, gb

    return _result(out, "bias_add", (a, b), vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    y = _result(out, "tanh", (a,), None)
    if y.requires_grad:
        y.vjp = lambda u, needs: (mul(u, add_scalar(neg(mul(y, y)), 1.0)),)
    return y


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_values(a.data)
    y = _result(out, "sigmoid", (a,), None)
    if y.requires_grad:
        y.vjp = lambda u, needs: (mul(u, mul(y, add_scalar(neg(y), 1.0))),)
    return y


def _sigmoid_values(z: np.ndarray) -> np.ndarray:
    # split by sign to avoid exp overflow on large |z|
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def vjp(u, needs):
        return (mul(u, sigmoid(a)),)

    return _result(out, "softplus", (a,), vjp)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)

    def vjp(u, needs):
        return (mul(u, Tensor(mask)),)

    return _result(np.maximum(a.data, 0.0), "relu", (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = _result(np.exp(a.data), "exp", (a,), None)
    if y.requires_grad:
        y.vjp = lambda u, needs: (mul(u, y),)
    return y


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.sin(a.data), "sin", (a,), lambda u, needs: (mul(u, cos(a)),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.cos(a.data), "cos", (a,), lambda u, needs: (neg(mul(u, sin(a))),))


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"log_softmax: expected [n, classes], got shape {a.shape}")
    m = a.data.max(axis=1, keepdims=True)
    s = a.data - m
    out = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
    y = _result(out, "log_softmax", (a,), None)
    if y.requires_grad:
        y.vjp = lambda u, needs: (sub(u, mul(exp(y), row_sum(u))),)
    return y


def row_sum(a) -> Tensor:
    """[n, c] -> [n, 1], summing each row."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"row_sum: expected 2-d, got shape {a.shape}")
    out = a.data.sum(axis=1, keepdims=True)
    return _result(out, "row_sum", (a,), lambda u, needs: (broadcast_to(u, a.shape),))


def mean_reduce(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    if n == 0:
        raise ShapeError("mean_reduce: empty tensor")
    out = a.data.mean()
    return _result(out, "mean_reduce", (a,),
                   lambda u, needs: (scale(broadcast_to(u, a.shape), 1.0 / n),))


def sum_reduce(a) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum()
    return _result(out, "sum_reduce", (a,), lambda u, needs: (broadcast_to(u, a.shape),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}")
    return _result(out, "broadcast_to", (a,), lambda u, needs: (_sum_to(u, a.shape),))


def _sum_to(u: Tensor, shape: tuple) -> Tensor:
    """Reduce u back to `shape`, inverting a numpy-style broadcast."""
    if u.shape == shape:
        return u
    return sum_to_shape(u, shape)


def sum_to_shape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    data = a.data
    extra = data.ndim - len(shape)
    if extra < 0:
        raise ShapeError(f"sum_to_shape: cannot reduce {a.shape} to {shape}")
    if extra:
        data = data.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (have, want) in enumerate(zip(data.shape, shape))
                 if want == 1 and have != 1)
    if axes:
        data = data.sum(axis=axes, keepdims=True)
    if data.shape != shape:
        raise ShapeError(f"sum_to_shape: {a.shape} does not reduce to {shape}")
    src_shape = a.shape
    return _result(data, "sum_to_shape", (a,),
                   lambda u, needs: (broadcast_to(u, src_shape),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    src_shape = a.shape
    return _result(out, "reshape", (a,), lambda u, needs: (reshape(u, src_shape),))


def gather_rows(a, index) -> Tensor:
    """Select rows a[index] along axis 0; index is a constant int array."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: index must be 1-d, got shape {idx.shape}")
    if a.ndim < 1:
        raise ShapeError("gather_rows: cannot index a scalar")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
    n_rows = a.shape[0]
    out = a.data[idx]
    return _result(out, "gather_rows", (a,),
                   lambda u, needs: (scatter_add_rows(u, idx, n_rows),))


def scatter_add_rows(a, index, n_rows: int) -> Tensor:
    """Inverse of gather_rows: out[j] = sum of a[i] over i with index[i] == j."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    if idx.shape != (a.shape[0],):
        raise ShapeError(f"scatter_add_rows: index shape {idx.shape} vs {a.shape[0]} rows")
    out = np.zeros((n_rows,) + a.shape[1:], dtype=np.float64)
    np.add.at(out, idx, a.data)
    return _result(out, "scatter_add_rows", (a,),
                   lambda u, needs: (gather_rows(u, idx),))


# ---------------------------------------------------------------------------
# convolution (stride 1, zero-padded "same", odd kernels)


def _check_kernel(w) -> int:
    if w.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be [kh, kw, cin, cout], got shape {w.shape}")
    kh, kw = w.shape[0], w.shape[1]
    if kh != kw or kh % 2 == 0 or kh > 5:
        raise ShapeError(f"conv2d: kernel must be square odd <= 5, got {kh}x{kw}")
    return kh


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """[n,h,w,c] -> [n*h*w, k*k*c] patches under same padding, (kh,kw,c) order."""
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    # win[n,i,j,c,p,q] = xp[n, i+p, j+q, c]; reorder windows to (p, q, c)
    n, h, w = x.shape[0], x.shape[1], x.shape[2]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, k * k * x.shape[3])


def _conv_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    k, _, cin, cout = w.shape
    n, h, wd, _ = x.shape
    cols = _im2col(x, k)
    return (cols @ w.reshape(k * k * cin, cout)).reshape(n, h, wd, cout)


def conv2d(x, w) -> Tensor:
    """Cross-correlation, stride 1, same zero padding. x [n,h,w,ci], w [k,k,ci,co]."""
    x, w = as_tensor(x), as_tensor(w)
    k = _check_kernel(w)
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be [n, h, w, c], got shape {x.shape}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: input channels {x.shape[3]} != kernel cin {w.shape[2]}")
    out = _conv_forward(x.data, w.data)

    def vjp(u, needs):
        gx = conv2d_input_grad(u, w) if needs[0] else None
        gw = conv2d_weight_grad(x, u, k) if needs[1] else None
        return gx, gw

    return _result(out, "conv2d", (x, w), vjp)


def conv2d_input_grad(g, w) -> Tensor:
    """Input gradient of conv2d: correlate the output gradient g [n,h,w,cout]
    with the spatially flipped, channel-swapped kernel."""
    g, w = as_tensor(g), as_tensor(w)
    k = _check_kernel(w)
    if g.ndim != 4 or g.shape[3] != w.shape[3]:
        raise ShapeError(f"conv2d_input_grad: g shape {g.shape} vs kernel {w.shape}")
    wt = w.data[::-1, ::-1].transpose(0, 1, 3, 2).copy()  # [k,k,cout,cin]
    out = _conv_forward(g.data, wt)

    def vjp(u, needs):
        gg = conv2d(u, w) if needs[0] else None
        gw = conv2d_weight_grad(u, g, k) if needs[1] else None
        return gg, gw

    return _result(out, "conv2d_input_grad", (g, w), vjp)


def conv2d_weight_grad(x, g, kernel: int) -> Tensor:
    """Kernel gradient of conv2d from input x [n,h,w,cin] and output gradient
    g [n,h,w,cout]. The kernel size cannot be recovered from x and g, so it is
    passed explicitly."""
    x, g = as_tensor(x), as_tensor(g)
    if x.ndim != 4 or g.ndim != 4 or x.shape[:3] != g.shape[:3]:
        raise ShapeError(f"conv2d_weight_grad: shapes {x.shape} and {g.shape}")
    k = int(kernel)
    if k % 2 == 0 or k > 5 or k < 1:
        raise ShapeError(f"conv2d_weight_grad: kernel must be odd <= 5, got {k}")
    n, h, wd, cin = x.shape
    cout = g.shape[3]
    cols = _im2col(x.data, k)  # [n*h*w, k*k*cin]
    out = (cols.T @ g.data.reshape(n * h * wd, cout)).reshape(k, k, cin, cout)

    def vjp(u, needs):
        gx = conv2d_input_grad(g, u) if needs[0] else None
        gg = conv2d(x, u) if needs[1] else None
        return gx, gg

    return _result(out, "conv2d_weight_grad", (x, g), vjp)


# ---------------------------------------------------------------------------
# graph traversal


def backward(loss: Tensor, targets: Sequence[Tensor], create_graph: bool = False):
    """Reverse-mode gradients of a scalar loss w.r.t. each target tensor.

    Returns a list aligned with ``targets``. A target that the loss does not
    depend on gets a zero gradient plus an UnreachableTargetWarning rather
    than an error. With ``create_graph=True`` the returned gradients are graph
    nodes themselves and can be differentiated again.
    """
    if loss.shape != ():
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    targets = list(targets)

    order: list[Tensor] = []
    if loss.requires_grad:
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen or not node.requires_grad:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))

    grads: dict[int, Tensor] = {loss.node_id: Tensor(np.ones(()))}
    ctx = nullcontext() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            g = grads.get(node.node_id)
            if g is None or node.vjp is None:
                continue
            needs = tuple(p.requires_grad for p in node.parents)
            parent_grads = node.vjp(g, needs)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                held = grads.get(p.node_id)
                grads[p.node_id] = pg if held is None else add(held, pg)

    results = []
    missing = 0
    for t in targets:
        g = grads.get(t.node_id)
        if g is None:
            missing += 1
            g = Tensor(np.zeros(t.shape))
        results.append(g)
    if missing:
        warnings.warn(f"backward: {missing} target(s) unreachable from the loss; "
                      "returning zero gradients", UnreachableTargetWarning)
    return results


# ---------------------------------------------------------------------------
# spec-named dispatch


PRIMITIVES: dict[str, Callable] = {
    "add": add, "sub": sub, "mul": mul, "neg": neg, "scale": scale,
    "add_scalar": add_scalar, "matmul": matmul, "transpose": transpose,
    "bias_add": bias_add, "tanh": tanh, "sigmoid": sigmoid, "softplus": softplus,
    "relu": relu, "exp": exp, "sin": sin, "cos": cos,
    "log_softmax": log_softmax, "row_sum": row_sum,
    "mean_reduce": mean_reduce, "sum_reduce": sum_reduce,
    "broadcast_to": broadcast_to, "sum_to_shape": sum_to_shape,
    "reshape": reshape, "gather_rows": gather_rows,
    "scatter_add_rows": scatter_add_rows,
    "conv2d": conv2d, "conv2d_input_grad": conv2d_input_grad,
    "conv2d_weight_grad": conv2d_weight_grad,
}


def apply_primitive(kind: str, *inputs, **kwargs) -> Tensor:
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise EngineError(f"unknown primitive '{kind}'; known: {sorted(PRIMITIVES)}")
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# numeric oracles


def finite_diff_hvp(loss_builder, params: Sequence[Tensor], direction,
                    epsilon: float, wrt: Sequence[Tensor] | None = None):
    """Central-difference Hessian-vector product.

    ``loss_builder`` maps a list of parameter leaves to a scalar Tensor and is
    called at params +/- epsilon*direction. Gradients are taken w.r.t. the
    shifted leaves, or w.r.t. ``wrt`` (for mixed second derivatives against
    tensors the builder closes over). Returns plain (graph-free) Tensors.
    """
    if epsilon <= 0:
        raise ValueError(f"finite_diff_hvp: epsilon must be positive, got {epsilon}")
    params = list(params)
    direction = [np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64)
                 for v in direction]
    if len(direction) != len(params):
        raise ValueError("finite_diff_hvp: direction count does not match params")
    for p, v in zip(params, direction):
        if p.shape != v.shape:
            raise ShapeError(f"finite_diff_hvp: direction shape {v.shape} vs param {p.shape}")

    def grads_at(sign: float):
        shifted = [Tensor(p.data + sign * epsilon * v, requires_grad=True)
                   for p, v in zip(params, direction)]
        loss = loss_builder(shifted)
        targets = shifted if wrt is None else list(wrt)
        return [g.data for g in backward(loss, targets)]

    hi = grads_at(+1.0)
    lo = grads_at(-1.0)
    return [Tensor((a - b) / (2.0 * epsilon)) for a, b in zip(hi, lo)]


def exact_hvp(loss_builder, params: Sequence[Tensor], direction):
    """Hessian-vector product by double backward: d/dp <grad L, v>."""
    params = list(params)
    direction = [as_tensor(v) for v in direction]
    loss = loss_builder(params)
    grads = backward(loss, params, create_graph=True)
    dot = None
    for g, v in zip(grads, direction):
        term = sum_reduce(mul(g, v.detach()))
        dot = term if dot is None else add(dot, term)
    return backward(dot, params)


@dataclass
class CheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    max_rel_error: float
    tolerance: float
    passed: bool


def grad_check(function, point: Tensor, epsilon: float = 1e-5,
               tolerance: float = 1e-6) -> CheckReport:
    """Compare the engine gradient of a scalar function against central differences.

    Relative error uses a unit floor, |a - n| / max(1, |a|, |n|) per
    coordinate, so coordinates whose true gradient is ~0 are compared
    absolutely. Failures are reported in the CheckReport, not raised.
    """
    leaf = Tensor(np.array(point.data if isinstance(point, Tensor) else point,
                           dtype=np.float64, copy=True), requires_grad=True)
    loss = function(leaf)
    if loss.shape != ():
        raise ShapeError("grad_check: function must return a scalar")
    (analytic,) = backward(loss, [leaf])
    analytic = analytic.data.copy()

    # note: evaluations run with recording enabled because the probed function
    # may need internal gradients of its own (bilevel losses do)
    flat = leaf.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = float(function(Tensor(leaf.data)).data)
        flat[i] = orig - epsilon
        lo = float(function(Tensor(leaf.data)).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * epsilon)
    numeric = numeric.reshape(leaf.shape)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    max_rel = float(rel.max()) if rel.size else 0.0
    return CheckReport(analytic=analytic, numeric=numeric, rel_errors=rel,
                       max_rel_error=max_rel, tolerance=tolerance,
                       passed=bool(max_rel <= tolerance))


def max_relative_error(a, b, floor: float = 1.0) -> float:
    """max |a-b| / max(floor, |a|_inf, |b|_inf), a scalar summary for tests."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(floor, float(np.max(np.abs(a), initial=0.0)),
                float(np.max(np.abs(b), initial=0.0)))
    return float(np.max(np.abs(a - b), initial=0.0) / denom)
