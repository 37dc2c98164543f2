"""Dense-tensor reverse-mode automatic differentiation on numpy arrays.

A Variable wraps a float64 ndarray plus the bookkeeping needed for
backpropagation: parent references and a closure that pushes the output
gradient into the parents. Calling ``backward`` on a scalar Variable builds
a gradient tape (topologically ordered node list) and traverses it in
reverse, accumulating gradients by summation so a Variable reused in
several places (e.g. a shared adjacency matrix) receives the sum of all
its partials.
"""

from __future__ import annotations

import warnings

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


_next_id = 0


def _fresh_id() -> int:
    global _next_id
    _next_id += 1
    return _next_id


class Variable:
    """A node in the computation graph.

    value is always a float64 ndarray (scalars have shape ()). grad is
    materialized lazily by backward() and has the same shape as value.
    """

    __slots__ = ("value", "grad", "requires_grad", "parents", "_backward", "tape_id")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=True):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self._backward = backward_fn
        self.tape_id = _fresh_id()

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            # copy: g may be a fresh array, but must never be aliased
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.value.shape:
                self.grad = np.broadcast_to(self.grad, self.value.shape).copy()
        else:
            self.grad += g

    def detach(self) -> "Variable":
        return Variable(self.value.copy(), requires_grad=False)

    def __repr__(self):
        return f"Variable(shape={self.value.shape}, requires_grad={self.requires_grad})"


class GradientTape:
    """Topologically ordered record of the nodes reachable from a root.

    Every node's parents precede it in ``nodes``; backward traverses the
    list in exact reverse order. A tape is built once per backward call
    and is single-owner.
    """

    def __init__(self, root: Variable):
        self.nodes: list[Variable] = []
        seen = set()
        # iterative post-order DFS; deterministic given the graph
        stack = [(root, iter(root.parents))]
        seen.add(id(root))
        while stack:
            node, it = stack[-1]
            advanced = False
            for parent in it:
                if id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append((parent, iter(parent.parents)))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                self.nodes.append(node)


def backward(loss: Variable) -> None:
    """Populate .grad on every Variable reachable from a scalar loss."""
    if loss.value.shape != ():
        raise ShapeMismatchError(
            f"backward requires a scalar loss, got shape {loss.value.shape}"
        )
    tape = GradientTape(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def as_variable(x) -> Variable:
    if isinstance(x, Variable):
        return x
    return Variable(x, requires_grad=False)


# ---------------------------------------------------------------------------
# broadcast support: identical shapes, a single leading batch axis, or scalar


def _broadcast_check(a: Variable, b: Variable):
    """Return (shape_out, reduce_a, reduce_b) where reduce_* maps an output
    gradient back onto that operand's shape."""
    sa, sb = a.value.shape, b.value.shape
    if sa == sb:
        return sa, None, None
    if sa == ():
        return sb, lambda g: g.sum(), None
    if sb == ():
        return sa, None, lambda g: g.sum()
    if len(sa) == len(sb) + 1 and sa[1:] == sb:
        return sa, None, lambda g: g.sum(axis=0)
    if len(sb) == len(sa) + 1 and sb[1:] == sa:
        return sb, lambda g: g.sum(axis=0), None
    raise ShapeMismatchError(f"incompatible shapes {sa} and {sb}")


def add(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _, red_a, red_b = _broadcast_check(a, b)
    out_val = a.value + b.value

    def backward_fn(g):
        a.accumulate_grad(red_a(g) if red_a else g)
        b.accumulate_grad(red_b(g) if red_b else g)

    return Variable(out_val, (a, b), backward_fn)


def sub(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _, red_a, red_b = _broadcast_check(a, b)
    out_val = a.value - b.value

    def backward_fn(g):
        a.accumulate_grad(red_a(g) if red_a else g)
        b.accumulate_grad(-(red_b(g) if red_b else g))

    return Variable(out_val, (a, b), backward_fn)


def multiply(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _, red_a, red_b = _broadcast_check(a, b)
    out_val = a.value * b.value

    def backward_fn(g):
        ga = g * b.value
        gb = g * a.value
        a.accumulate_grad(red_a(ga) if red_a else ga)
        b.accumulate_grad(red_b(gb) if red_b else gb)

    return Variable(out_val, (a, b), backward_fn)


def tanh(x) -> Variable:
    x = as_variable(x)
    out_val = np.tanh(x.value)

    def backward_fn(g):
        x.accumulate_grad(g * (1.0 - out_val * out_val))

    return Variable(out_val, (x,), backward_fn)


def sigmoid(x) -> Variable:
    x = as_variable(x)
    out_val = 1.0 / (1.0 + np.exp(-x.value))

    def backward_fn(g):
        x.accumulate_grad(g * out_val * (1.0 - out_val))

    return Variable(out_val, (x,), backward_fn)


def relu(x) -> Variable:
    x = as_variable(x)
    mask = x.value > 0
    out_val = np.where(mask, x.value, 0.0)

    def backward_fn(g):
        x.accumulate_grad(g * mask)

    return Variable(out_val, (x,), backward_fn)


def total(x) -> Variable:
    """Sum of all elements, as a scalar Variable."""
    x = as_variable(x)
    out_val = np.asarray(x.value.sum())

    def backward_fn(g):
        x.accumulate_grad(np.full_like(x.value, float(g)))

    return Variable(out_val, (x,), backward_fn)


def matmul(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeMismatchError("matmul expects 2-D operands")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatchError(
            f"inner dimensions disagree: {a.value.shape} x {b.value.shape}"
        )
    out_val = a.value @ b.value

    def backward_fn(g):
        a.accumulate_grad(g @ b.value.T)
        b.accumulate_grad(a.value.T @ g)

    return Variable(out_val, (a, b), backward_fn)


def _mix_channels(w, x):
    """w [O, I] applied at every (b, n, t) of x [B, I, N, W] -> [B, O, N, W].
    Batched matmul keeps this on BLAS."""
    b, i, n, t = x.shape
    return (w @ x.reshape(b, i, n * t)).reshape(b, -1, n, t)


def _mix_channels_grad_w(g, x):
    """d/dw of _mix_channels: [B,O,N,W], [B,I,N,W] -> [O, I]."""
    b, o, n, t = g.shape
    gr = g.reshape(b, o, n * t)
    xr = x.reshape(b, x.shape[1], n * t)
    return np.matmul(gr, xr.transpose(0, 2, 1)).sum(axis=0)


def conv_time_dilated_causal(x, kernel, dilation: int) -> Variable:
    """Dilated causal convolution along the trailing time axis.

    x: [B, C_in, N, W], kernel: [C_out, C_in, K]. The input is left-padded
    with (K-1)*dilation zeros so output length equals W and out[..., t]
    depends only on in[..., t'] with t' <= t.
    """
    x, kernel = as_variable(x), as_variable(kernel)
    if x.value.ndim != 4 or kernel.value.ndim != 3:
        raise ShapeMismatchError("expected x [B,C,N,W] and kernel [Co,Ci,K]")
    if dilation < 1 or kernel.value.shape[2] < 1:
        raise ValueError("kernel size and dilation must be >= 1")
    if x.value.shape[1] != kernel.value.shape[1]:
        raise ShapeMismatchError(
            f"channel mismatch: x has {x.value.shape[1]}, kernel wants {kernel.value.shape[1]}"
        )
    K = kernel.value.shape[2]
    W = x.value.shape[3]
    pad = (K - 1) * dilation
    if pad >= W:
        warnings.warn(
            f"receptive field (K-1)*d = {pad} >= window {W}: earliest taps read only padding",
            RuntimeWarning,
            stacklevel=2,
        )
    xp = np.pad(x.value, ((0, 0), (0, 0), (0, 0), (pad, 0)))
    B, Ci, N, _ = x.value.shape
    Co = kernel.value.shape[0]
    # gather the K dilated taps into one contiguous [B, K*Ci, N, W] buffer so
    # the whole convolution is a single channel-mixing matmul per call
    cols = np.empty((B, K * Ci, N, W))
    for k in range(K):
        cols[:, k * Ci : (k + 1) * Ci] = xp[..., k * dilation : k * dilation + W]
    w2 = kernel.value.transpose(0, 2, 1).reshape(Co, K * Ci)
    out_val = _mix_channels(w2, cols)

    def backward_fn(g):
        gw2 = _mix_channels_grad_w(g, cols)
        kernel.accumulate_grad(gw2.reshape(Co, K, Ci).transpose(0, 2, 1))
        gcols = _mix_channels(np.ascontiguousarray(w2.T), g)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[..., k * dilation : k * dilation + W] += gcols[:, k * Ci : (k + 1) * Ci]
        x.accumulate_grad(gxp[..., pad:] if pad else gxp)

    return Variable(out_val, (x, kernel), backward_fn)


def conv_1x1(x, weight, bias) -> Variable:
    """Pure channel mixing at each (b, n, t): out = W x + b."""
    x, weight, bias = as_variable(x), as_variable(weight), as_variable(bias)
    if x.value.ndim != 4 or weight.value.ndim != 2 or bias.value.ndim != 1:
        raise ShapeMismatchError("expected x [B,C,N,W], weight [Co,Ci], bias [Co]")
    if x.value.shape[1] != weight.value.shape[1] or weight.value.shape[0] != bias.value.shape[0]:
        raise ShapeMismatchError(
            f"channel mismatch: x {x.value.shape}, weight {weight.value.shape}, bias {bias.value.shape}"
        )
    out_val = _mix_channels(weight.value, x.value) + bias.value[None, :, None, None]

    def backward_fn(g):
        weight.accumulate_grad(_mix_channels_grad_w(g, x.value))
        bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        x.accumulate_grad(_mix_channels(weight.value.T, g))

    return Variable(out_val, (x, weight, bias), backward_fn)


def concat_channels(xs) -> Variable:
    """Channel-axis concatenation of [B,C_i,N,W] inputs, in argument order."""
    xs = [as_variable(x) for x in xs]
    if not xs:
        raise ValueError("concat_channels needs at least one input")
    base = xs[0].value.shape
    for x in xs[1:]:
        s = x.value.shape
        if len(s) != 4 or (s[0], s[2], s[3]) != (base[0], base[2], base[3]):
            raise ShapeMismatchError(
                f"non-channel dimensions disagree: {base} vs {s}"
            )
    widths = [x.value.shape[1] for x in xs]
    out_val = np.concatenate([x.value for x in xs], axis=1)

    def backward_fn(g):
        start = 0
        for x, c in zip(xs, widths):
            x.accumulate_grad(g[:, start : start + c])
            start += c

    return Variable(out_val, tuple(xs), backward_fn)


def softmax_rows(x) -> Variable:
    """Row-wise softmax of a 2-D matrix, stabilized by row-max subtraction."""
    x = as_variable(x)
    if x.value.ndim != 2:
        raise ShapeMismatchError("softmax_rows expects a 2-D input")
    if not np.all(np.isfinite(x.value)):
        raise FloatingPointError("softmax_rows requires finite input")
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_val = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g):
        # dL/dx = s * (g - sum_j g_j s_j) per row
        dot = (g * out_val).sum(axis=1, keepdims=True)
        x.accumulate_grad(out_val * (g - dot))

    return Variable(out_val, (x,), backward_fn)


def flatten(x) -> Variable:
    """[B, ...] -> [B, F], preserving row-major element order."""
    x = as_variable(x)
    shape = x.value.shape
    out_val = x.value.reshape(shape[0], -1)

    def backward_fn(g):
        x.accumulate_grad(g.reshape(shape))

    return Variable(out_val, (x,), backward_fn)


def dense(x, weight, bias) -> Variable:
    """Affine map [B,F] -> [B,O]: out = x W^T + b."""
    x, weight, bias = as_variable(x), as_variable(weight), as_variable(bias)
    if x.value.ndim != 2 or weight.value.ndim != 2 or bias.value.ndim != 1:
        raise ShapeMismatchError("expected x [B,F], weight [O,F], bias [O]")
    if x.value.shape[1] != weight.value.shape[1] or weight.value.shape[0] != bias.value.shape[0]:
        raise ShapeMismatchError(
            f"dense shape mismatch: x {x.value.shape}, weight {weight.value.shape}"
        )
    out_val = x.value @ weight.value.T + bias.value

    def backward_fn(g):
        x.accumulate_grad(g @ weight.value)
        weight.accumulate_grad(g.T @ x.value)
        bias.accumulate_grad(g.sum(axis=0))

    return Variable(out_val, (x, weight, bias), backward_fn)


def mse_loss(pred, target) -> Variable:
    """Mean of squared differences; target is a constant array."""
    pred = as_variable(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.value.shape != target.shape:
        raise ShapeMismatchError(
            f"pred shape {pred.value.shape} != target shape {target.shape}"
        )
    diff = pred.value - target
    n = diff.size
    out_val = np.asarray((diff * diff).sum() / n)

    def backward_fn(g):
        pred.accumulate_grad((2.0 / n) * diff * float(g))

    return Variable(out_val, (pred,), backward_fn)
