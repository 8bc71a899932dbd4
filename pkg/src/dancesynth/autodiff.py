"""Reverse-mode automatic differentiation over float64 numpy arrays.

A `Node` wraps an immutable ndarray value plus the provenance needed for
backpropagation.  Graphs are built by calling the op functions below and are
single-use: construct, call `backward` on a scalar loss once, read `.grad`
off the trainable leaves.  Values are always float64; ops validate shapes
eagerly and raise `ShapeError` naming both offending shapes.

The op set is exactly what the motion transformer needs: matmul, broadcast
add, elementwise mul, scalar scale, relu, softmax / log-softmax over the
last axis, layer norm over the last axis, causal 1-D convolution over time,
embedding lookup, concatenation, row slicing, reshape, cross-entropy against
integer targets, and mean/sum reductions.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    pass


def _as_f64(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr


class Node:
    """One value in the computation graph.

    `parents` and `_backward` record how to push an upstream gradient into
    the parents; leaves (constants and parameters) have neither.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "trainable", "name")

    def __init__(self, value, parents=(), backward=None, trainable=False, name=""):
        self.value = _as_f64(value)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Node, ...] = tuple(parents)
        self._backward = backward
        self.trainable = trainable
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        kind = "param" if self.trainable else ("leaf" if not self.parents else "op")
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} {kind} shape={self.shape}>"


def constant(x, name: str = "") -> Node:
    return Node(x, name=name)


def parameter(x, name: str = "") -> Node:
    return Node(x, trainable=True, name=name)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(node: Node, grad: np.ndarray) -> None:
    # First contribution is stored by reference (it may be a view); later
    # contributions allocate a fresh sum instead of mutating, since the
    # stored array can be shared with another node's gradient.
    if not node.parents and not node.trainable:
        return  # constant leaf: gradient intentionally absent
    if node.grad is None:
        node.grad = grad
    else:
        node.grad = node.grad + grad


# ---------------------------------------------------------------------------
# elementwise and linear ops
# ---------------------------------------------------------------------------


def add(a, b) -> Node:
    """Elementwise sum with numpy broadcasting (used for bias adds)."""
    a, b = _lift(a), _lift(b)
    try:
        value = a.value + b.value
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(grad):
        _accumulate(a, _unbroadcast(grad, a.shape))
        _accumulate(b, _unbroadcast(grad, b.shape))

    return Node(value, (a, b), backward)


def mul(a, b) -> Node:
    """Elementwise product with broadcasting."""
    a, b = _lift(a), _lift(b)
    try:
        value = a.value * b.value
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(grad):
        _accumulate(a, _unbroadcast(grad * b.value, a.shape))
        _accumulate(b, _unbroadcast(grad * a.value, b.shape))

    return Node(value, (a, b), backward)


def scale(a, s: float) -> Node:
    a = _lift(a)
    s = float(s)

    def backward(grad):
        _accumulate(a, grad * s)

    return Node(a.value * s, (a,), backward)


def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    value = a.value @ b.value

    def backward(grad):
        _accumulate(a, grad @ b.value.T)
        _accumulate(b, a.value.T @ grad)

    return Node(value, (a, b), backward)


def transpose(a) -> Node:
    a = _lift(a)
    if a.value.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")

    def backward(grad):
        _accumulate(a, grad.T)

    return Node(a.value.T, (a,), backward)


def relu(a) -> Node:
    a = _lift(a)
    mask = a.value > 0.0

    def backward(grad):
        _accumulate(a, grad * mask)

    return Node(a.value * mask, (a,), backward)


def dropout(a, p: float, rng: np.random.Generator) -> Node:
    """Inverted dropout; identity when p == 0."""
    a = _lift(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(grad):
        _accumulate(a, grad * keep)

    return Node(a.value * keep, (a,), backward)


# ---------------------------------------------------------------------------
# normalizations
# ---------------------------------------------------------------------------


def softmax(a) -> Node:
    """Softmax over the last axis, numerically stabilized."""
    a = _lift(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=-1, keepdims=True)

    def backward(grad):
        inner = (grad * value).sum(axis=-1, keepdims=True)
        _accumulate(a, value * (grad - inner))

    return Node(value, (a,), backward)


def log_softmax(a) -> Node:
    """Log-softmax over the last axis; logsumexp of each row is 0."""
    a = _lift(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    value = shifted - lse
    probs = np.exp(value)

    def backward(grad):
        _accumulate(a, grad - probs * grad.sum(axis=-1, keepdims=True))

    return Node(value, (a,), backward)


LAYER_NORM_EPS = 1e-5


def layer_norm(a, gain, bias, eps: float = LAYER_NORM_EPS) -> Node:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Variance is floored by `eps`, so a constant vector maps to `bias`
    (all zeros for the default affine) instead of NaN.
    """
    a, gain, bias = _lift(a), _lift(gain), _lift(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must be ({d},)"
        )
    mu = a.value.mean(axis=-1, keepdims=True)
    centered = a.value - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    value = xhat * gain.value + bias.value

    def backward(grad):
        _accumulate(gain, (grad * xhat).reshape(-1, d).sum(axis=0))
        _accumulate(bias, grad.reshape(-1, d).sum(axis=0))
        g = grad * gain.value
        gs = g.sum(axis=-1, keepdims=True)
        gx = (g * xhat).sum(axis=-1, keepdims=True)
        _accumulate(a, inv * (g - gs / d - xhat * gx / d))

    return Node(value, (a, gain, bias), backward)


# ---------------------------------------------------------------------------
# sequence ops
# ---------------------------------------------------------------------------


def conv1d(x, kernel) -> Node:
    """Causal 1-D convolution along time.

    `x` is [T, C_in], `kernel` is [k, C_in, C_out]; the input is left-padded
    with k-1 zero rows so output row t sees only rows <= t.
    """
    x, kernel = _lift(x), _lift(kernel)
    if x.value.ndim != 2 or kernel.value.ndim != 3 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} vs kernel {kernel.shape}")
    t, c_in = x.shape
    k = kernel.shape[0]
    padded = np.vstack([np.zeros((k - 1, c_in)), x.value]) if k > 1 else x.value
    value = np.zeros((t, kernel.shape[2]))
    for j in range(k):
        value += padded[j : j + t] @ kernel.value[j]

    def backward(grad):
        gx_padded = np.zeros_like(padded)
        gk = np.zeros_like(kernel.value)
        for j in range(k):
            gk[j] = padded[j : j + t].T @ grad
            gx_padded[j : j + t] += grad @ kernel.value[j].T
        _accumulate(kernel, gk)
        _accumulate(x, gx_padded[k - 1 :] if k > 1 else gx_padded)

    return Node(value, (x, kernel), backward)


def embedding(table, tokens) -> Node:
    """Look up token columns of `table` ([D, K]); output tokens.shape + (D,)."""
    table = _lift(table)
    tokens = np.asarray(tokens)
    if table.value.ndim != 2:
        raise ShapeError(f"embedding: table must be a matrix, got {table.shape}")
    k = table.shape[1]
    if tokens.size and (tokens.min() < 0 or tokens.max() >= k):
        raise ValueError(
            f"embedding: token out of range [0, {k}): "
            f"min={tokens.min()} max={tokens.max()}"
        )
    value = table.value.T[tokens]

    def backward(grad):
        gt = np.zeros((k, table.shape[0]))
        np.add.at(gt, tokens.reshape(-1), grad.reshape(-1, table.shape[0]))
        _accumulate(table, gt.T)

    return Node(value, (table,), backward)


def concat(nodes: Sequence, axis: int = -1) -> Node:
    nodes = [_lift(n) for n in nodes]
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        raise ShapeError(
            "concat: shapes "
            + ", ".join(str(n.shape) for n in nodes)
            + f" do not align on axis {axis}"
        )
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad):
        for n, piece in zip(nodes, np.split(grad, splits, axis=axis)):
            _accumulate(n, piece)

    return Node(value, tuple(nodes), backward)


def slice_rows(a, start: int, stop: int) -> Node:
    a = _lift(a)
    if not 0 <= start <= stop <= a.shape[0]:
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for {a.shape}")

    def backward(grad):
        g = np.zeros_like(a.value)
        g[start:stop] = grad
        _accumulate(a, g)

    return Node(a.value[start:stop], (a,), backward)


def slice_cols(a, start: int, stop: int) -> Node:
    a = _lift(a)
    if a.value.ndim != 2 or not 0 <= start <= stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")

    def backward(grad):
        g = np.zeros_like(a.value)
        g[:, start:stop] = grad
        _accumulate(a, g)

    return Node(a.value[:, start:stop], (a,), backward)


def reshape(a, shape) -> Node:
    a = _lift(a)
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")

    def backward(grad):
        _accumulate(a, grad.reshape(a.shape))

    return Node(value, (a,), backward)


# ---------------------------------------------------------------------------
# losses and reductions
# ---------------------------------------------------------------------------


def cross_entropy(logits, targets) -> Node:
    """Per-row negative log-likelihood of integer targets under `logits`.

    `logits` is [N, K] (unnormalized), `targets` is [N] ints; returns [N].
    """
    logits = _lift(logits)
    targets = np.asarray(targets)
    if logits.value.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy: logits {logits.shape} vs targets {targets.shape}"
        )
    k = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ValueError(f"cross_entropy: target out of range [0, {k})")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    sumexp = e.sum(axis=1, keepdims=True)
    rows = np.arange(targets.shape[0])
    value = np.log(sumexp[:, 0]) - shifted[rows, targets]

    def backward(grad):
        g = (e / sumexp) * grad[:, None]
        g[rows, targets] -= grad
        _accumulate(logits, g)

    return Node(value, (logits,), backward)


def mean(a) -> Node:
    a = _lift(a)
    n = a.value.size

    def backward(grad):
        _accumulate(a, np.full(a.shape, grad / n))

    return Node(a.value.mean(), (a,), backward)


def sum_all(a) -> Node:
    a = _lift(a)

    def backward(grad):
        _accumulate(a, np.full(a.shape, grad))

    return Node(a.value.sum(), (a,), backward)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Node) -> None:
    """Backpropagate from a scalar loss; each graph may be consumed once."""
    if loss.value.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._backward == "consumed":
        raise RuntimeError("backward: graph already consumed; rebuild the graph")

    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.asarray(1.0)
    for node in reversed(order):
        if node._backward is not None and node._backward != "consumed" and node.grad is not None:
            node._backward(node.grad)
    loss._backward = "consumed"


def trainable_leaves(loss: Node) -> list[Node]:
    """All trainable leaf nodes reachable from `loss`, in discovery order."""
    out: list[Node] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.trainable and not node.parents:
            out.append(node)
        stack.extend(node.parents)
    return out
