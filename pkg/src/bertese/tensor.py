"""Dense tensors with reverse-mode automatic differentiation on numpy.

Arrays are float32 for training and float64 for gradient-check work; an
operation's output keeps the dtype of its operands.

Every operation attaches two closures to its output: a forward closure
that recomputes the value from the parents' current data, and a backward
closure that maps an upstream gradient to per-parent gradients. Discrete
choices made during the forward pass (argmax picks, nearest-row indices,
straight-through snap targets) are captured as constants inside both
closures. Replaying the tape with perturbed leaf values therefore
evaluates the smooth local surrogate that the backward pass
differentiates, which is what makes central-difference checking of
straight-through paths well defined (see `grad_check`).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class _GradMode:
    enabled = True


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        self._prev = _GradMode.enabled
        _GradMode.enabled = False
        return self

    def __exit__(self, *exc):
        _GradMode.enabled = self._prev
        return False


class Tensor:
    """A numpy array plus an optional slot in the computation record."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_forward", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._forward = None
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{req})"

    # operator sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Accumulate dSelf/dLeaf into every reachable requires_grad leaf.

        Accumulation is additive: calling backward twice without clearing
        grads doubles them. Node-local gradients live in a scratch table,
        so repeated calls never compound through interior nodes.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = _topo_order(self)
        table: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = table.pop(id(node), None)
            if g is None:
                continue
            if node._parents:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    prev = table.get(id(parent))
                    table[id(parent)] = pg if prev is None else prev + pg
            elif node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g


def _topo_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of the record reachable from root."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def _replay(order: list[Tensor]) -> None:
    """Recompute recorded values after leaf data changed in place."""
    for node in order:
        if node._parents and node.requires_grad:
            node.data = node._forward()


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _record(parents, forward_fn, backward_fn) -> Tensor:
    data = forward_fn()
    if not _GradMode.enabled:
        return Tensor(data)
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
        out._forward = forward_fn
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# elementwise and linear algebra primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_broadcast("add", a, b)
    return _record(
        (a, b),
        lambda: a.data + b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_broadcast("sub", a, b)
    return _record(
        (a, b),
        lambda: a.data - b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_broadcast("mul", a, b)
    return _record(
        (a, b),
        lambda: a.data * b.data,
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _record((a,), lambda: -a.data, lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    return _record((a,), lambda: np.exp(a.data), lambda g: (g * np.exp(a.data),))


def tanh(a: Tensor) -> Tensor:
    return _record(
        (a,), lambda: np.tanh(a.data), lambda g: (g * (1.0 - np.tanh(a.data) ** 2),)
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def backward(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record((a, b), lambda: a.data @ b.data, backward)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _record(
        (a,), lambda: a.data.transpose(axes), lambda g: (g.transpose(inverse),)
    )


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    return _record((a,), lambda: a.data.reshape(shape), lambda g: (g.reshape(old),))


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape),)

    return _record(
        (a,), lambda: a.data.sum(axis=axis, keepdims=keepdims), backward
    )


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape) / count,)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape) / count,)

    return _record(
        (a,), lambda: a.data.mean(axis=axis, keepdims=keepdims), backward
    )


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""

    def forward():
        z = a.data - a.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        y = forward()
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record((a,), forward, backward)


def log_softmax(a: Tensor) -> Tensor:
    def forward():
        z = a.data - a.data.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def backward(g):
        y = np.exp(forward())
        return (g - y * g.sum(axis=-1, keepdims=True),)

    return _record((a,), forward, backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """GELU via the tanh approximation."""

    def forward():
        x = a.data
        x2 = x * x
        return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * (x2 * x))))

    def backward(g):
        x = a.data
        x2 = x * x
        t = np.tanh(_GELU_C * (x + _GELU_A * (x2 * x)))
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _record((a,), forward, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Layer normalization over the last axis."""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs input {x.shape}"
        )
    dim = x.shape[-1]

    def normalize(v):
        mu = v.mean(axis=-1, keepdims=True)
        var = ((v - mu) ** 2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        return (v - mu) * inv, inv

    def forward():
        xhat, _ = normalize(x.data)
        return xhat * gain.data + bias.data

    def backward(g):
        xhat, inv = normalize(x.data)
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        gy = g * gain.data
        gx = inv * (
            gy
            - gy.mean(axis=-1, keepdims=True)
            - xhat * (gy * xhat).mean(axis=-1, keepdims=True)
        )
        # the two mean terms above both carry the 1/dim factor already
        assert dim == x.shape[-1]
        return gx, ggain, gbias

    return _record((x, gain, bias), forward, backward)


# ---------------------------------------------------------------------------
# gather / indexing primitives
# ---------------------------------------------------------------------------


def gather_rows(table: Tensor, ids) -> Tensor:
    """table[(V, d)] indexed by an integer array -> (ids.shape..., d)."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got {table.shape}")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _record((table,), lambda: table.data[ids], backward)


def index_last(x: Tensor, idx) -> Tensor:
    """Pick one entry along the last axis per leading index.

    idx has shape x.shape[:-1]; the result drops the last axis.
    """
    idx = np.asarray(idx)
    if idx.shape != x.shape[:-1]:
        raise ShapeError(f"index_last: idx {idx.shape} vs input {x.shape}")
    last = x.shape[-1]

    def forward():
        flat = x.data.reshape(-1, last)
        return flat[np.arange(flat.shape[0]), idx.reshape(-1)].reshape(idx.shape)

    def backward(g):
        gx = np.zeros_like(x.data).reshape(-1, last)
        gx[np.arange(gx.shape[0]), idx.reshape(-1)] = g.reshape(-1)
        return (gx.reshape(x.shape),)

    return _record((x,), forward, backward)


def gather_positions(x: Tensor, pos) -> Tensor:
    """x[(B, n, d)] indexed per batch row -> (B, d)."""
    pos = np.asarray(pos)
    if x.ndim != 3 or pos.shape != (x.shape[0],):
        raise ShapeError(f"gather_positions: pos {pos.shape} vs input {x.shape}")
    rows = np.arange(x.shape[0])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[rows, pos] = g
        return (gx,)

    return _record((x,), lambda: x.data[rows, pos], backward)


# ---------------------------------------------------------------------------
# nearest-row distances and straight-through nodes
# ---------------------------------------------------------------------------


def _nearest_rows(points: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Index of the closest row per point, lowest index on ties."""
    d2 = (
        (points * points).sum(axis=1)[:, None]
        + (rows * rows).sum(axis=1)[None, :]
        - 2.0 * points @ rows.T
    )
    return np.argmin(d2, axis=1)


def min_sqdist(points: Tensor, rows: Tensor) -> Tensor:
    """Per-point squared distance to its nearest row: (N, d), (V, d) -> (N,).

    The nearest row per point is fixed at record time; gradients flow
    through that row only (lowest index on ties).
    """
    if points.ndim != 2 or rows.ndim != 2 or points.shape[1] != rows.shape[1]:
        raise ShapeError(f"min_sqdist: shapes {points.shape} and {rows.shape}")
    idx = _nearest_rows(points.data, rows.data)

    def forward():
        diff = points.data - rows.data[idx]
        return (diff * diff).sum(axis=1)

    def backward(g):
        diff = points.data - rows.data[idx]
        gp = 2.0 * g[:, None] * diff
        gr = np.zeros_like(rows.data)
        np.add.at(gr, idx, -gp)
        return gp, gr

    return _record((points, rows), forward, backward)


def ste_hardmax(probs: Tensor) -> Tensor:
    """One-hot at the row-wise argmax; gradients pass through unchanged.

    Forward output is exactly one-hot (lowest index on ties). The tape
    records the node as probs + constant, so replay yields the smooth
    surrogate whose Jacobian is the identity the backward pass uses.
    """
    if probs.shape[-1] == 0:
        raise ValueError("ste_hardmax: empty probability vector")
    p = probs.data
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-5):
        raise ValueError("ste_hardmax: input rows must be distributions")
    onehot = np.zeros_like(p)
    flat = onehot.reshape(-1, p.shape[-1])
    flat[np.arange(flat.shape[0]), p.reshape(-1, p.shape[-1]).argmax(axis=1)] = 1.0
    shift = onehot - p.copy()
    return _record((probs,), lambda: probs.data + shift, lambda g: (g,))


def snap_to_rows(points: Tensor, rows: Tensor) -> Tensor:
    """Replace each point by its nearest row; straight-through backward.

    Upstream gradients pass to `points` unchanged; `rows` is treated as a
    constant lookup and receives no gradient.
    """
    if points.ndim != 2 or rows.ndim != 2 or points.shape[1] != rows.shape[1]:
        raise ShapeError(f"snap_to_rows: shapes {points.shape} and {rows.shape}")
    idx = _nearest_rows(points.data, rows.data)
    shift = rows.data[idx] - points.data.copy()
    return _record(
        (points, rows), lambda: points.data + shift, lambda g: (g, None)
    )


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def grad_check(build_fn, params: list[Tensor], epsilon: float = 1e-4) -> float:
    """Compare analytic gradients against central differences.

    `build_fn` is called once to record a scalar loss. Finite differences
    then perturb each parameter coordinate in place and replay the
    recorded tape, keeping every discrete choice frozen at its recorded
    value. Returns the max over parameters of
    ||analytic - numeric||_2 / max(1e-8, ||analytic||_2 + ||numeric||_2).

    The vector-norm metric is deliberate: coordinates whose true gradient
    sits many orders of magnitude below the loss scale produce central
    differences dominated by float64 rounding of the loss itself, so a
    per-coordinate relative error is pure noise for them at any epsilon.
    """
    for p in params:
        if p._parents or not p.requires_grad:
            raise ValueError("grad_check: params must be requires_grad leaves")
    loss = build_fn()
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValueError("grad_check: build_fn must return a scalar Tensor")
    order = _topo_order(loss)
    for p in params:
        p.grad = None
    loss.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        numeric = np.empty_like(ana_flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            _replay(order)
            f_plus = float(loss.data)
            flat[i] = orig - epsilon
            _replay(order)
            f_minus = float(loss.data)
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * epsilon)
        diff = float(np.linalg.norm(ana_flat - numeric))
        scale = float(np.linalg.norm(ana_flat) + np.linalg.norm(numeric))
        worst = max(worst, diff / max(1e-8, scale))
    _replay(order)
    return worst
