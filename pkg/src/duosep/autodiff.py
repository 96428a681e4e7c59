"""Tape-based reverse-mode automatic differentiation on dense float64 arrays.

A Graph records every operation as a node in an append-only list, so node
ids double as a topological order. Forward values are computed eagerly at
apply() time; backward() walks the tape once in reverse. The op vocabulary
is deliberately small: exactly what the training objectives and the two
recurrent models in this package need, nothing speculative.

Everything is float64. After every forward op the output is checked for
NaN/Inf and a NumericalError names the offending op, so a numerical
failure surfaces at the op that produced it instead of three screens later
in an optimizer update.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .exceptions import NumericalError, ShapeError

_LN10 = float(np.log(10.0))

# Ops accepted by Graph.apply. "leaf" is reserved for inputs.
OP_KINDS = frozenset({
    "add", "sub", "mul", "div", "matmul", "sum", "mean", "square", "sqrt",
    "log10", "relu", "sigmoid", "tanh", "concat", "slice", "scale", "dot",
    "clamp_min", "overlap_add",
})

_ELEMENTWISE_BINARY = ("add", "sub", "mul", "div")
_UNARY = ("square", "sqrt", "log10", "relu", "sigmoid", "tanh")


class Node:
    __slots__ = ("kind", "inputs", "value", "meta")

    def __init__(self, kind, inputs, value, meta):
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.meta = meta


def _as_f64(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of the input."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Graph:
    """An autodiff tape. Create one per forward/backward pass."""

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Node] = []
        self._grads: list = []
        self._requires_grad: list = []
        self.check_finite = check_finite

    # ------------------------------------------------------------------
    # construction

    def leaf(self, array, requires_grad: bool = False) -> "Var":
        value = _as_f64(array)
        if self.check_finite and not np.isfinite(value.sum()):
            raise NumericalError("non-finite values in leaf input")
        self.nodes.append(Node("leaf", (), value, None))
        self._grads.append(None)
        self._requires_grad.append(requires_grad)
        return Var(self, len(self.nodes) - 1)

    def constant(self, array) -> "Var":
        return self.leaf(array, requires_grad=False)

    def param(self, array) -> "Var":
        return self.leaf(array, requires_grad=True)

    def apply(self, kind: str, *input_ids: int, **meta) -> int:
        """Append one op node. Returns the new node id.

        input_ids index previously created nodes. meta carries op
        parameters (axis, slice bounds, scale constant, ...).
        """
        if kind not in OP_KINDS:
            raise ShapeError(f"unknown op kind '{kind}'")
        vals = []
        for i in input_ids:
            if not 0 <= i < len(self.nodes):
                raise ShapeError(f"op '{kind}': input id {i} out of range")
            vals.append(self.nodes[i].value)
        value, stored_meta = _forward(kind, vals, meta)
        if self.check_finite:
            # NaN and +-Inf both propagate through a plain sum, so one
            # scalar check covers the whole array cheaply.
            if not np.isfinite(value.sum() if value.ndim else value):
                raise NumericalError(f"non-finite output from op '{kind}'")
        self.nodes.append(Node(kind, tuple(input_ids), value, stored_meta))
        self._grads.append(None)
        self._requires_grad.append(False)
        return len(self.nodes) - 1

    # ------------------------------------------------------------------
    # access

    def value(self, node_id: int) -> np.ndarray:
        return self.nodes[node_id].value

    def grad(self, node_id: int):
        return self._grads[node_id]

    def var(self, node_id: int) -> "Var":
        return Var(self, node_id)

    def __len__(self):
        return len(self.nodes)

    # ------------------------------------------------------------------
    # backward

    def backward(self, loss_id: int) -> dict:
        """Reverse pass from a scalar loss node.

        Populates gradients for every ancestor of the loss and returns a
        dict {node_id: grad} for leaves created with requires_grad=True.
        """
        loss = self.nodes[loss_id]
        if loss.value.size != 1:
            raise ShapeError(
                f"backward needs a scalar loss, got shape {loss.value.shape}")
        grads = [None] * len(self.nodes)
        grads[loss_id] = np.ones_like(loss.value)
        for nid in range(loss_id, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.kind == "leaf":
                continue
            _backward_op(node, g, grads, self.nodes)
        self._grads = grads
        return {
            i: grads[i]
            for i in range(len(self.nodes))
            if self._requires_grad[i] and grads[i] is not None
        }


def _forward(kind, vals, meta):
    if kind in _ELEMENTWISE_BINARY:
        a, b = vals
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(
                f"op '{kind}': shapes {a.shape} and {b.shape} do not broadcast")
        if kind == "add":
            return a + b, None
        if kind == "sub":
            return a - b, None
        if kind == "mul":
            return a * b, None
        with np.errstate(divide="ignore", invalid="ignore"):
            return a / b, None

    if kind in _UNARY:
        (a,) = vals
        if kind == "square":
            return a * a, None
        if kind == "sqrt":
            return np.sqrt(a), None
        if kind == "log10":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.log10(a), None
        if kind == "relu":
            return np.maximum(a, 0.0), None
        if kind == "sigmoid":
            return expit(a), None
        return np.tanh(a), None

    if kind == "matmul":
        a, b = vals
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(
                f"op 'matmul': incompatible shapes {a.shape} @ {b.shape}")
        return a @ b, None

    if kind == "sum":
        (a,) = vals
        return np.asarray(a.sum()), None

    if kind == "mean":
        (a,) = vals
        return np.asarray(a.mean()), None

    if kind == "dot":
        a, b = vals
        if a.shape != b.shape:
            raise ShapeError(f"op 'dot': shapes {a.shape} vs {b.shape} differ")
        return np.asarray(np.sum(a * b)), None

    if kind == "scale":
        (a,) = vals
        c = float(meta["c"])
        return a * c, (c,)

    if kind == "clamp_min":
        (a,) = vals
        t = float(meta["threshold"])
        return np.maximum(a, t), (t,)

    if kind == "concat":
        axis = int(meta.get("axis", 0))
        if not vals:
            raise ShapeError("op 'concat': needs at least one input")
        for v in vals:
            if v.ndim != vals[0].ndim:
                raise ShapeError("op 'concat': rank mismatch between inputs")
        try:
            out = np.concatenate(vals, axis=axis)
        except ValueError as e:
            raise ShapeError(f"op 'concat': {e}")
        return out, (axis, tuple(v.shape[axis] for v in vals))

    if kind == "slice":
        (a,) = vals
        axis = int(meta.get("axis", 0))
        start = int(meta["start"])
        stop = int(meta["stop"])
        if axis >= a.ndim or not (0 <= start <= stop <= a.shape[axis]):
            raise ShapeError(
                f"op 'slice': bounds [{start}:{stop}] on axis {axis} "
                f"invalid for shape {a.shape}")
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, stop)
        return a[tuple(idx)], (axis, start, stop)

    if kind == "overlap_add":
        # Frames laid out time-major: row t*batch + b. Output (batch, L)
        # with L = (T-1)*hop + frame_len. Linear op; the adjoint is frame
        # extraction, which is why it earns its own kind instead of a
        # chain of T slice/add nodes.
        (frames,) = vals
        hop = int(meta["hop"])
        batch = int(meta["batch"])
        if frames.ndim != 2 or frames.shape[0] % batch != 0 or hop <= 0:
            raise ShapeError(
                f"op 'overlap_add': bad frames shape {frames.shape} "
                f"for batch {batch}, hop {hop}")
        steps = frames.shape[0] // batch
        flen = frames.shape[1]
        out = np.zeros((batch, (steps - 1) * hop + flen))
        for t in range(steps):
            out[:, t * hop:t * hop + flen] += frames[t * batch:(t + 1) * batch]
        return out, (hop, batch)

    raise ShapeError(f"unknown op kind '{kind}'")


def _acc(grads, nodes, nid, g):
    if grads[nid] is None:
        grads[nid] = np.zeros_like(nodes[nid].value)
    grads[nid] += g


def _backward_op(node, g, grads, nodes):
    kind = node.kind
    ins = node.inputs

    if kind == "add":
        a, b = (nodes[i].value for i in ins)
        _acc(grads, nodes, ins[0], _unbroadcast(g, a.shape))
        _acc(grads, nodes, ins[1], _unbroadcast(g, b.shape))
    elif kind == "sub":
        a, b = (nodes[i].value for i in ins)
        _acc(grads, nodes, ins[0], _unbroadcast(g, a.shape))
        _acc(grads, nodes, ins[1], _unbroadcast(-g, b.shape))
    elif kind == "mul":
        a, b = (nodes[i].value for i in ins)
        _acc(grads, nodes, ins[0], _unbroadcast(g * b, a.shape))
        _acc(grads, nodes, ins[1], _unbroadcast(g * a, b.shape))
    elif kind == "div":
        a, b = (nodes[i].value for i in ins)
        _acc(grads, nodes, ins[0], _unbroadcast(g / b, a.shape))
        _acc(grads, nodes, ins[1], _unbroadcast(-g * node.value / b, b.shape))
    elif kind == "matmul":
        a, b = (nodes[i].value for i in ins)
        _acc(grads, nodes, ins[0], g @ b.T)
        _acc(grads, nodes, ins[1], a.T @ g)
    elif kind == "sum":
        a = nodes[ins[0]].value
        _acc(grads, nodes, ins[0], np.broadcast_to(g, a.shape))
    elif kind == "mean":
        a = nodes[ins[0]].value
        _acc(grads, nodes, ins[0], np.broadcast_to(g / a.size, a.shape))
    elif kind == "square":
        a = nodes[ins[0]].value
        _acc(grads, nodes, ins[0], 2.0 * a * g)
    elif kind == "sqrt":
        _acc(grads, nodes, ins[0], 0.5 * g / node.value)
    elif kind == "log10":
        a = nodes[ins[0]].value
        _acc(grads, nodes, ins[0], g / (a * _LN10))
    elif kind == "relu":
        a = nodes[ins[0]].value
        _acc(grads, nodes, ins[0], g * (a > 0.0))
    elif kind == "sigmoid":
        s = node.value
        _acc(grads, nodes, ins[0], g * s * (1.0 - s))
    elif kind == "tanh":
        t = node.value
        _acc(grads, nodes, ins[0], g * (1.0 - t * t))
    elif kind == "dot":
        a, b = (nodes[i].value for i in ins)
        _acc(grads, nodes, ins[0], g * b)
        _acc(grads, nodes, ins[1], g * a)
    elif kind == "scale":
        (c,) = node.meta
        _acc(grads, nodes, ins[0], g * c)
    elif kind == "clamp_min":
        # Subgradient convention: pass-through strictly above the
        # threshold, zero at and below it.
        (t,) = node.meta
        a = nodes[ins[0]].value
        _acc(grads, nodes, ins[0], g * (a > t))
    elif kind == "concat":
        axis, sizes = node.meta
        offset = 0
        for child, size in zip(ins, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + size)
            _acc(grads, nodes, child, g[tuple(idx)])
            offset += size
    elif kind == "slice":
        axis, start, stop = node.meta
        a = nodes[ins[0]].value
        if grads[ins[0]] is None:
            grads[ins[0]] = np.zeros_like(a)
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, stop)
        grads[ins[0]][tuple(idx)] += g
    elif kind == "overlap_add":
        hop, batch = node.meta
        frames = nodes[ins[0]].value
        steps = frames.shape[0] // batch
        flen = frames.shape[1]
        gf = np.empty_like(frames)
        for t in range(steps):
            gf[t * batch:(t + 1) * batch] = g[:, t * hop:t * hop + flen]
        _acc(grads, nodes, ins[0], gf)
    else:
        raise ShapeError(f"no backward rule for op '{kind}'")


class Var:
    """Thin handle (graph, node id) with operator sugar.

    Arithmetic with plain Python numbers folds into scale/constant nodes,
    so loss code reads like numpy.
    """

    __slots__ = ("graph", "id")

    def __init__(self, graph: Graph, node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.id].value

    @property
    def shape(self):
        return self.value.shape

    def _wrap(self, nid: int) -> "Var":
        return Var(self.graph, nid)

    def _coerce(self, other) -> "Var":
        if isinstance(other, Var):
            if other.graph is not self.graph:
                raise ShapeError("cannot mix nodes from different graphs")
            return other
        return self.graph.constant(np.asarray(other, dtype=np.float64))

    def __add__(self, other):
        o = self._coerce(other)
        return self._wrap(self.graph.apply("add", self.id, o.id))

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return self._wrap(self.graph.apply("sub", self.id, o.id))

    def __rsub__(self, other):
        o = self._coerce(other)
        return self._wrap(self.graph.apply("sub", o.id, self.id))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        o = self._coerce(other)
        return self._wrap(self.graph.apply("mul", self.id, o.id))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(1.0 / float(other))
        o = self._coerce(other)
        return self._wrap(self.graph.apply("div", self.id, o.id))

    def __rtruediv__(self, other):
        o = self._coerce(other)
        return self._wrap(self.graph.apply("div", o.id, self.id))

    def __neg__(self):
        return self.scale(-1.0)

    def __matmul__(self, other):
        o = self._coerce(other)
        return self._wrap(self.graph.apply("matmul", self.id, o.id))

    def scale(self, c: float):
        return self._wrap(self.graph.apply("scale", self.id, c=c))

    def square(self):
        return self._wrap(self.graph.apply("square", self.id))

    def sqrt(self):
        return self._wrap(self.graph.apply("sqrt", self.id))

    def log10(self):
        return self._wrap(self.graph.apply("log10", self.id))

    def relu(self):
        return self._wrap(self.graph.apply("relu", self.id))

    def sigmoid(self):
        return self._wrap(self.graph.apply("sigmoid", self.id))

    def tanh(self):
        return self._wrap(self.graph.apply("tanh", self.id))

    def sum(self):
        return self._wrap(self.graph.apply("sum", self.id))

    def mean(self):
        return self._wrap(self.graph.apply("mean", self.id))

    def dot(self, other):
        o = self._coerce(other)
        return self._wrap(self.graph.apply("dot", self.id, o.id))

    def clamp_min(self, threshold: float):
        return self._wrap(self.graph.apply("clamp_min", self.id,
                                           threshold=threshold))

    def slice(self, axis: int, start: int, stop: int):
        return self._wrap(self.graph.apply("slice", self.id, axis=axis,
                                           start=start, stop=stop))

    def rows(self, start: int, stop: int):
        return self.slice(0, start, stop)

    def cols(self, start: int, stop: int):
        return self.slice(1, start, stop)

    def grad(self):
        return self.graph.grad(self.id)

    def backward(self):
        return self.graph.backward(self.id)


def concat(vars_, axis: int = 0) -> Var:
    if not vars_:
        raise ShapeError("concat needs at least one input")
    g = vars_[0].graph
    return Var(g, g.apply("concat", *(v.id for v in vars_), axis=axis))


def overlap_add(frames: Var, hop: int, batch: int) -> Var:
    g = frames.graph
    return Var(g, g.apply("overlap_add", frames.id, hop=hop, batch=batch))


def finite_diff_check(fn, point, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn builds a scalar loss on a fresh graph: fn(graph, x_var) -> Var.
    The relative error per coordinate is |a - c| / max(|a|, |c|, 1e-12).
    """
    point = _as_f64(point)

    def run(p):
        g = Graph()
        x = g.leaf(p, requires_grad=True)
        out = fn(g, x)
        return g, x, out

    g, x, loss = run(point)
    g.backward(loss.id)
    analytic = np.asarray(g.grad(x.id), dtype=np.float64).ravel()

    flat = point.ravel()
    central = np.empty_like(flat)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = step
        _, _, up = run((flat + bump).reshape(point.shape))
        _, _, dn = run((flat - bump).reshape(point.shape))
        central[i] = (float(up.value) - float(dn.value)) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(central)), 1e-12)
    return float(np.max(np.abs(analytic - central) / denom))
