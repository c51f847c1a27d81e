"""A small static-graph reverse-mode differentiator over numpy arrays.

Tensors are plain ``numpy.ndarray`` values (float32 for training, float64
when used as a gradient oracle). Image tensors use NCHW layout. Only the fixed
catalog in :data:`OPS` is available; each op has a forward and a backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CATALOG_VERSION = 1


class GraphError(RuntimeError):
    pass


class ShapeError(GraphError):
    pass


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- op catalog --------------------------------------------------------------
# forward(inputs, **attrs) -> (output, cache); backward(g, inputs, out, cache, **attrs) -> grads

class Op:
    name = ""

    def forward(self, xs, **attrs):
        raise NotImplementedError

    def backward(self, g, xs, out, cache, **attrs):
        raise NotImplementedError


class Conv2d(Op):
    """Cross-correlation, weights ``(Cout, Cin, k, k)``, zero padding."""

    name = "conv2d"

    def forward(self, xs, stride=1, pad=None):
        x, w, b = xs
        n, c, h, wd = x.shape
        cout, cin, k, _ = w.shape
        if cin != c:
            raise ShapeError(f"conv2d expects {cin} input channels, got {c}")
        pad = k // 2 if pad is None else pad
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        ho = (h + 2 * pad - k) // stride + 1
        wo = (wd + 2 * pad - k) // stride + 1
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)
        out = w.reshape(cout, -1) @ cols
        out = out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3) + b.reshape(1, -1, 1, 1)
        return np.ascontiguousarray(out), (cols, xp.shape, pad)

    def backward(self, g, xs, out, cache, stride=1, pad=None):
        x, w, b = xs
        cols, xp_shape, pad = cache
        n, c = x.shape[:2]
        cout, _, k, _ = w.shape
        ho, wo = g.shape[2:]
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        dw = (g2 @ cols.T).reshape(w.shape)
        db = g2.sum(axis=1)
        dcols = (w.reshape(cout, -1).T @ g2).reshape(c, k, k, n, ho, wo)
        dxp = np.zeros(xp_shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j].transpose(1, 0, 2, 3)
        dx = dxp[:, :, pad:xp_shape[2] - pad, pad:xp_shape[3] - pad] if pad else dxp
        return [dx, dw, db]


class Upsample2(Op):
    """Nearest-neighbour x2 upsampling."""

    name = "upsample2"

    def forward(self, xs):
        return xs[0].repeat(2, axis=2).repeat(2, axis=3), None

    def backward(self, g, xs, out, cache):
        n, c, h, w = xs[0].shape
        return [g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))]


class LeakyRelu(Op):
    name = "leaky_relu"

    def forward(self, xs, slope=0.2):
        x = xs[0]
        return np.where(x > 0, x, slope * x), None

    def backward(self, g, xs, out, cache, slope=0.2):
        return [np.where(xs[0] > 0, g, slope * g)]


class InstanceNorm(Op):
    name = "instance_norm"

    def forward(self, xs, eps=1e-5):
        x = xs[0]
        mu = x.mean(axis=(2, 3), keepdims=True)
        var = x.var(axis=(2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        y = (x - mu) * inv
        return y, inv

    def backward(self, g, xs, out, cache, eps=1e-5):
        inv = cache
        gm = g.mean(axis=(2, 3), keepdims=True)
        gy = (g * out).mean(axis=(2, 3), keepdims=True)
        return [inv * (g - gm - out * gy)]


class Concat(Op):
    """Channel concatenation (axis 1)."""

    name = "concat"

    def forward(self, xs):
        return np.concatenate(xs, axis=1), None

    def backward(self, g, xs, out, cache):
        splits = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.split(g, splits, axis=1)


class GlobalAvgPool(Op):
    name = "global_avg_pool"

    def forward(self, xs):
        return xs[0].mean(axis=(2, 3)), None

    def backward(self, g, xs, out, cache):
        n, c, h, w = xs[0].shape
        return [np.broadcast_to(g[:, :, None, None] / (h * w), xs[0].shape).copy()]


class FullyConnected(Op):
    """``x @ W.T + b`` with ``W`` of shape ``(Cout, Cin)``."""

    name = "fully_connected"

    def forward(self, xs):
        x, w, b = xs
        if x.shape[-1] != w.shape[1]:
            raise ShapeError(f"fully_connected expects {w.shape[1]} features, got {x.shape[-1]}")
        return x @ w.T + b, None

    def backward(self, g, xs, out, cache):
        x, w, b = xs
        return [g @ w, g.T @ x, g.sum(axis=0)]


class Reshape(Op):
    name = "reshape"

    def forward(self, xs, shape):
        return xs[0].reshape(shape), None

    def backward(self, g, xs, out, cache, shape):
        return [g.reshape(xs[0].shape)]


class Sigmoid(Op):
    name = "sigmoid"

    def forward(self, xs):
        return 0.5 * (1.0 + np.tanh(0.5 * xs[0])), None

    def backward(self, g, xs, out, cache):
        return [g * out * (1.0 - out)]


class Tanh(Op):
    name = "tanh"

    def forward(self, xs):
        return np.tanh(xs[0]), None

    def backward(self, g, xs, out, cache):
        return [g * (1.0 - out * out)]


class Add(Op):
    name = "add"

    def forward(self, xs):
        return xs[0] + xs[1], None

    def backward(self, g, xs, out, cache):
        return [_unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)]


class Sub(Op):
    name = "sub"

    def forward(self, xs):
        return xs[0] - xs[1], None

    def backward(self, g, xs, out, cache):
        return [_unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)]


class Mul(Op):
    name = "mul"

    def forward(self, xs):
        return xs[0] * xs[1], None

    def backward(self, g, xs, out, cache):
        a, b = xs
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


class ScalarMul(Op):
    name = "scalar_mul"

    def forward(self, xs, scale):
        return xs[0] * xs[0].dtype.type(scale), None

    def backward(self, g, xs, out, cache, scale):
        return [g * g.dtype.type(scale)]


class Abs(Op):
    name = "abs"

    def forward(self, xs):
        return np.abs(xs[0]), None

    def backward(self, g, xs, out, cache):
        return [g * np.sign(xs[0])]


class LogOffset(Op):
    """``log(x + c)``."""

    name = "log"

    def forward(self, xs, c=0.01):
        return np.log(xs[0] + xs[0].dtype.type(c)), None

    def backward(self, g, xs, out, cache, c=0.01):
        return [g / (xs[0] + xs[0].dtype.type(c))]


class Mean(Op):
    name = "mean"

    def forward(self, xs):
        return np.asarray(xs[0].mean(), dtype=xs[0].dtype), None

    def backward(self, g, xs, out, cache):
        return [np.full(xs[0].shape, g / xs[0].size, dtype=xs[0].dtype)]


OPS: dict[str, Op] = {op.name: op for op in (
    Conv2d(), Upsample2(), LeakyRelu(), InstanceNorm(), Concat(), GlobalAvgPool(),
    FullyConnected(), Reshape(), Sigmoid(), Tanh(), Add(), Sub(), Mul(), ScalarMul(),
    Abs(), LogOffset(), Mean(),
)}


# --- graph -------------------------------------------------------------------

@dataclass
class Node:
    id: int
    kind: str  # "input", "param" or an op name
    inputs: tuple[int, ...] = ()
    attrs: dict[str, Any] = field(default_factory=dict)
    name: str = ""
    op: Op | None = None


class Graph:
    """A static computation graph.

    Nodes are appended in evaluation order, so the graph is acyclic by
    construction. Parameters live in :attr:`params` keyed by name.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.params: dict[str, np.ndarray] = {}
        self.input_shapes: dict[str, tuple] = {}
        self._values: list | None = None
        self._caches: list | None = None
        self._param_node: dict[str, int] = {}

    def input(self, name: str, shape) -> int:
        """Declare an input; ``None`` in ``shape`` matches any extent."""
        self.input_shapes[name] = tuple(shape)
        return self._append(Node(len(self.nodes), "input", name=name))

    def param(self, name: str, value) -> int:
        if name in self.params:
            raise GraphError(f"duplicate parameter {name!r}")
        self.params[name] = np.asarray(value, dtype=self.dtype)
        nid = self._append(Node(len(self.nodes), "param", name=name))
        self._param_node[name] = nid
        return nid

    def op(self, kind: str, *inputs: int, name: str = "", **attrs) -> int:
        if kind not in OPS:
            raise GraphError(f"unknown op {kind!r}")
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise GraphError(f"node input {i} does not precede the new node")
        return self._append(Node(len(self.nodes), kind, tuple(inputs), attrs, name, OPS[kind]))

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        self._values = None
        return node.id

    def param_node(self, name: str) -> int:
        return self._param_node[name]

    def forward(self, feeds: dict[str, np.ndarray], outputs=None) -> dict:
        """Evaluate every node in order and cache intermediates.

        Returns a mapping from each requested output node id (default: the
        last node) to its value.
        """
        values: list = [None] * len(self.nodes)
        caches: list = [None] * len(self.nodes)
        for node in self.nodes:
            if node.kind == "input":
                if node.name not in feeds:
                    raise GraphError(f"missing input {node.name!r} (node {node.id})")
                x = np.asarray(feeds[node.name], dtype=self.dtype)
                want = self.input_shapes[node.name]
                if len(want) != x.ndim or any(w is not None and w != a for w, a in zip(want, x.shape)):
                    raise ShapeError(f"node {node.id} ({node.name}): expected shape {want}, got {x.shape}")
                values[node.id] = x
            elif node.kind == "param":
                values[node.id] = self.params[node.name]
            else:
                xs = [values[i] for i in node.inputs]
                try:
                    values[node.id], caches[node.id] = node.op.forward(xs, **node.attrs)
                except ShapeError as exc:
                    raise ShapeError(f"node {node.id} ({node.name or node.kind}): {exc}") from None
                except ValueError as exc:
                    shapes = [x.shape for x in xs]
                    raise ShapeError(f"node {node.id} ({node.name or node.kind}): input shapes {shapes}: {exc}") from None
        self._values, self._caches = values, caches
        if outputs is None:
            outputs = [len(self.nodes) - 1]
        return {i: values[i] for i in outputs}

    def value(self, node_id: int) -> np.ndarray:
        if self._values is None:
            raise GraphError("graph has not been evaluated")
        return self._values[node_id]

    def activation_bytes(self) -> int:
        """Bytes held by cached non-parameter values and backward caches."""
        if self._values is None:
            return 0
        total = 0
        for node, v, c in zip(self.nodes, self._values, self._caches):
            if node.kind != "param":
                total += v.nbytes
            if isinstance(c, np.ndarray):
                total += c.nbytes
            elif isinstance(c, tuple):
                total += sum(x.nbytes for x in c if isinstance(x, np.ndarray))
        return total

    def release(self) -> None:
        self._values = self._caches = None

    def backward(self, loss: int, seed=None) -> dict[str, np.ndarray]:
        """Reverse-mode sweep from ``loss``.

        ``loss`` must be scalar unless an upstream gradient ``seed`` of the
        same shape is given. Returns gradients for every parameter.
        """
        if self._values is None:
            raise GraphError("backward called before forward")
        out = self._values[loss]
        if seed is None:
            if out.size != 1:
                raise GraphError(f"loss node {loss} is not scalar (shape {out.shape})")
            seed = np.ones_like(out)
        seed = np.asarray(seed, dtype=self.dtype)
        if seed.shape != out.shape:
            raise ShapeError(f"seed shape {seed.shape} does not match node {loss} shape {out.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss] = seed
        for node in reversed(self.nodes[:loss + 1]):
            g = grads[node.id]
            if g is None or node.op is None:
                continue
            xs = [self._values[i] for i in node.inputs]
            gin = node.op.backward(g, xs, self._values[node.id], self._caches[node.id], **node.attrs)
            for i, gi in zip(node.inputs, gin):
                grads[i] = gi if grads[i] is None else grads[i] + gi
        result = {}
        for name, nid in self._param_node.items():
            g = grads[nid]
            result[name] = np.zeros_like(self.params[name]) if g is None else g.astype(self.dtype, copy=False)
        return result

    def consumers(self, node_id: int) -> list[int]:
        return [n.id for n in self.nodes if node_id in n.inputs]


@dataclass
class GradCheckReport:
    worst_error: float
    worst_param: str
    worst_node: int  # first op consuming the worst parameter
    checked: int
    tolerance: float
    errors: dict[str, float]
    skipped: int = 0  # entries whose probe crossed a kink

    @property
    def passed(self) -> bool:
        return self.worst_error < self.tolerance


KINK_OPS = ("leaky_relu", "abs")


def gradient_check(g: Graph, feeds: dict, loss: int, tolerance: float = 1e-2, step: float = 1e-3,
                   max_entries: int | None = None, rng=None) -> GradCheckReport:
    """Compare analytic parameter gradients with central differences.

    The analytic pass runs at the graph's own precision; the difference
    quotients are evaluated in float64 on a copy of the parameters. The
    relative error of each entry is ``|a - d| / max(|a|, |d|, floor)`` with
    ``floor`` at 1e-3 of the largest gradient magnitude of that parameter and
    at least ``max(1e-5, 1000 * eps)`` of the largest gradient in the graph,
    ``eps`` being the machine epsilon of the graph dtype. Parameters whose
    exact gradient is zero, like a bias ahead of instance norm, would
    otherwise compare cancellation noise.

    Entries whose +/- ``step`` probes flip the sign of any leaky-relu or abs
    input are skipped: the difference quotient straddles a kink there.

    Args:
        max_entries: check at most this many randomly chosen entries per
            parameter (all entries when ``None``).
    """
    g.forward(feeds, outputs=[loss])
    analytic = g.backward(loss)

    oracle = Graph(np.float64)
    oracle.nodes, oracle.input_shapes, oracle._param_node = g.nodes, g.input_shapes, g._param_node
    oracle.params = {k: v.astype(np.float64) for k, v in g.params.items()}
    kink_inputs = [n.inputs[0] for n in g.nodes if n.kind in KINK_OPS]
    global_max = max((float(np.abs(v).max()) for v in analytic.values() if v.size), default=0.0)
    global_floor = max(1e-5, 1000 * float(np.finfo(g.dtype).eps)) * global_max

    def f():
        value = float(oracle.forward(feeds, outputs=[loss])[loss])
        return value, [oracle.value(i) > 0 for i in kink_inputs]

    _, base_signs = f()
    rng = np.random.default_rng(rng)
    errors, checked, skipped = {}, 0, 0
    worst = (0.0, "", -1)
    for name, p in oracle.params.items():
        a = analytic[name].astype(np.float64).ravel()
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        num = np.full(len(idx), np.nan)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            fp, sp = f()
            flat[i] = orig - step
            fm, sm = f()
            flat[i] = orig
            if any(not (np.array_equal(b, x) and np.array_equal(b, y)) for b, x, y in zip(base_signs, sp, sm)):
                skipped += 1
                continue
            num[j] = (fp - fm) / (2 * step)
        keep = ~np.isnan(num)
        ai, num = a[idx][keep], num[keep]
        if num.size == 0:
            errors[name] = 0.0
            continue
        floor = max(1e-3 * max(np.abs(num).max(), np.abs(ai).max()), global_floor, 1e-7)
        rel = np.abs(ai - num) / np.maximum(np.maximum(np.abs(ai), np.abs(num)), floor)
        err = float(rel.max())
        errors[name] = err
        checked += len(num)
        if err >= worst[0]:
            consumers = g.consumers(g.param_node(name))
            worst = (err, name, consumers[0] if consumers else -1)
    g.forward(feeds, outputs=[loss])
    return GradCheckReport(worst[0], worst[1], worst[2], checked, tolerance, errors, skipped)
