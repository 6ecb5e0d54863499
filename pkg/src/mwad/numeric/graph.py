"""Define-then-run reverse-mode differentiation over 2-D float64 tensors.

Nodes are appended in construction order, which is already a topological
order, so forward walks the list front to back and backward walks it back to
front. Shapes are inferred (and checked) as nodes are declared; broadcasting is
limited to adding a 1 x k row to an m x k matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, GraphError, StateError


@dataclass(eq=False)
class Node:
    index: int
    op: str
    inputs: tuple
    shape: tuple
    name: str
    attrs: dict = field(default_factory=dict)

    def __repr__(self):
        return f"Node({self.index}, {self.op}, {self.name!r}, shape={self.shape})"


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


class Graph:
    def __init__(self):
        self.nodes = []
        self.params = {}
        self._values = None

    # -- declaration ---------------------------------------------------
    def _add(self, op, inputs, shape, name=None, **attrs):
        node = Node(len(self.nodes), op, tuple(inputs), tuple(shape),
                    name or f"{op}_{len(self.nodes)}", attrs)
        self.nodes.append(node)
        self._values = None
        return node

    def input(self, name, shape):
        return self._add("input", (), shape, name)

    def param(self, name, value):
        value = np.array(value, dtype=np.float64, copy=True)
        if value.ndim != 2:
            raise GraphError(f"parameter {name!r} must be 2-D, got shape {value.shape}")
        if name in self.params:
            raise GraphError(f"duplicate parameter name {name!r}")
        self.params[name] = value
        return self._add("param", (), value.shape, name)

    def const(self, value, name=None):
        value = np.array(value, dtype=np.float64, copy=True)
        if value.ndim != 2:
            raise GraphError(f"constant must be 2-D, got shape {value.shape}")
        return self._add("const", (), value.shape, name, value=value)

    def matmul(self, a, b, name=None):
        if a.shape[1] != b.shape[0]:
            raise GraphError(f"matmul {name or ''}: {a.name}{a.shape} @ {b.name}{b.shape}")
        return self._add("matmul", (a, b), (a.shape[0], b.shape[1]), name)

    def add(self, a, b, name=None):
        if not (a.shape == b.shape or (b.shape[0] == 1 and b.shape[1] == a.shape[1])):
            raise GraphError(f"add {name or ''}: cannot combine {a.name}{a.shape} and {b.name}{b.shape}")
        return self._add("add", (a, b), a.shape, name)

    def sub(self, a, b, name=None):
        if a.shape != b.shape:
            raise GraphError(f"sub {name or ''}: {a.name}{a.shape} vs {b.name}{b.shape}")
        return self._add("sub", (a, b), a.shape, name)

    def mul(self, a, b, name=None):
        if a.shape != b.shape:
            raise GraphError(f"mul {name or ''}: {a.name}{a.shape} vs {b.name}{b.shape}")
        return self._add("mul", (a, b), a.shape, name)

    def scale(self, a, factor, name=None):
        return self._add("scale", (a,), a.shape, name, factor=float(factor))

    def concat(self, parts, axis, name=None):
        parts = tuple(parts)
        other = 1 - axis
        if len({p.shape[other] for p in parts}) != 1:
            raise GraphError(f"concat {name or ''}: mismatched shapes {[p.shape for p in parts]}")
        shape = list(parts[0].shape)
        shape[axis] = sum(p.shape[axis] for p in parts)
        return self._add("concat", parts, shape, name, axis=axis)

    def transpose(self, a, name=None):
        return self._add("transpose", (a,), a.shape[::-1], name)

    def slice_rows(self, a, start, stop, name=None):
        if not 0 <= start < stop <= a.shape[0]:
            raise GraphError(f"slice_rows {name or ''}: [{start}:{stop}] out of {a.shape}")
        return self._add("slice_rows", (a,), (stop - start, a.shape[1]), name, start=start, stop=stop)

    def slice_cols(self, a, start, stop, name=None):
        if not 0 <= start < stop <= a.shape[1]:
            raise GraphError(f"slice_cols {name or ''}: [{start}:{stop}] out of {a.shape}")
        return self._add("slice_cols", (a,), (a.shape[0], stop - start), name, start=start, stop=stop)

    def sigmoid(self, a, name=None):
        return self._add("sigmoid", (a,), a.shape, name)

    def tanh(self, a, name=None):
        return self._add("tanh", (a,), a.shape, name)

    def identity(self, a, name=None):
        return self._add("identity", (a,), a.shape, name)

    def leaky_relu(self, a, slope=0.2, name=None):
        return self._add("leaky_relu", (a,), a.shape, name, slope=float(slope))

    def softmax(self, a, name=None):
        """Row-wise, max-subtracted."""
        return self._add("softmax", (a,), a.shape, name)

    def mean_abs(self, a, name=None):
        return self._add("mean_abs", (a,), (1, 1), name)

    # -- evaluation ----------------------------------------------------
    def forward(self, inputs=None, outputs=None):
        """Evaluate every node. Returns the value of ``outputs`` (a node or a
        list of nodes), defaulting to the last node declared."""
        inputs = inputs or {}
        vals = [None] * len(self.nodes)
        for node in self.nodes:
            x = [vals[p.index] for p in node.inputs]
            op = node.op
            if op == "input":
                if node.name not in inputs:
                    raise GraphError(f"no value supplied for input node {node.name!r}")
                v = np.asarray(inputs[node.name], dtype=np.float64)
                if v.shape != node.shape:
                    raise GraphError(f"input node {node.name!r}: expected shape {node.shape}, got {v.shape}")
            elif op == "param":
                v = self.params[node.name]
            elif op == "const":
                v = node.attrs["value"]
            elif op == "matmul":
                v = x[0] @ x[1]
            elif op == "add":
                v = x[0] + x[1]
            elif op == "sub":
                v = x[0] - x[1]
            elif op == "mul":
                v = x[0] * x[1]
            elif op == "scale":
                v = x[0] * node.attrs["factor"]
            elif op == "concat":
                v = np.concatenate(x, axis=node.attrs["axis"])
            elif op == "transpose":
                v = x[0].T.copy()
            elif op == "slice_rows":
                v = x[0][node.attrs["start"]:node.attrs["stop"]].copy()
            elif op == "slice_cols":
                v = x[0][:, node.attrs["start"]:node.attrs["stop"]].copy()
            elif op == "sigmoid":
                v = _sigmoid(x[0])
            elif op == "tanh":
                v = np.tanh(x[0])
            elif op == "identity":
                v = x[0].copy()
            elif op == "leaky_relu":
                v = np.where(x[0] > 0.0, x[0], node.attrs["slope"] * x[0])
            elif op == "softmax":
                ex = np.exp(x[0] - x[0].max(axis=1, keepdims=True))
                v = ex / ex.sum(axis=1, keepdims=True)
            elif op == "mean_abs":
                v = np.array([[np.abs(x[0]).sum() / x[0].size]])
            else:  # pragma: no cover
                raise GraphError(f"unknown op {op!r}")
            vals[node.index] = v
        self._values = vals
        if outputs is None:
            return vals[-1]
        if isinstance(outputs, Node):
            return vals[outputs.index]
        return [vals[o.index] for o in outputs]

    def value(self, node):
        if self._values is None:
            raise StateError("graph has not been evaluated; call forward() first")
        return self._values[node.index]

    def backward(self, output=None, cotangent=None):
        """Gradients of ``output`` (default: last node) for every param and input node, by name."""
        if self._values is None:
            raise StateError("backward() called before forward()")
        output = output if output is not None else self.nodes[-1]
        vals = self._values
        if cotangent is None:
            if output.shape != (1, 1):
                raise ContractError(f"output {output.name!r} is not scalar; supply a cotangent")
            cotangent = np.ones((1, 1))
        grads = [None] * len(self.nodes)
        grads[output.index] = np.asarray(cotangent, dtype=np.float64).reshape(output.shape)

        def acc(node, g):
            if grads[node.index] is None:
                grads[node.index] = np.array(g, dtype=np.float64, copy=True)
            else:
                grads[node.index] += g

        for node in reversed(self.nodes[:output.index + 1]):
            g = grads[node.index]
            if g is None or not node.inputs:
                continue
            x = [vals[p.index] for p in node.inputs]
            y = vals[node.index]
            a = node.inputs[0]
            op = node.op
            if op == "matmul":
                acc(a, g @ x[1].T)
                acc(node.inputs[1], x[0].T @ g)
            elif op == "add":
                acc(a, g)
                b = node.inputs[1]
                acc(b, g if b.shape == node.shape else g.sum(axis=0, keepdims=True))
            elif op == "sub":
                acc(a, g)
                acc(node.inputs[1], -g)
            elif op == "mul":
                acc(a, g * x[1])
                acc(node.inputs[1], g * x[0])
            elif op == "scale":
                acc(a, g * node.attrs["factor"])
            elif op == "concat":
                axis = node.attrs["axis"]
                off = 0
                for p in node.inputs:
                    size = p.shape[axis]
                    acc(p, g[off:off + size] if axis == 0 else g[:, off:off + size])
                    off += size
            elif op == "transpose":
                acc(a, g.T)
            elif op == "slice_rows":
                full = np.zeros(a.shape)
                full[node.attrs["start"]:node.attrs["stop"]] = g
                acc(a, full)
            elif op == "slice_cols":
                full = np.zeros(a.shape)
                full[:, node.attrs["start"]:node.attrs["stop"]] = g
                acc(a, full)
            elif op == "sigmoid":
                acc(a, g * y * (1.0 - y))
            elif op == "tanh":
                acc(a, g * (1.0 - y * y))
            elif op == "identity":
                acc(a, g)
            elif op == "leaky_relu":
                acc(a, np.where(x[0] > 0.0, g, node.attrs["slope"] * g))
            elif op == "softmax":
                acc(a, y * (g - (g * y).sum(axis=1, keepdims=True)))
            elif op == "mean_abs":
                acc(a, g[0, 0] * np.sign(x[0]) / x[0].size)
            else:  # pragma: no cover
                raise GraphError(f"no backward rule for {op!r}")

        out = {}
        for node in self.nodes:
            if node.op in ("param", "input"):
                g = grads[node.index]
                out[node.name] = np.zeros(node.shape) if g is None else g
        return out
