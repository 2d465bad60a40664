"""A small reverse-mode automatic differentiation engine over numpy arrays.

Each ``Node`` holds a value, its parents and a closure that maps the upstream
gradient to one gradient per parent.  ``backward`` walks the graph in reverse
topological order.  Graphs are built only from existing nodes, so they are
acyclic by construction.
"""

from __future__ import annotations

from typing import Callable, Sequence

import math

import numpy as np


class Node:
    __slots__ = ("value", "grad", "parents", "vjp", "name")

    def __init__(self, value, parents: Sequence["Node"] = (), vjp: Callable | None = None, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.name or 'anon'}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__


def constant(value, name: str = "") -> Node:
    return Node(value, name=name)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def backward(loss: Node) -> None:
    """Populate ``.grad`` on every node reachable from the scalar ``loss``."""
    if loss.value.size != 1:
        raise ValueError("backward needs a scalar output")
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return Node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    return Node(a.value - b.value, (a, b), lambda g: (g, -g))


def scale(a: Node, c: float) -> Node:
    return Node(a.value * c, (a,), lambda g: (g * c,))


def affine(x: Node, W: Node, b: Node) -> Node:
    """``x @ W + b`` for a batch ``x`` of shape (n, fan_in)."""
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ValueError(f"affine: incompatible shapes {x.shape}, {W.shape}, {b.shape}")
    xv, Wv = x.value, W.value

    def vjp(g):
        return g @ Wv.T, xv.T @ g, g.sum(axis=0)

    return Node(xv @ Wv + b.value, (x, W, b), vjp)


def relu(x: Node) -> Node:
    # subgradient at exactly 0 is taken as 0
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return Node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Node) -> Node:
    v = x.value
    y = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    return Node(y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x: Node) -> Node:
    """Row-wise softmax over the last axis."""
    v = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(v)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Node(y, (x,), vjp)


def concat(nodes: Sequence[Node], axis: int = 1) -> Node:
    nodes = [_lift(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Node(np.concatenate([n.value for n in nodes], axis=axis), nodes, vjp)


def columns(x: Node, start: int, stop: int) -> Node:
    n_cols = x.shape[1]

    def vjp(g):
        full = np.zeros((g.shape[0], n_cols))
        full[:, start:stop] = g
        return (full,)

    return Node(x.value[:, start:stop], (x,), vjp)


def hermite_feature_layer(x: Node, basis) -> Node:
    """Elementwise Hermite features; output shape ``x.shape + (C+1,)``."""
    from .hermite import hp_features_with_grad

    phi, dphi = hp_features_with_grad(x.value, basis)
    return Node(phi, (x,), lambda g: ((g * dphi).sum(axis=-1),))


def feature_map_layer(x: Node, spec) -> Node:
    """Apply a feature map row-wise, backpropagating through ``spec.vjp``."""
    xv = x.value
    return Node(spec(xv), (x,), lambda g: (spec.vjp(xv, g),))


def mean_embedding_layer(H: Node, onehot: np.ndarray) -> Node:
    """``H^T Y / n``: the labeled mean embedding of a generated batch."""
    Y = np.asarray(onehot, dtype=np.float64)
    n = H.shape[0]
    if Y.shape[0] != n:
        raise ValueError("mean_embedding_layer: label rows and feature rows differ")
    return Node(H.value.T @ Y / n, (H,), lambda g: (Y @ g.T / n,))


def rff_embedding_layer(x: Node, spec, onehot: np.ndarray) -> Node:
    """Fused ``mean_embedding_layer(feature_map_layer(x, spec), onehot)`` for a
    random Fourier map.

    Works in the map's precision and never materialises the full
    ``n x A`` feature matrix, which dominates the cost for large ``A``.
    """
    dtype = np.float32 if spec.single else np.float64
    Y = np.asarray(onehot, dtype=dtype)
    n = x.shape[0]
    if Y.shape[0] != n:
        raise ValueError("rff_embedding_layer: label rows and feature rows differ")
    xv = x.value
    proj = (xv @ spec.omega.T).astype(dtype)
    cos, sin = np.cos(proj), np.sin(proj)
    c = math.sqrt(2.0 / spec.length) / n
    Yc = Y * dtype(c)
    value = np.concatenate([cos.T @ Yc, sin.T @ Yc]).astype(np.float64)
    half = spec.omega.shape[0]

    def back(g):
        g = np.asarray(g, dtype=dtype)
        gproj = (Yc @ g[half:].T) * cos
        gproj -= (Yc @ g[:half].T) * sin
        return (gproj.astype(np.float64) @ spec.omega,)

    return Node(value, (x,), back)


def frobenius_loss(a: Node, target) -> Node:
    """``||a - target||_F^2`` with ``target`` held constant."""
    t = np.asarray(target, dtype=np.float64)
    if a.shape != t.shape:
        raise ValueError(f"frobenius_loss: shape mismatch {a.shape} vs {t.shape}")
    diff = a.value - t
    return Node(np.sum(diff * diff), (a,), lambda g: (2.0 * g * diff,))


def sum_all(x: Node) -> Node:
    return Node(np.sum(x.value), (x,), lambda g: (np.full(x.shape, g),))


def square_norm(x: Node) -> Node:
    v = x.value
    return Node(np.sum(v * v), (x,), lambda g: (2.0 * g * v,))
