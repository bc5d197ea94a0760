"""A small reverse-mode tape over numpy arrays.

Only the handful of operations the training losses need are provided.
Broadcasting follows numpy; gradients are summed back to the operand shape.
"""

import numpy as np


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn")
    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # arithmetic
    def __add__(self, other):
        other = lift(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Var(a.value + b.value, (a, b), back)

    __radd__ = __add__

    def __sub__(self, other):
        other = lift(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Var(a.value - b.value, (a, b), back)

    def __rsub__(self, other):
        return lift(other) - self

    def __mul__(self, other):
        other = lift(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

        return Var(a.value * b.value, (a, b), back)

    __rmul__ = __mul__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        other = lift(other)
        a, b = self, other

        def back(g):
            av, bv = a.value, b.value
            if bv.ndim == 1:
                axes = list(range(g.ndim))
                return np.multiply.outer(g, bv), np.tensordot(g, av, axes=(axes, axes))
            if av.ndim == 1:
                return g @ bv.T, np.multiply.outer(av, g)
            return g @ bv.T, av.T @ g

        return Var(a.value @ b.value, (a, b), back)

    def __rmatmul__(self, other):
        return lift(other) @ self

    def __getitem__(self, idx):
        a = self

        def back(g):
            out = np.zeros_like(a.value)
            out[idx] = g
            return (out,)

        return Var(a.value[idx], (a,), back)

    def __pow__(self, p):
        p = int(p)
        a = self

        def back(g):
            return (g * p * a.value ** (p - 1),)

        return Var(a.value ** p, (a,), back)

    @property
    def T(self):
        return Var(self.value.T, (self,), lambda g: (g.T,))

    def tanh(self):
        out = np.tanh(self.value)
        return Var(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sum(self, axis=None):
        a = self

        def back(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

        return Var(a.value.sum(axis=axis), (a,), back)

    def mean(self):
        return self.sum() * (1.0 / self.value.size)


def lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def backward(root: Var):
    """Accumulate d(root)/d(node) into ``node.grad`` for every node on the tape."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            parent.grad = g if parent.grad is None else parent.grad + g
