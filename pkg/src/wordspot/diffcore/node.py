"""Graph nodes and the reverse-mode sweep."""

from __future__ import annotations

import numpy as np


class Node:
    """A value in the computation graph.

    ``grad`` stays ``None`` until a backward pass reaches the node.  Leaf
    parameters keep accumulating into ``grad`` across backward passes, which
    is what per-sample gradient averaging relies on; call ``zero_grad`` to
    reset.
    """

    __slots__ = ("value", "grad", "op", "inputs", "requires_grad", "name", "_backward")

    def __init__(self, value, inputs=(), op="", requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.op = op
        self.inputs = tuple(inputs)
        self.requires_grad = requires_grad
        self.name = name
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        backward(self, grad)

    def __repr__(self):
        label = self.name or self.op or "leaf"
        return f"Node({label}, shape={self.shape})"


def parameter(value, name=None) -> Node:
    return Node(value, requires_grad=True, name=name)


def constant(value) -> Node:
    return Node(value)


def make_node(value, inputs, op, backward_fn) -> Node:
    """Wrap an op result; ``backward_fn(g)`` returns one gradient per input."""
    out = Node(value, inputs, op)
    if any(n.requires_grad for n in inputs):
        out.requires_grad = True
        out._backward = backward_fn
    return out


def _topological(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Node, grad=None) -> None:
    if not root.requires_grad:
        return
    seed = np.ones_like(root.value) if grad is None else np.asarray(grad, dtype=np.float64)
    root.grad = seed if root.grad is None else root.grad + seed
    for node in reversed(_topological(root)):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.inputs, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
        # interior gradients are no longer needed once propagated
        node.grad = None
