"""Minimal reverse-mode autodiff over numpy arrays.

Each differentiable op produces a ``Tensor`` that remembers its parents and a
closure mapping the output gradient to one gradient per parent. ``backward``
walks that record in reverse topological order and accumulates into the
``grad`` of leaf tensors (parameters). The record is released afterwards, so a
second ``backward`` over the same forward pass is a ``StateError``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import DataError, StateError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._spent = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"


class Parameter(Tensor):
    """A named model array with Adam moments.

    Non-trainable parameters (batch-norm moving statistics) carry zero-length
    moment buffers and are never touched by the optimizer.
    """

    __slots__ = ("trainable", "m", "v")

    def __init__(self, value, trainable: bool = True, name: str | None = None):
        super().__init__(value, requires_grad=trainable, name=name)
        self.trainable = trainable
        if trainable:
            self.m = np.zeros_like(self.data)
            self.v = np.zeros_like(self.data)
        else:
            self.m = np.zeros(0, dtype=self.data.dtype)
            self.v = np.zeros(0, dtype=self.data.dtype)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def astype(self, dtype) -> "Parameter":
        p = Parameter(self.data.astype(dtype), trainable=self.trainable, name=self.name)
        if self.trainable:
            p.m = self.m.astype(dtype)
            p.v = self.v.astype(dtype)
        return p


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording the graph edge only if a parent needs grad."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Back-propagate from ``loss`` into every reachable leaf's ``grad``.

    Leaf gradients accumulate across calls until the optimizer clears them.
    """
    if loss._spent:
        raise StateError("backward called twice on the same forward record")
    if loss._backward is None:
        raise StateError("backward called on a tensor with no recorded forward pass")
    if grad is None:
        if loss.data.size != 1:
            raise StateError("an explicit output gradient is required for non-scalar outputs")
        grad = np.ones_like(loss.data)
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        node._parents = ()
        node._backward = None
        node._spent = True


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise DataError(f"non-finite values in {what}")
    return t
