"""Reverse-mode differentiation over numpy arrays.

A :class:`Var` wraps an array and, when recorded, a closure mapping its
upstream gradient to gradients of its parents.  Graphs are built eagerly by
the operations in :mod:`eadnet.functional`; ``Var.backward`` walks them in
reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Var:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Var, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a value with no recorded graph; run the forward pass with grad enabled")
        if grad is None:
            if self.value.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.value)
        grad = np.asarray(grad, dtype=self.value.dtype)
        if grad.shape != self.value.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != output shape {self.value.shape}")

        order = _topo_order(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                _accumulate_leaf(node, g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.value.shape:
                    raise ValueError(f"gradient shape {pg.shape} does not match value shape {parent.value.shape}")
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def _accumulate_leaf(node: Var, g) -> None:
    if node.grad is None:
        node.grad = np.array(g, dtype=node.value.dtype)
    elif node.grad.shape != g.shape:
        raise ValueError(f"accumulated gradient {g.shape} does not match stored {node.grad.shape}")
    else:
        node.grad += g


def _topo_order(root: Var) -> list[Var]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def record(value, parents: Sequence[Var], backward: Callable) -> Var:
    """Wrap an op result, attaching ``backward`` if any parent needs a gradient."""
    out = Var(value)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


class Param(Var):
    """A named leaf owned by a :class:`ParamStore`; ``grad`` always matches ``value``."""

    __slots__ = ("trainable",)

    def __init__(self, name: str, value, trainable: bool = True):
        super().__init__(np.array(value, dtype=np.float32), requires_grad=trainable, name=name)
        self.trainable = trainable
        self.grad = np.zeros_like(self.value)

    def assign(self, value) -> None:
        value = np.asarray(value, dtype=self.value.dtype)
        if value.shape != self.value.shape:
            raise ValueError(f"{self.name}: cannot assign shape {value.shape} to parameter of shape {self.value.shape}")
        self.value = value


class ParamStore:
    """Ordered, uniquely named collection of parameters and buffers."""

    def __init__(self):
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value, trainable: bool = True) -> Param:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Param(name, value, trainable)
        self._entries[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[Param]:
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def trainable(self) -> list[Param]:
        return [p for p in self if p.trainable]

    def zero_grad(self) -> None:
        for p in self:
            p.grad = np.zeros_like(p.value)

    def count(self, predicate=None) -> int:
        return sum(p.value.size for p in self if predicate is None or predicate(p))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self._entries.items()}

    def to(self, dtype) -> "ParamStore":
        """Copy with every value cast to ``dtype`` (the gradient checker uses float64)."""
        out = ParamStore()
        for p in self:
            q = out.add(p.name, p.value, p.trainable)
            q.value = p.value.astype(dtype)
            q.grad = np.zeros_like(q.value)
        return out
