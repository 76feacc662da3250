"""Dense tensors with tape-based reverse-mode differentiation.

Operations are only recorded while a :class:`GradTape` is active and at least
one input requires a gradient; outside a tape every op is a plain numpy call.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

_TAPES: list["GradTape"] = []


class Tensor:
    """An immutable dense array with an optional gradient requirement."""

    __slots__ = ("data", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None and not isinstance(data, (np.ndarray, np.generic)):
            dtype = DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; the real work lives in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported")
        return ops.scale(self, 1.0 / other)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        return ops.transpose(self, axes)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class _Node:
    __slots__ = ("out", "parents", "backward", "tape")

    def __init__(self, out, parents, backward, tape):
        self.tape = tape
        self.out = out
        self.parents = parents
        self.backward = backward


class GradTape:
    """Records differentiable ops in execution order.

    Usage::

        with GradTape() as tape:
            loss = f(params)
        grads = tape.gradient(loss, params)
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def gradient(self, loss, params=None):
        """Backpropagate from a scalar ``loss``.

        Returns a dict keyed by leaf tensor. With ``params`` given, exactly
        those trainable tensors are returned (zeros for ones the loss does not
        reach); otherwise every reached trainable leaf is returned.
        """
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {getattr(loss, 'shape', None)}")
        if loss._node is None or not loss.requires_grad:
            raise ValueError("loss was not recorded on a tape (no trainable inputs?)")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if parent._node is None:
                    leaves[key] = parent
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg
        out = {}
        if params is None:
            for key, leaf in leaves.items():
                out[leaf] = grads[key]
            return out
        for p in params:
            if not p.requires_grad:
                raise ValueError(f"parameter {p.name!r} is frozen and has no gradient")
            g = grads.get(id(p))
            out[p] = np.zeros_like(p.data) if g is None else g
        return out


def active_tape():
    return _TAPES[-1] if _TAPES else None


def record(out_data, parents, backward):
    """Wrap ``out_data`` and, if any parent needs a gradient, log the op."""
    tape = active_tape()
    out = Tensor(out_data)
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        node = _Node(out, parents, backward, tape)
        out._node = node
        tape.nodes.append(node)
    return out


def backward(loss, params=None):
    """Gradients of ``loss`` on the tape it was recorded on."""
    node = getattr(loss, "_node", None)
    if node is None:
        raise ValueError("loss was not recorded on a tape (no trainable inputs?)")
    return node.tape.gradient(loss, params)
