"""Tensor and tape for reverse-mode differentiation.

A ``Tape`` is activated with ``with Tape() as tape:``; while active, every
op whose inputs require gradients appends one node. ``tape.backward(loss)``
walks the nodes in strict reverse insertion order, each exactly once.
Complex tensors are real tensors whose trailing dimension has size 2.
"""
import threading

import numpy as np

_state = threading.local()


def _stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape():
    s = _stack()
    return s[-1] if s else None


class AutodiffError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data.astype(
            np.float64, copy=False
        )
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._tape is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; definitions live in ops
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
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, 1.0 / float(other))
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __getitem__(self, key):
        from . import ops
        return ops.getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self, None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward", "op")

    def __init__(self, out, inputs, backward, op):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.op = op


class Tape:
    """Append-only record of differentiable operations. Single owner."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        s = _stack()
        if not s or s[-1] is not self:
            raise AutodiffError("tapes must be exited in LIFO order")
        s.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, backward, op):
        out._tape = self
        out._node = len(self.nodes)
        self.nodes.append(_Node(out, tuple(inputs), backward, op))
        return out

    def _propagate(self, loss, seed, keep=()):
        if not isinstance(loss, Tensor) or loss._tape is not self:
            raise AutodiffError("backward called on a tensor that is not recorded on this tape")
        if seed is None:
            if loss.data.size != 1:
                raise AutodiffError("backward without an explicit seed needs a scalar output")
            seed = np.ones_like(loss.data)
        grads = {id(loss): np.asarray(seed, dtype=np.float64)}
        keep_ids = {id(t) for t in keep}
        kept = {}
        leaves = {}
        for node in reversed(self.nodes[: loss._node + 1]):
            key = id(node.out)
            g = grads.get(key) if key in keep_ids else grads.pop(key, None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.data.shape:
                    raise AutodiffError(f"{node.op}: gradient shape {gi.shape} != input shape {t.data.shape}")
                tk = id(t)
                if t._tape is None:
                    leaves[tk] = (t, leaves[tk][1] + gi) if tk in leaves else (t, gi)
                else:
                    grads[tk] = grads[tk] + gi if tk in grads else gi
        for k in keep_ids:
            if k in grads:
                kept[k] = grads[k]
        return leaves, kept

    def backward(self, loss, seed=None):
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        leaves, _ = self._propagate(loss, seed)
        for t, g in leaves.values():
            t.grad = g if t.grad is None else t.grad + g

    def gradient(self, loss, tensors, seed=None):
        """Return gradients of ``loss`` with respect to ``tensors`` (zeros if unreachable)."""
        leaves, kept = self._propagate(loss, seed, keep=[t for t in tensors if t._tape is not None])
        out = []
        for t in tensors:
            g = leaves.get(id(t), (None, None))[1] if t._tape is None else kept.get(id(t))
            out.append(np.zeros_like(t.data) if g is None else g)
        return out
