"""A small reverse-mode automatic differentiation engine over numpy arrays.

Only the operations needed by the tiny transformer, the constraint heads and
the continuous baseline are provided. The free functions (``exp``, ``tanh``,
``softmax``, ...) accept either plain ``ndarray`` values or :class:`Tensor`
nodes, which lets one model definition serve both the fast inference path
(no graph) and the training path (graph recorded).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A value in a computation graph.

    ``requires_grad`` leaves accumulate ``.grad`` after :meth:`backward`.
    Nodes whose parents do not require gradients record nothing.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return mul(other, power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Iterable, backward) -> Tensor:
    parents = tuple(_wrap(p) for p in parents)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _is_graph(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def _raw(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def value(x) -> np.ndarray:
    """Return the numeric payload of an array or tensor."""
    return _raw(x)


# elementwise -------------------------------------------------------------
def add(a, b):
    if not _is_graph(a, b):
        return _raw(a) + _raw(b)
    ad, bd = _raw(a), _raw(b)
    return _node(ad + bd, (a, b),
                 lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)))


def neg(a):
    if not _is_graph(a):
        return -_raw(a)
    return _node(-_raw(a), (a,), lambda g: (-g,))


def mul(a, b):
    if not _is_graph(a, b):
        return _raw(a) * _raw(b)
    ad, bd = _raw(a), _raw(b)
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def power(a, exponent: float):
    if not _is_graph(a):
        return _raw(a) ** exponent
    ad = _raw(a)
    return _node(ad ** exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1.0),))


def exp(a):
    if not _is_graph(a):
        return np.exp(_raw(a))
    out = np.exp(_raw(a))
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    if not _is_graph(a):
        return np.log(_raw(a))
    ad = _raw(a)
    return _node(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a):
    if not _is_graph(a):
        return np.tanh(_raw(a))
    out = np.tanh(_raw(a))
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sqrt(a):
    return power(a, 0.5)


def gelu(a):
    """Tanh approximation of GELU, composed from differentiable primitives."""
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * a * (1.0 + tanh(c * (a + 0.044715 * a * a * a)))


# reductions and shape ----------------------------------------------------
def tsum(a, axis=None, keepdims: bool = False):
    if not _is_graph(a):
        return np.sum(_raw(a), axis=axis, keepdims=keepdims)
    ad = _raw(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ad.shape).copy(),)

    return _node(np.sum(ad, axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims: bool = False):
    ad = _raw(a)
    count = ad.size if axis is None else np.prod([ad.shape[x] for x in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape):
    if not _is_graph(a):
        return np.reshape(_raw(a), shape)
    ad = _raw(a)
    return _node(ad.reshape(shape), (a,), lambda g: (g.reshape(ad.shape),))


def transpose(a, axes=None):
    if not _is_graph(a):
        return np.transpose(_raw(a), axes)
    inverse = None if axes is None else np.argsort(axes)
    return _node(np.transpose(_raw(a), axes), (a,), lambda g: (np.transpose(g, inverse),))


def swapaxes(a, i: int, j: int):
    if not _is_graph(a):
        return np.swapaxes(_raw(a), i, j)
    return _node(np.swapaxes(_raw(a), i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a, index):
    if not _is_graph(a):
        return _raw(a)[index]
    ad = _raw(a)

    def back(g):
        full = np.zeros_like(ad)
        np.add.at(full, index, g)
        return (full,)

    return _node(ad[index], (a,), back)


def concat(parts: Sequence, axis: int = 0):
    if not _is_graph(*parts):
        return np.concatenate([_raw(p) for p in parts], axis=axis)
    datas = [_raw(p) for p in parts]
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate(datas, axis=axis), parts, back)


def matmul(a, b):
    if not _is_graph(a, b):
        return _raw(a) @ _raw(b)
    ad, bd = _raw(a), _raw(b)

    def back(g):
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if ad.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + ga.shape[-1:])
        if bd.ndim == 1:
            gb = gb[..., 0]
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _node(ad @ bd, (a, b), back)


# softmax family ----------------------------------------------------------
def softmax(a, axis: int = -1):
    ad = _raw(a)
    z = np.exp(ad - ad.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)
    if not _is_graph(a):
        return out
    return _node(out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis: int = -1):
    ad = _raw(a)
    z = ad - ad.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    if not _is_graph(a):
        return out
    probs = np.exp(out)
    return _node(out, (a,),
                 lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def logsumexp(a, axis: int = -1, keepdims: bool = False):
    ad = _raw(a)
    m = ad.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(ad - m).sum(axis=axis, keepdims=True))
    out = lse if keepdims else np.squeeze(lse, axis=axis)
    if not _is_graph(a):
        return out
    weights = np.exp(ad - lse)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return _node(out, (a,), back)


def layer_norm(x, gain, bias, eps: float = 1e-5):
    mu = mean(x, axis=-1, keepdims=True)
    centred = x - mu
    var = mean(centred * centred, axis=-1, keepdims=True)
    return centred * power(var + eps, -0.5) * gain + bias


def cross_entropy(logits, targets: np.ndarray, weights: np.ndarray):
    """Weighted mean negative log-likelihood of integer ``targets``.

    ``logits`` has shape (..., V); ``weights`` matches ``targets`` and masks
    padding with zeros.
    """
    lp = log_softmax(logits, axis=-1)
    picked = take_along_last(lp, targets)
    total = float(np.sum(weights))
    return neg(tsum(picked * weights)) * (1.0 / total)


def take_along_last(a, idx: np.ndarray):
    idx = np.asarray(idx)
    ad = _raw(a)
    out = np.take_along_axis(ad, idx[..., None], axis=-1)[..., 0]
    if not _is_graph(a):
        return out

    def back(g):
        full = np.zeros_like(ad)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return (full,)

    return _node(out, (a,), back)


def straight_through_onehot(z):
    """Hard one-hot of ``argmax(z)`` forward, softmax Jacobian backward."""
    zd = _raw(z)
    hard = np.zeros_like(zd)
    np.put_along_axis(hard, np.argmax(zd, axis=-1)[..., None], 1.0, axis=-1)
    if not _is_graph(z):
        return hard
    soft = softmax(z, axis=-1)
    return soft + Tensor(hard - soft.data)
