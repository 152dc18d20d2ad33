"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. The graph reachable
from a scalar loss is the tape; :func:`backward` sweeps it once in reverse
topological order. No broadcasting: binary operands must have equal shapes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DomainError, NonFiniteError, ShapeError

LOG_FLOOR = 1e-12


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    out._consumed = False
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = grad_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")


def powi(a: Tensor, k: int) -> Tensor:
    """Entrywise integer power ``a**k`` for ``k >= 1``."""
    if int(k) != k or k < 1:
        raise DomainError(f"powi needs a positive integer exponent, got {k}")
    k = int(k)
    ad = a.data
    return _result(ad**k, (a,), lambda g: (k * ad ** (k - 1) * g,), f"pow{k}")


def abs_(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.abs(ad), (a,), lambda g: (np.sign(ad) * g,), "abs")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), lambda g: (out * g,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    if np.any(ad <= 0):
        raise DomainError("log of a non-positive value")
    return _result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def log_guarded(a: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """``log(max(a, floor))``; the gradient is zero where the floor is active."""
    ad = a.data
    clipped = np.maximum(ad, floor)
    active = ad > floor
    return _result(np.log(clipped), (a,), lambda g: (np.where(active, g / clipped, 0.0),), "log_guarded")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _result(s, (a,), lambda g: (s * (1.0 - s) * g,), "sigmoid")


def relu(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.maximum(ad, 0.0), (a,), lambda g: (np.where(ad > 0, g, 0.0),), "relu")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def shift(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data + c, (a,), lambda g: (g,), "shift")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "square": square,
    "abs": abs_,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
}


def elementwise(op: str, *args: Tensor) -> Tensor:
    """Dispatch one of the named entrywise primitives."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise DomainError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*args)


# ---------------------------------------------------------------- structural

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of the {a.data.ndim} axes")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return _result(out, (a,), lambda g: (np.transpose(g, inverse),), "permute")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}")
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def sum_(a: Tensor) -> Tensor:
    src = a.shape
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.full(src, float(g)),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.size
    src = a.shape
    return _result(np.array(a.data.sum() / n), (a,), lambda g: (np.full(src, float(g) / n),), "mean")


def total(terms: Sequence[Tensor]) -> Tensor:
    """Sum of a non-empty list of scalar tensors."""
    if not terms:
        raise ContractError("total() of an empty list")
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    return acc


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy needs B x K logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, k = logits.shape
    if labels.shape[0] != b:
        raise ShapeError(f"{labels.shape[0]} labels for {b} logit rows")
    if np.any(labels < 0) or np.any(labels >= k):
        raise IndexError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = float(np.mean(lse - z[rows, labels]))

    def grad_fn(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (float(g) / b),)

    return _result(np.array(loss), (logits,), grad_fn, "softmax_xent")


# ---------------------------------------------------------------- backward

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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    A given loss may be swept only once; a second call raises ContractError.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("backward() needs a scalar tensor")
    if loss._consumed:
        raise ContractError("backward() already ran on this loss; rebuild the forward pass")
    loss._consumed = True
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------- checking

def grad_check(f: Callable, x: Tensor | Sequence[Tensor], eps: float = 1e-5) -> float:
    """Largest ``|autodiff - central FD| / max(1, |autodiff|)`` over all entries.

    ``f`` is called as ``f(x)`` and must return a scalar tensor; ``x`` may be a
    single tensor or a list of tensors, perturbed in place and restored.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    params = [x] if isinstance(x, Tensor) else list(x)
    saved_flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = True
        p.grad = None
    try:
        loss = f(x)
        backward(loss)
        worst = 0.0
        for p in params:
            ad = np.zeros(p.shape) if p.grad is None else p.grad
            flat = p.data.reshape(-1)
            ad_flat = ad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = f(x).item()
                flat[i] = orig - eps
                down = f(x).item()
                flat[i] = orig
                fd = (up - down) / (2.0 * eps)
                err = abs(ad_flat[i] - fd) / max(1.0, abs(ad_flat[i]))
                worst = max(worst, err)
    finally:
        for p, flag in zip(params, saved_flags):
            p.requires_grad = flag
            p.grad = None
    return worst
