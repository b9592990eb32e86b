"""Reverse-mode automatic differentiation over dense float64 arrays.

Implements exactly the primitives needed to backpropagate a scalar rollout
loss through the traffic model and the control policies: broadcast
arithmetic, 2-D matmul, reductions, sigmoid / (masked) softmax, the
SoftExponential nonlinearity, guarded division and clamping.  Everything is
double precision; NaN/Inf detection runs at every operation boundary.

The graph built during the forward pass doubles as the tape: every operation
records its parents and a gradient closure, and creation order is a valid
topological order.  ``backward`` visits each reachable node exactly once and
returns a gradient map over trainable leaves.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf values."""


_finite_checks = True


def set_finite_checks(enabled: bool) -> bool:
    """Enable/disable NaN/Inf detection at op boundaries; returns previous value."""
    global _finite_checks
    previous = _finite_checks
    _finite_checks = bool(enabled)
    return previous


class Tensor:
    """A node in the computation graph: a float64 array plus provenance.

    Leaves are created directly (``requires_grad=True`` marks them trainable);
    every other tensor is produced by one of the module-level primitives and
    keeps references to its parents and a closure computing parent gradients
    from its own output gradient.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._grad_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __truediv__(self, s):
        if isinstance(s, Tensor) or not np.isscalar(s):
            raise TypeError("only scalar division is supported; use guarded_div")
        return mul(self, 1.0 / float(s))

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    """Coerce arrays and scalars to constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(data: np.ndarray, parents: tuple, grad_fn, op: str) -> Tensor:
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._grad_fn = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def toposort(root: Tensor) -> list:
    """Nodes reachable from `root`, every node after all of its parents."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict:
    """Backpropagate from a scalar loss; returns {leaf tensor: gradient array}.

    Only leaves marked ``requires_grad`` appear in the result.  The reduction
    order is fixed by graph construction, so gradients are bitwise
    reproducible for an identical tape.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    order = toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            if node.requires_grad:
                if node in leaf_grads:
                    leaf_grads[node] = leaf_grads[node] + g
                else:
                    leaf_grads[node] = g
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return leaf_grads


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def grad_fn(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), grad_fn, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        return (-g,)

    return _make(-a.data, (a,), grad_fn, "neg")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _make(data, (a, b), grad_fn, "matmul")


def power(x, p) -> Tensor:
    """Elementwise x**p for a constant scalar exponent."""
    x = as_tensor(x)
    p = float(p)
    data = x.data ** p

    def grad_fn(g):
        return (g * p * x.data ** (p - 1.0),)

    return _make(data, (x,), grad_fn, "power")


def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _make(data, (x,), grad_fn, "sum")


def l1_norm(x) -> Tensor:
    """Sum of absolute values, reduced to a scalar."""
    x = as_tensor(x)
    data = np.abs(x.data).sum()

    def grad_fn(g):
        return (g * np.sign(x.data),)

    return _make(np.asarray(data), (x,), grad_fn, "l1_norm")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign to avoid exp overflow
    z = x.data
    data = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def grad_fn(g):
        return (g * data * (1.0 - data),)

    return _make(data, (x,), grad_fn, "sigmoid")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _make(data, (x,), grad_fn, "softmax")


def masked_softmax(x, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over entries where `mask` is nonzero; masked entries are exactly 0.

    Masked entries are excluded from the normalization (not merely zeroed
    before it), so unmasked entries along `axis` always sum to 1.  Rows whose
    mask is all zero produce all-zero output.
    """
    x = as_tensor(x)
    valid = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
    neg_inf = np.where(valid, x.data, -np.inf)
    rowmax = neg_inf.max(axis=axis, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(neg_inf - rowmax)
    denom = e.sum(axis=axis, keepdims=True)
    data = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def grad_fn(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _make(data, (x,), grad_fn, "masked_softmax")


def soft_exponential(alpha, x) -> Tensor:
    """SoftExponential activation, differentiable in both alpha and x.

    alpha < 0: -ln(1 - alpha*(x + alpha)) / alpha
    alpha = 0: x
    alpha > 0: (exp(alpha*x) - 1) / alpha + alpha

    alpha is a scalar (tensor or float); the alpha < 0 branch requires
    1 - alpha*(x + alpha) > 0.
    """
    alpha = as_tensor(alpha)
    x = as_tensor(x)
    if alpha.data.size != 1:
        raise ValueError("soft_exponential alpha must be a scalar")
    a = float(alpha.data)

    if a == 0.0:
        data = x.data.copy()

        def grad_fn(g):
            ga = (g * (1.0 + 0.5 * x.data ** 2)).sum()
            return np.asarray(ga).reshape(alpha.data.shape), g

    elif a > 0.0:
        eax = np.exp(a * x.data)
        data = np.expm1(a * x.data) / a + a

        def grad_fn(g):
            dx = g * eax
            da = (g * ((a * x.data * eax - np.expm1(a * x.data)) / a ** 2 + 1.0)).sum()
            return np.asarray(da).reshape(alpha.data.shape), dx

    else:
        u = 1.0 - a * (x.data + a)
        if np.any(u <= 0):
            raise ValueError("soft_exponential domain violation: 1 - alpha*(x + alpha) <= 0")
        data = -np.log(u) / a

        def grad_fn(g):
            dx = g / u
            da = (g * ((x.data + 2.0 * a) / (a * u) + np.log(u) / a ** 2)).sum()
            return np.asarray(da).reshape(alpha.data.shape), dx

    return _make(data, (alpha, x), grad_fn, "soft_exponential")


def soft_exponential_guarded(alpha, x, exp_cap: float = 60.0,
                             log_floor: float = 1e-6) -> Tensor:
    """SoftExponential with saturation guards for use inside networks.

    Identical to ``soft_exponential`` while alpha*x stays below `exp_cap`
    and the log argument above `log_floor`; beyond those the output
    saturates with zero slope, keeping deep compositions finite for any
    weight assignment instead of raising.
    """
    alpha = as_tensor(alpha)
    x = as_tensor(x)
    if alpha.data.size != 1:
        raise ValueError("soft_exponential alpha must be a scalar")
    a = float(alpha.data)

    if a == 0.0:
        data = x.data.copy()

        def grad_fn(g):
            ga = (g * (1.0 + 0.5 * x.data ** 2)).sum()
            return np.asarray(ga).reshape(alpha.data.shape), g

    elif a > 0.0:
        arg = np.minimum(a * x.data, exp_cap)
        capped = a * x.data >= exp_cap
        eax = np.exp(arg)
        data = np.expm1(arg) / a + a

        def grad_fn(g):
            dx = np.where(capped, 0.0, g * eax)
            da = (g * np.where(capped, 1.0,
                               (arg * eax - np.expm1(arg)) / a ** 2 + 1.0)).sum()
            return np.asarray(da).reshape(alpha.data.shape), dx

    else:
        u_raw = 1.0 - a * (x.data + a)
        floored = u_raw <= log_floor
        u = np.maximum(u_raw, log_floor)
        data = -np.log(u) / a

        def grad_fn(g):
            dx = np.where(floored, 0.0, g / u)
            da = (g * np.where(floored, 0.0,
                               (x.data + 2.0 * a) / (a * u) + np.log(u) / a ** 2)).sum()
            return np.asarray(da).reshape(alpha.data.shape), dx

    return _make(data, (alpha, x), grad_fn, "soft_exponential_guarded")


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient flows to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    data = np.maximum(a.data, b.data)

    def grad_fn(g):
        take_a = a.data >= b.data
        return (_unbroadcast(g * take_a, a.data.shape),
                _unbroadcast(g * ~take_a, b.data.shape))

    return _make(data, (a, b), grad_fn, "maximum")


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient flows to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    data = np.minimum(a.data, b.data)

    def grad_fn(g):
        take_a = a.data <= b.data
        return (_unbroadcast(g * take_a, a.data.shape),
                _unbroadcast(g * ~take_a, b.data.shape))

    return _make(data, (a, b), grad_fn, "minimum")


def clamp_min(x, lo: float) -> Tensor:
    return maximum(x, Tensor(np.float64(lo)))


def guarded_div(num, den, eps: float = 1e-9) -> Tensor:
    """num/den where den > eps, exactly 0 (with zero gradient) elsewhere.

    Used for the x_ij/x_i occupancy ratio: an empty region emits no flow and
    contributes no gradient.
    """
    num, den = as_tensor(num), as_tensor(den)
    safe = den.data > eps
    den_safe = np.where(safe, den.data, 1.0)
    data = np.where(safe, num.data / den_safe, 0.0)

    def grad_fn(g):
        gn = np.where(safe, g / den_safe, 0.0)
        gd = np.where(safe, -g * num.data / (den_safe * den_safe), 0.0)
        return _unbroadcast(gn, num.data.shape), _unbroadcast(gd, den.data.shape)

    return _make(data, (num, den), grad_fn, "guarded_div")


def masked_select(x, mask: np.ndarray) -> Tensor:
    """Zero out entries where `mask` is 0 (mask is a constant array)."""
    x = as_tensor(x)
    m = np.asarray(mask, dtype=np.float64)
    data = x.data * m

    def grad_fn(g):
        return (g * m,)

    return _make(data, (x,), grad_fn, "masked_select")


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), grad_fn, "concatenate")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.data.shape),)

    return _make(data, (x,), grad_fn, "reshape")


def expand_dims(x, axis: int) -> Tensor:
    x = as_tensor(x)
    data = np.expand_dims(x.data, axis)

    def grad_fn(g):
        return (g.reshape(x.data.shape),)

    return _make(data, (x,), grad_fn, "expand_dims")
