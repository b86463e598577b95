"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation on a :class:`Tensor` that involves an input with
``requires_grad=True`` records a node holding its parents and a local
backward rule. :func:`backward` orders those nodes topologically (the tape)
and propagates gradients from a scalar loss back to every node.

There is no module-level state: a graph lives exactly as long as the tensors
that reference it, so independent training runs never interact.
"""

import numpy as np

EPS_NORM = 1e-12


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise ValueError(f"tensor dimensions must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, rule, op):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        out = Tensor(data, True, parents, rule, op)
        out.grad = None
        return out
    return Tensor(data, op=op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# -- elementwise binary ------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), rule, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), rule, "sub")


def mul(a, b):
    """Elementwise product; a python scalar operand gives scalar multiplication."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), rule, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def rule(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), rule, "div")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), rule, "matmul")


def gram(a, b=None):
    """Pairwise inner products of row vectors, ``a @ b.T`` (``b`` defaults to ``a``)."""
    a = as_tensor(a)
    if b is None:
        if a.ndim != 2:
            raise ValueError(f"gram: expected a 2-d batch, got shape {a.shape}")

        def rule(g):
            return ((g + g.T) @ a.data,)

        return _make(a.data @ a.data.T, (a,), rule, "gram")
    return matmul(a, transpose(as_tensor(b)))


# -- unary -------------------------------------------------------------------

def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def rule(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), rule, "relu")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def rule(g):
        return (g * out,)

    return _make(out, (a,), rule, "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log: input has non-positive entries")

    def rule(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), rule, "log")


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt: input has negative entries")
    out = np.sqrt(a.data)

    def rule(g):
        return (g / (2.0 * out),)

    return _make(out, (a,), rule, "sqrt")


def transpose(a):
    a = as_tensor(a)

    def rule(g):
        return (g.T,)

    return _make(a.data.T, (a,), rule, "transpose")


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def rule(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), rule, "reshape")


def take(a, index):
    """Basic or integer-array indexing; gradient scatters back with ``np.add.at``."""
    a = as_tensor(a)
    out = a.data[index]

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), rule, "take")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, rule, "concat")


# -- reductions --------------------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def rule(g):
        return (np.array(_expand(g, a.shape, axis, keepdims)),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), rule, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def rule(g):
        return (_expand(g, a.shape, axis, keepdims) / n,)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), rule, "mean")


def logsumexp(a, axis=None, keepdims=False):
    """Shift-stabilized ``log(sum(exp(a)))``."""
    a = as_tensor(a)
    shift = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - shift)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.log(total) + shift
    soft = shifted / total
    if not keepdims:
        out = out.squeeze() if axis is None else np.squeeze(out, axis=axis)

    def rule(g):
        return (_expand(g, a.shape, axis, keepdims) * soft,)

    return _make(out, (a,), rule, "logsumexp")


def l2_normalize(v, eps=EPS_NORM):
    """Row-wise projection onto the unit sphere.

    The backward rule applies the Jacobian ``(I - u u^T) / ||v||`` per row.
    Rows with norm at or below ``eps`` are rejected rather than clamped.
    """
    v = as_tensor(v)
    norms = np.linalg.norm(v.data, axis=-1, keepdims=True)
    if np.any(norms <= eps):
        raise ValueError(f"l2_normalize: row norm below {eps:g}")
    u = v.data / norms

    def rule(g):
        return ((g - u * np.sum(g * u, axis=-1, keepdims=True)) / norms,)

    return _make(u, (v,), rule, "l2_normalize")


# -- reverse pass ------------------------------------------------------------

def tape(root):
    """Nodes reachable from ``root`` that need gradients, inputs before outputs."""
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    loss = as_tensor(loss)
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any tensor requiring grad")
    nodes = tape(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = node.grad + g if node.grad is not None else g.copy()
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + pg if key in pending else pg


def grad_check(f, x, h=1e-5):
    """Largest relative disagreement between analytic and central-difference gradients.

    ``x`` is a Tensor or a sequence of Tensors; they are perturbed in place and
    ``f(x)`` must rebuild the scalar loss from them on every call. The error per
    coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    loss = f(x)
    if not np.all(np.isfinite(loss.data)):
        raise ValueError("grad_check: loss is not finite")
    backward(loss)
    worst = 0.0
    for t in xs:
        analytic = t.grad.copy()
        if not np.all(np.isfinite(analytic)):
            raise ValueError("grad_check: analytic gradient is not finite")
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data)
            flat[i] = orig - h
            fm = float(f(x).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError("grad_check: loss is not finite under perturbation")
            numeric = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
