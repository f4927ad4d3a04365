"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is implicit: every op returns a new Tensor holding references to
its inputs and a closure that accumulates gradients into them.  Calling
``backward()`` on a scalar loss topologically sorts the graph and runs the
closures in reverse order.  Gradients of parameter leaves accumulate across
repeated backward calls until ``zero_grad`` is invoked.

Everything is float64 and single-threaded per graph; independent graphs may
run in parallel since there is no shared mutable state.
"""

import itertools

import numpy as np

# Added under the variance before the square root so channel statistics stay
# differentiable on constant channels.
EPS_STAT = 1e-6


class ShapeError(ValueError):
    """Operand shapes violate an op's dimension contract."""


class DomainError(ValueError):
    """Operand values outside an op's numeric domain (log/sqrt of <= 0, ...)."""


class ContractError(ValueError):
    """An op precondition other than shape/domain was violated."""


_node_ids = itertools.count()


class Tensor:
    """A dense float64 array participating in a differentiation graph."""

    __slots__ = ("data", "_grad", "node_id", "_children", "_backward")

    def __init__(self, data, _children=()):
        self.data = np.asarray(data, dtype=np.float64)
        self._grad = None  # allocated lazily on first access
        self.node_id = next(_node_ids)
        self._children = tuple(_children)
        self._backward = None

    @property
    def grad(self):
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self._grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be scalar (size 1).  Each node is visited exactly once;
        leaves not reachable from ``self`` are untouched (their gradient
        buffers stay zero).
        """
        if self.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        self.grad += np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # operator sugar -------------------------------------------------------

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

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], (self,))

        def _bw():
            self.grad[idx] += out.grad

        out._backward = _bw
        return out

    def __repr__(self):
        return f"Tensor(shape={self.shape}, id={self.node_id})"


def _topo_order(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for child in node._children:
            if id(child) not in visited:
                stack.append((child, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# elementwise ---------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))

    def _bw():
        a.grad += _unbroadcast(out.grad, a.shape)
        b.grad += _unbroadcast(out.grad, b.shape)

    out._backward = _bw
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, (a, b))

    def _bw():
        a.grad += _unbroadcast(out.grad, a.shape)
        b.grad -= _unbroadcast(out.grad, b.shape)

    out._backward = _bw
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))

    def _bw():
        a.grad += _unbroadcast(out.grad * b.data, a.shape)
        b.grad += _unbroadcast(out.grad * a.data, b.shape)

    out._backward = _bw
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, (a, b))

    def _bw():
        a.grad += _unbroadcast(out.grad / b.data, a.shape)
        b.grad -= _unbroadcast(out.grad * a.data / (b.data * b.data), b.shape)

    out._backward = _bw
    return out


def relu(a):
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), (a,))
    mask = a.data > 0  # subgradient at exactly 0 is 0

    def _bw():
        a.grad += out.grad * mask

    out._backward = _bw
    return out


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    val = np.empty_like(x)
    pos = x >= 0
    val[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    val[~pos] = ex / (1.0 + ex)
    out = Tensor(val, (a,))

    def _bw():
        a.grad += out.grad * val * (1.0 - val)

    out._backward = _bw
    return out


def exp(a):
    a = as_tensor(a)
    out = Tensor(np.exp(a.data), (a,))

    def _bw():
        a.grad += out.grad * out.data

    out._backward = _bw
    return out


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive inputs")
    out = Tensor(np.log(a.data), (a,))

    def _bw():
        a.grad += out.grad / a.data

    out._backward = _bw
    return out


def square(a):
    a = as_tensor(a)
    out = Tensor(a.data * a.data, (a,))

    def _bw():
        a.grad += out.grad * 2.0 * a.data

    out._backward = _bw
    return out


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("sqrt requires strictly positive inputs")
    out = Tensor(np.sqrt(a.data), (a,))

    def _bw():
        a.grad += out.grad * 0.5 / out.data

    out._backward = _bw
    return out


def clamp_min(a, floor):
    """max(a, floor) elementwise; gradient passes only where a > floor."""
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, floor), (a,))
    mask = a.data > floor

    def _bw():
        a.grad += out.grad * mask

    out._backward = _bw
    return out


def clip01(a):
    """min(1, max(0, a)); gradient passes on [0, 1], zero outside."""
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, 0.0, 1.0), (a,))
    mask = (a.data >= 0.0) & (a.data <= 1.0)

    def _bw():
        a.grad += out.grad * mask

    out._backward = _bw
    return out


# reductions & structure -----------------------------------------------------


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def _bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.grad += np.broadcast_to(g, a.shape)

    out._backward = _bw
    return out


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), (a,))

    def _bw():
        a.grad += out.grad.reshape(a.shape)

    out._backward = _bw
    return out


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got {a.shape}")
    out = Tensor(a.data.T.copy(), (a,))

    def _bw():
        a.grad += out.grad.T

    out._backward = _bw
    return out


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    sizes = [p.shape[axis] for p in parts]

    def _bw():
        offset = 0
        for p, n in zip(parts, sizes):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(offset, offset + n)
            p.grad += out.grad[tuple(sl)]
            offset += n

    out._backward = _bw
    return out


# linear algebra -------------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def _bw():
        a.grad += out.grad @ b.data.T
        b.grad += a.data.T @ out.grad

    out._backward = _bw
    return out


def matmul_t(a, b):
    """a @ b.T without materializing the transpose."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"matmul_t shapes disagree: {a.shape} @ {b.shape}.T")
    out = Tensor(a.data @ b.data.T, (a, b))

    def _bw():
        a.grad += out.grad @ b.data
        b.grad += out.grad.T @ a.data

    out._backward = _bw
    return out


# image ops ------------------------------------------------------------------


def _as_nchw(a):
    if a.ndim == 3:
        return a.data[None], True
    if a.ndim == 4:
        return a.data, False
    raise ShapeError(f"expected a (C,H,W) or (N,C,H,W) tensor, got {a.shape}")


def channel_stats(a):
    """Per-channel spatial mean and standard deviation.

    For a (C,H,W) input returns ((C,), (C,)); for (N,C,H,W) returns
    ((N,C), (N,C)).  The deviation is sqrt(population variance + EPS_STAT),
    so constant channels stay differentiable.  Both outputs are graph nodes.
    """
    a = as_tensor(a)
    x, squeeze = _as_nchw(a)
    if x.shape[2] * x.shape[3] < 1:
        raise ShapeError("channel_stats requires at least one spatial position")
    n_sp = x.shape[2] * x.shape[3]
    mu_val = x.mean(axis=(2, 3))
    centered = x - mu_val[:, :, None, None]
    var_val = np.mean(centered * centered, axis=(2, 3))
    sigma_val = np.sqrt(var_val + EPS_STAT)
    if squeeze:
        mu = Tensor(mu_val[0], (a,))
        sigma = Tensor(sigma_val[0], (a,))
    else:
        mu = Tensor(mu_val, (a,))
        sigma = Tensor(sigma_val, (a,))

    def _bw_mu():
        g = mu.grad[None] if squeeze else mu.grad
        da = np.broadcast_to(g[:, :, None, None] / n_sp, x.shape)
        a.grad += da[0] if squeeze else da

    def _bw_sigma():
        g = sigma.grad[None] if squeeze else sigma.grad
        da = g[:, :, None, None] * centered / (n_sp * sigma_val[:, :, None, None])
        a.grad += da[0] if squeeze else da

    mu._backward = _bw_mu
    sigma._backward = _bw_sigma
    return mu, sigma


def conv2d(a, kernels):
    """Same-padded cross-correlation; kernels are (C_out, C_in, k, k), k odd.

    Accepts (C,H,W) or batched (N,C,H,W) inputs and differentiates with
    respect to both the input and the kernels (im2col under the hood).
    """
    a, kernels = as_tensor(a), as_tensor(kernels)
    x, squeeze = _as_nchw(a)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"kernels must be (C_out, C_in, k, k), got {kernels.shape}")
    c_out, c_in, k, _ = kernels.shape
    if k % 2 != 1:
        raise ShapeError(f"kernel size must be odd, got {k}")
    if x.shape[1] != c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, kernels expect {c_in}")
    n, _, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c_in * k * k)
    w_mat = kernels.data.reshape(c_out, c_in * k * k)
    val = (cols @ w_mat.T).reshape(n, h, w, c_out).transpose(0, 3, 1, 2)
    out = Tensor(val[0] if squeeze else val, (a, kernels))

    def _bw():
        g = out.grad[None] if squeeze else out.grad
        g_mat = g.transpose(0, 2, 3, 1).reshape(n * h * w, c_out)
        kernels.grad += (g_mat.T @ cols).reshape(c_out, c_in, k, k)
        dcols = (g_mat @ w_mat).reshape(n, h, w, c_in, k, k).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                dxp[:, :, di:di + h, dj:dj + w] += dcols[:, :, :, :, di, dj]
        da = dxp[:, :, p:p + h, p:p + w]
        a.grad += da[0] if squeeze else da

    out._backward = _bw
    return out


def avg_pool2(a):
    """2x2 average pooling (spatial dims must be even)."""
    a = as_tensor(a)
    x, squeeze = _as_nchw(a)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    val = x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    out = Tensor(val[0] if squeeze else val, (a,))

    def _bw():
        g = out.grad[None] if squeeze else out.grad
        da = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        a.grad += da[0] if squeeze else da

    out._backward = _bw
    return out


def upsample_nearest2(a):
    """2x nearest-neighbour spatial upsampling."""
    a = as_tensor(a)
    x, squeeze = _as_nchw(a)
    val = np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)
    out = Tensor(val[0] if squeeze else val, (a,))
    n, c, h, w = x.shape

    def _bw():
        g = out.grad[None] if squeeze else out.grad
        da = g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
        a.grad += da[0] if squeeze else da

    out._backward = _bw
    return out
