"""Small reverse-mode autodiff engine over numpy arrays, plus layers and Adam.

Tensors keep the dtype they were created with. Models run in float32; the
gradient checker runs the same graphs in float64.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


class Parameter(Tensor):
    """Trainable tensor carrying its Adam moments."""

    __slots__ = ("adam_m", "adam_v")

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(np.array(data, dtype=dtype or DEFAULT_DTYPE, copy=True), requires_grad=True, name=name)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)

    def to(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.adam_m = self.adam_m.astype(dtype)
        self.adam_v = self.adam_v.astype(dtype)
        self.grad = None


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    b = _lift(b, a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    b = _lift(b, a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return mul(a, c)


def power(a: Tensor, p: float) -> Tensor:
    def bw(g):
        a._accumulate(g * p * a.data ** (p - 1))

    return _make(a.data**p, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def spmm(x: sp.spmatrix, w: Tensor) -> Tensor:
    """Sparse (constant) matrix times dense tensor."""
    x = sp.csr_matrix(x, dtype=w.dtype)

    def bw(g):
        w._accumulate(np.asarray(x.T @ g))

    return _make(np.asarray(x @ w.data), (w,), bw)


def transpose(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(g.T)

    return _make(a.data.T, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), bw)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    mask = a.data > lo

    def bw(g):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.data, lo).astype(a.dtype), (a,), bw)


def sum_(a: Tensor, axis=None) -> Tensor:
    out = np.sum(a.data, axis=axis, dtype=np.float64).astype(a.dtype)

    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(out, (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    out = np.mean(a.data, axis=axis, dtype=np.float64).astype(a.dtype)

    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g / n, a.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g / n, axis), a.shape))

    return _make(out, (a,), bw)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product over the last axis (row-wise for matrices)."""
    return sum_(mul(a, b), axis=-1)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def index(a: Tensor, idx) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate gradient."""

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _make(a.data[idx], (a,), bw)


def take_rows(a: Tensor, rows) -> Tensor:
    """Embedding lookup: gather rows of a 2-D table."""
    return index(a, np.asarray(rows, dtype=np.int64))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accumulate(g[tuple(sl)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, bw)


def log_sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # log sigma(x) = -softplus(-x), written to avoid overflow on either side
    out = -(np.logaddexp(0, -x))
    sig = np.exp(np.where(x >= 0, -np.logaddexp(0, -x), x - np.logaddexp(0, x)))

    def bw(g):
        a._accumulate(g * (1.0 - sig))

    return _make(out.astype(a.dtype), (a,), bw)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    s = np.sum(shifted, axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = shifted / s

    def bw(g):
        a._accumulate(np.expand_dims(g, axis) * soft)

    return _make(out.astype(a.dtype), (a,), bw)


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise x / max(||x||, eps) along the last axis."""
    norm = np.sqrt(np.sum(a.data.astype(np.float64) ** 2, axis=-1, keepdims=True)).astype(a.dtype)
    denom = np.maximum(norm, eps)
    out = a.data / denom
    active = norm > eps

    def bw(g):
        proj = np.sum(g * out, axis=-1, keepdims=True)
        ga = np.where(active, (g - out * proj) / denom, g / denom)
        a._accumulate(ga)

    return _make(out, (a,), bw)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity in eval mode or when p == 0."""
    if not training or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)

    def bw(g):
        a._accumulate(g * keep)

    return _make(a.data * keep, (a,), bw)


# ---------------------------------------------------------------- backward


class TapeError(RuntimeError):
    pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable tensor requiring grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or (loss._backward is None and not isinstance(loss, Parameter)):
        raise TapeError("backward called on a tensor without a recorded forward tape")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    # intermediate nodes get fresh grad buffers; leaves keep accumulating
    for node in order:
        if node._backward is not None:
            node.grad = None
    if loss._backward is None:
        loss._accumulate(np.ones_like(loss.data))
    else:
        loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node.grad = None


# ---------------------------------------------------------------- layers


class Module:
    training = True

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        seen: set[int] = set()
        for p in self._walk_params():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        out.extend(v.named_parameters(f"{full}.{i}."))
            elif isinstance(value, dict):
                for k, v in value.items():
                    if isinstance(v, Module):
                        out.extend(v.named_parameters(f"{full}.{k}."))
        return out

    def _walk_params(self) -> Iterable[Parameter]:
        for _, p in self.named_parameters():
            yield p

    def modules(self) -> list["Module"]:
        out: list[Module] = [self]
        for value in vars(self).values():
            children = []
            if isinstance(value, Module):
                children = [value]
            elif isinstance(value, (list, tuple)):
                children = [v for v in value if isinstance(v, Module)]
            elif isinstance(value, dict):
                children = [v for v in value.values() if isinstance(v, Module)]
            for c in children:
                out.extend(c.modules())
        return out

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            p.to(dtype)
        for m in self.modules():
            if isinstance(m, BatchNorm):
                m.running_mean = m.running_mean.astype(dtype)
                m.running_var = m.running_var.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters and batchnorm running statistics keyed by attribute path."""
        out: dict[str, np.ndarray] = {}
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, m in self.named_modules():
            if isinstance(m, BatchNorm):
                out[f"{name}running_mean"] = m.running_mean
                out[f"{name}running_var"] = m.running_var
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        norms = {name: m for name, m in self.named_modules() if isinstance(m, BatchNorm)}
        expected = set(self.state_dict())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing={missing[:3]} unexpected={extra[:3]}")
        for name, value in state.items():
            if name in params:
                p = params[name]
                if p.data.shape != tuple(value.shape):
                    raise ValueError(f"shape mismatch for {name}: {p.data.shape} vs {value.shape}")
                p.data = np.array(value, dtype=p.data.dtype, copy=True)
            else:
                prefix, attr = name.rsplit("running_", 1)
                m = norms[prefix]
                setattr(m, f"running_{attr}", np.array(value, dtype=m.running_mean.dtype, copy=True))

    def named_modules(self, prefix: str = "") -> list[tuple[str, "Module"]]:
        out: list[tuple[str, Module]] = [(prefix, self)]
        for name, value in vars(self).items():
            if isinstance(value, Module):
                out.extend(value.named_modules(f"{prefix}{name}."))
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        out.extend(v.named_modules(f"{prefix}{name}.{i}."))
            elif isinstance(value, dict):
                for k, v in value.items():
                    if isinstance(v, Module):
                        out.extend(v.named_modules(f"{prefix}{name}.{k}."))
        return out


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(glorot_uniform(rng, fan_in, fan_out), name="weight")
        self.bias = Parameter(np.zeros(fan_out), name="bias") if bias else None

    def __call__(self, x) -> Tensor:
        if sp.issparse(x):
            y = spmm(x, self.weight)
        else:
            y = matmul(x if isinstance(x, Tensor) else Tensor(x), self.weight)
        return add(y, self.bias) if self.bias is not None else y


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, std: float = 0.1):
        self.weight = Parameter(rng.normal(0.0, std, size=(n, dim)), name="weight")

    def __call__(self, rows) -> Tensor:
        return take_rows(self.weight, rows)


class BatchNorm(Module):
    """Batch normalization over the leading axis of a 2-D input."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim), name="gamma")
        self.beta = Parameter(np.zeros(dim), name="beta")
        self.running_mean = np.zeros(dim, dtype=DEFAULT_DTYPE)
        self.running_var = np.ones(dim, dtype=DEFAULT_DTYPE)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            n = x.shape[0]
            if n < 2:
                raise ValueError("batchnorm in train mode needs a batch of at least 2 rows")
            mu = mean(x, axis=0)
            centered = sub(x, mu)
            var = mean(mul(centered, centered), axis=0)
            xhat = mul(centered, power(add(var, self.eps), -0.5))
            m = self.momentum
            dt = self.running_mean.dtype
            self.running_mean = ((1 - m) * self.running_mean + m * mu.data).astype(dt)
            unbiased = var.data * (n / (n - 1))
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(dt)
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = mul(sub(x, self.running_mean.astype(x.dtype)), inv.astype(x.dtype))
        return add(mul(xhat, self.gamma), self.beta)


class MLP(Module):
    """Stack of linear -> [batchnorm] -> relu blocks.

    ``widths`` lists every layer's output size. The last block's activation
    is controlled by ``final_activation``.
    """

    def __init__(
        self,
        in_dim: int,
        widths: Sequence[int],
        rng: np.random.Generator,
        batchnorm: bool = False,
        final_activation: bool = True,
        final_batchnorm: bool | None = None,
        dropout: float = 0.0,
        bn_momentum: float = 0.1,
        bn_eps: float = 1e-5,
    ):
        self.layers: list[Linear] = []
        self.norms: list[BatchNorm | None] = []
        self.dropout = dropout
        self.final_activation = final_activation
        dims = [in_dim, *widths]
        last = len(widths) - 1
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            use_bn = batchnorm if i < last else (final_batchnorm if final_batchnorm is not None else batchnorm and final_activation)
            # a bias ahead of batchnorm is cancelled by the centering
            self.layers.append(Linear(a, b, rng, bias=not use_bn))
            self.norms.append(BatchNorm(b, bn_momentum, bn_eps) if use_bn else None)
        self.out_dim = dims[-1]
        self._drop_rng: np.random.Generator | None = None

    def set_dropout_rng(self, rng: np.random.Generator) -> None:
        self._drop_rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, (lin, bn) in enumerate(zip(self.layers, self.norms)):
            x = lin(x)
            if bn is not None:
                x = bn(x)
            if i < last or self.final_activation:
                x = relu(x)
            if i < last:
                x = dropout(x, self.dropout, self._drop_rng, self.training)
        return x


# ---------------------------------------------------------------- optimizer


class NonFiniteGradient(FloatingPointError):
    pass


def adam_step(
    params: Sequence[Parameter],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    t: int = 1,
) -> None:
    if t < 1:
        raise ValueError("adam step count starts at 1")
    for p in params:
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient in parameter {p.name!r}")
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.data
        p.adam_m = beta1 * p.adam_m + (1 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1 - beta2) * g * g
        m_hat = p.adam_m / c1
        v_hat = p.adam_v / c2
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
        p.grad = None


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0

    def step(self) -> None:
        self.t += 1
        adam_step(self.params, self.lr, self.betas[0], self.betas[1], self.eps, self.weight_decay, self.t)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------- grad check


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare backward against central differences; return max relative error.

    ``fn`` rebuilds the graph from ``params`` and returns a scalar loss. The
    parameters should hold float64 data. When ``max_coords`` is given, each
    parameter is probed on a random subsample of that many coordinates
    (never fewer than 256 overall).
    """
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, size=max_coords, replace=False)
        a_flat = a.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            with no_grad():
                up = float(fn().data)
            flat[c] = orig - eps
            with no_grad():
                down = float(fn().data)
            flat[c] = orig
            num = (up - down) / (2 * eps)
            ana = float(a_flat[c])
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst
