"""Minimal deterministic differentiable substrate.

Tensors are float64 numpy arrays. Each layer is a forward function plus an
explicit backward; there is no autodiff graph. Randomness always comes from
an explicit ``numpy.random.Generator`` (PCG64), which yields the same stream
for the same seed on every platform.
"""
from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(ValueError):
    """A NaN or infinity reached a tensor."""


def check_finite(x, what="tensor"):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains non-finite values")
    return x


def make_rng(seed):
    """PCG64 generator seeded with a 64-bit unsigned integer."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# -- layers -------------------------------------------------------------------

def embedding_forward(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    V = table.shape[0]
    bad = np.flatnonzero((ids < 0) | (ids >= V))
    if bad.size:
        i = int(bad[0])
        raise IndexError(f"token id {int(ids.reshape(-1)[i])} at position {i} outside [0, {V})")
    return table[ids]


def embedding_backward(table_grad, ids, gout):
    """Accumulate ``gout`` rows into ``table_grad``; repeated ids add up."""
    np.add.at(table_grad, np.asarray(ids, dtype=np.int64), gout)


def conv1d_forward(x, kernel, bias):
    """Valid convolution of ``x`` (L, D) with ``kernel`` (F, w, D); returns (L-w+1, F)."""
    L, D = x.shape
    F, w, Dk = kernel.shape
    if Dk != D:
        raise ValueError(f"kernel depth {Dk} != input width {D}")
    if L < w:
        raise ValueError(f"input length {L} shorter than filter width {w}; pad the document")
    T = L - w + 1
    out = np.tile(bias, (T, 1)).astype(np.float64)
    for j in range(w):
        out += x[j:j + T] @ kernel[:, j, :].T
    return out


def conv1d_backward(x, kernel, gout):
    L, D = x.shape
    F, w, _ = kernel.shape
    T = L - w + 1
    dx = np.zeros_like(x)
    dk = np.empty_like(kernel)
    for j in range(w):
        dx[j:j + T] += gout @ kernel[:, j, :]
        dk[:, j, :] = gout.T @ x[j:j + T]
    return dx, dk, gout.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, gout):
    return np.where(x > 0.0, gout, 0.0)


def max_over_time(x):
    """Column max of ``x`` (T, F); returns (values, argmax) with lowest-index ties."""
    if x.shape[0] == 0:
        raise ValueError("empty feature map")
    idx = x.argmax(axis=0)
    return x[idx, np.arange(x.shape[1])], idx


def max_over_time_backward(argmax, gout, T):
    dx = np.zeros((T, gout.shape[0]))
    dx[argmax, np.arange(gout.shape[0])] = gout
    return dx


def dense_forward(x, weight, bias):
    if weight.shape[-1] != x.shape[-1] or bias.shape[0] != weight.shape[0]:
        raise ValueError(f"shape mismatch: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    return x @ weight.T + bias


def dense_backward(x, weight, gout):
    """Gradients for input, weight and bias; works for a single row or a batch."""
    dx = gout @ weight
    if gout.ndim == 1:
        return dx, np.outer(gout, x), gout.copy()
    return dx, gout.T @ x, gout.sum(axis=0)


def softmax(logits, axis=-1):
    logits = check_finite(logits, "logits")
    if logits.shape[axis] < 2:
        raise ValueError("softmax needs at least two classes")
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# -- optimisation ---------------------------------------------------------------

def adam_update(value, grad, m, v, t, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step on arrays; returns the new (value, m, v)."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    return value - lr * mhat / (np.sqrt(vhat) + eps), m, v


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            p.value[...], self.m[i], self.v[i] = adam_update(
                p.value, p.grad, self.m[i], self.v[i], self.t,
                self.lr, self.beta1, self.beta2, self.eps)


def grad_check(f, params, h=1e-6, max_entries=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``f()`` must return the scalar loss and leave analytic gradients in
    ``p.grad`` for every parameter. Gradients are zeroed before the analytic
    call. With ``max_entries`` set, that many entries per parameter are
    sampled with ``rng`` instead of checking all of them.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    for p in params:
        p.zero_grad()
    f()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng if rng is not None else make_rng(0)).choice(flat.size, max_entries, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            cd = (fp - fm) / (2.0 * h)
            ai = a.reshape(-1)[i]
            err = abs(ai - cd) / max(abs(ai), abs(cd), 1e-8)
            worst = max(worst, err)
    for p, a in zip(params, analytic):
        p.grad[...] = a
    return worst
