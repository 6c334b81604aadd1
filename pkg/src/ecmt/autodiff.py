"""Dense-array reverse-mode autodiff engine with an Adam optimizer.

Everything is float64. A :class:`Tensor` wraps a numpy array plus the
bookkeeping needed to backpropagate: parent tensors and one
vector-Jacobian-product closure per parent. Gradients accumulate into
``.grad`` buffers and are only cleared by an explicit :func:`zero_grads`
call, so several backward passes can sum their contributions before an
optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError


class Tensor:
    """Node of the computation graph.

    Leaves (parameters, inputs) have no parents. ``grad`` is lazily
    allocated as zeros and accumulates across backward passes.
    """

    __slots__ = ("value", "_grad", "parents", "vjps", "name")

    def __init__(self, value, parents=(), vjps=(), name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self._grad = None
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @property
    def shape(self):
        return self.value.shape

    def detach(self) -> "Tensor":
        """Constant copy of this node: same values, no graph history."""
        return Tensor(self.value)

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.value.shape}>"

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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value + b.value,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(g, b.value.shape),
        ),
    )


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.value, parents=(a,), vjps=(lambda g: -g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value * b.value,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def power(a, exponent: float) -> Tensor:
    """Elementwise a**exponent for a constant exponent."""
    a = as_tensor(a)
    out = a.value**exponent
    return Tensor(
        out,
        parents=(a,),
        vjps=(lambda g: g * exponent * a.value ** (exponent - 1.0),),
    )


def absolute(a) -> Tensor:
    """|a| with subgradient 0 at exactly 0."""
    a = as_tensor(a)
    return Tensor(np.abs(a.value), parents=(a,), vjps=(lambda g: g * np.sign(a.value),))


def relu(a) -> Tensor:
    """max(0, a); gradient is 0 at exactly 0."""
    a = as_tensor(a)
    mask = a.value > 0
    return Tensor(np.where(mask, a.value, 0.0), parents=(a,), vjps=(lambda g: g * mask,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.value.shape
    return Tensor(a.value.reshape(shape), parents=(a,), vjps=(lambda g: g.reshape(old),))


def leading_slice(a, counts) -> Tensor:
    """First ``counts[i]`` entries along axis i (None keeps the full axis).

    The forward value is a numpy view of the parent's buffer; the backward
    pass scatters the gradient into the matching block of the full shape.
    """
    a = as_tensor(a)
    key = tuple(slice(None) if c is None else slice(0, int(c)) for c in counts)

    def vjp(g):
        full = np.zeros_like(a.value)
        full[key] = g
        return full

    return Tensor(a.value[key], parents=(a,), vjps=(vjp,))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        g2 = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g2, a.value.shape).copy()

    return Tensor(out, parents=(a,), vjps=(vjp,))


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.value.shape[ax] for ax in axes]))
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def channel_mean(a) -> Tensor:
    """Mean over the channel axis (axis 1), channel axis kept with size 1."""
    a = as_tensor(a)
    if a.value.ndim < 2:
        raise DimensionError(f"channel_mean needs rank >= 2, got shape {a.value.shape}")
    return reduce_mean(a, axis=1, keepdims=True)


def global_avg_pool(a) -> Tensor:
    """B x C x H x W -> B x C by averaging the spatial dims."""
    a = as_tensor(a)
    if a.value.ndim != 4:
        raise DimensionError(f"global_avg_pool needs rank 4, got shape {a.value.shape}")
    return reduce_mean(a, axis=(2, 3), keepdims=False)


# ---------------------------------------------------------------------------
# linear / convolutional ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise DimensionError(
            f"matmul needs two rank-2 arrays, got {a.value.shape} and {b.value.shape}"
        )
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul inner dims disagree: {a.value.shape} x {b.value.shape}"
        )
    return Tensor(
        a.value @ b.value,
        parents=(a, b),
        vjps=(lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


def _im2col3x3(arr: np.ndarray) -> np.ndarray:
    """B x C x H x W -> (B*H*W) x (C*9) patch matrix, zero same-padding."""
    b, c, h, w = arr.shape
    padded = np.pad(arr, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * 9)


def _corr3x3(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Cross-correlation of B x C x H x W with O x C x 3 x 3, same padding."""
    b, _, h, w = arr.shape
    o = kernel.shape[0]
    cols = _im2col3x3(arr)
    out = cols @ kernel.reshape(o, -1).T
    return out.reshape(b, h, w, o).transpose(0, 3, 1, 2)


def conv2d(x, k) -> Tensor:
    """3x3 cross-correlation, stride 1, zero same-padding.

    x: B x Cin x H x W, k: Cout x Cin x 3 x 3 -> B x Cout x H x W.
    """
    x, k = as_tensor(x), as_tensor(k)
    if x.value.ndim != 4 or k.value.ndim != 4:
        raise DimensionError(
            f"conv2d needs rank-4 input and kernel, got {x.value.shape}, {k.value.shape}"
        )
    if k.value.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d kernel must be 3x3, got {k.value.shape}")
    if x.value.shape[1] != k.value.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.value.shape[1]} vs kernel {k.value.shape[1]}"
        )
    b, cin, h, w = x.value.shape
    cout = k.value.shape[0]
    cols = _im2col3x3(x.value)
    out = (cols @ k.value.reshape(cout, -1).T).reshape(b, h, w, cout).transpose(0, 3, 1, 2)

    def vjp_x(g):
        # gradient w.r.t. the input is correlation with the flipped,
        # in/out-swapped kernel
        flipped = k.value.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
        return _corr3x3(g, flipped)

    def vjp_k(g):
        gk = g.transpose(0, 2, 3, 1).reshape(b * h * w, cout).T @ cols
        return gk.reshape(cout, cin, 3, 3)

    return Tensor(out, parents=(x, k), vjps=(vjp_x, vjp_k))


# ---------------------------------------------------------------------------
# losses


def mse(a, b) -> Tensor:
    """Mean over all elements of (a - b)^2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape != b.value.shape:
        raise DimensionError(f"mse shapes differ: {a.value.shape} vs {b.value.shape}")
    d = sub(a, b)
    return reduce_mean(mul(d, d))


def l1(a, b) -> Tensor:
    """Mean absolute difference."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape != b.value.shape:
        raise DimensionError(f"l1 shapes differ: {a.value.shape} vs {b.value.shape}")
    return reduce_mean(absolute(sub(a, b)))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-stabilized."""
    logits = as_tensor(logits)
    if logits.value.ndim != 2:
        raise DimensionError(f"logits must be B x K, got {logits.value.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.value.shape
    if labels.shape != (b,):
        raise DimensionError(f"labels must have shape ({b},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise IndexError(f"label out of range [0, {k})")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - logsumexp
    out = -log_probs[np.arange(b), labels].mean()
    softmax = np.exp(log_probs)

    def vjp(g):
        onehot = np.zeros((b, k))
        onehot[np.arange(b), labels] = 1.0
        return g * (softmax - onehot) / b

    return Tensor(out, parents=(logits,), vjps=(vjp,))


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into every reachable node's grad buffer.

    Messages for the current pass are kept separate and only added into the
    persistent buffers at the end, so repeated calls on the same graph sum
    exactly (two backwards double every gradient).
    """
    if loss.value.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")

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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    msgs: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = msgs.get(id(node))
        if g is None:
            continue
        node._grad = g if node._grad is None else node._grad + g
        for parent, vjp in zip(node.parents, node.vjps):
            pg = vjp(g)
            prev = msgs.get(id(parent))
            msgs[id(parent)] = pg if prev is None else prev + pg


def zero_grads(params) -> None:
    """Reset gradient buffers; mirrors an optimizer's explicit clear step."""
    for p in params.values() if isinstance(params, dict) else params:
        p._grad = None


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Bias-corrected Adam state; moment arrays are keyed by parameter name."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState, grads: dict | None = None) -> AdamState:
    """One Adam update over named parameters, in place.

    Gradient buffers are left untouched; clearing them is the caller's
    explicit responsibility via :func:`zero_grads`.
    """
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1**t)
        v_hat = state.v[name] / (1 - state.beta2**t)
        p.value = p.value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state
