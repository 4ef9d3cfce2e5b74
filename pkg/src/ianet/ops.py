"""Differentiable kernels over :class:`~ianet.tensor.Tensor`.

Every function computes its forward value with numpy and records an adjoint
on the active tape when one of its inputs is tracked.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, active_tape

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _make(op: str, data: np.ndarray, inputs: tuple, backward) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward)
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        a = Tensor(a)
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not compatible") from None


# -- pointwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def maximum(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("maximum", a, b)
    pick_a = a.data >= b.data
    return _make(
        "maximum",
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (np.where(pick_a, g, 0), np.where(pick_a, 0, g)),
    )


def logaddexp(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("logaddexp", a, b)
    out = np.logaddexp(a.data, b.data)

    def backward(g):
        return g * np.exp(a.data - out), g * np.exp(b.data - out)

    return _make("logaddexp", out, (a, b), backward)


ELEMENTWISE_KINDS = ("ADD", "MUL", "MAX")


def elementwise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    """Pointwise ADD, MUL or MAX of two tensors of identical shape."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"elementwise {kind}: shapes {a.shape} and {b.shape} differ")
    kind = kind.upper()
    if kind == "ADD":
        return add(a, b)
    if kind == "MUL":
        return mul(a, b)
    if kind == "MAX":
        return maximum(a, b)
    raise ConfigurationError(f"unknown elementwise kind {kind!r}; expected one of {ELEMENTWISE_KINDS}")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make("log", np.log(ad), (a,), lambda g: (g / ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


# -- shape and reductions ------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    """Permute axes; by default swap the last two."""
    if axes is None:
        if a.ndim < 2:
            raise DimensionError(f"transpose needs rank >= 2, got shape {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def sum(a: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(np.asarray(out).size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _make("mean", np.asarray(out), (a,), backward)


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make("matmul", ad @ bd, (a, b), backward)


# -- normalization -------------------------------------------------------------


def _flush_subnormal(a: np.ndarray) -> np.ndarray:
    """Zero non-negative entries below the smallest normal float, in place.

    Softmax rows over wide logit ranges underflow into subnormals, which make
    BLAS products an order of magnitude slower; the change is below 1e-38.
    """
    a[a < np.finfo(a.dtype).tiny] = 0
    return a


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by per-row max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = _flush_subnormal(e / e.sum(axis=-1, keepdims=True))

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax_rows", y, (x,), backward)


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log of softmax over the last axis."""
    out = x.data - _logsumexp_rows(x.data)

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", out, (x,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise IndexError(f"label out of range [0, {n}): {labels.min()}..{labels.max()}")
    logp = logits.data - _logsumexp_rows(logits.data)
    rows = np.arange(labels.size)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1
        return (d * (g / labels.size),)

    return _make("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward)


class BatchNormState:
    """Running statistics; updated in place by train-mode normalization."""

    def __init__(self, channels: int, dtype=np.float64, momentum: float = BN_MOMENTUM):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    state: BatchNormState | None = None,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalization of a ``[B, C, H, W]`` tensor."""
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batchnorm2d: gamma {gamma.shape}, beta {beta.shape} vs {C} channels")
    xd = x.data
    gd = gamma.data.reshape(1, C, 1, 1)
    n = B * H * W
    if training:
        if n < 2:
            raise ConfigurationError(
                f"train-mode batch norm needs at least 2 values per channel, got {n}"
            )
        mu = xd.mean(axis=(0, 2, 3), keepdims=True)
        var = ((xd - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
        if state is not None:
            m = state.momentum
            state.running_mean[...] = (1 - m) * state.running_mean + m * mu.reshape(C)
            state.running_var[...] = (1 - m) * state.running_var + m * var.reshape(C) * (n / (n - 1))
    else:
        if state is None:
            raise ConfigurationError("eval-mode batch norm needs running statistics")
        mu = state.running_mean.reshape(1, C, 1, 1).astype(xd.dtype)
        var = state.running_var.reshape(1, C, 1, 1).astype(xd.dtype)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * invstd
    out = gd * xhat + beta.data.reshape(1, C, 1, 1)

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gd
        if training:
            dx = invstd / n * (
                n * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            dx = dxhat * invstd
        return dx, dgamma, dbeta

    return _make("batchnorm2d", out, (x, gamma, beta), backward)


class BatchNorm:
    """Affine parameters plus running statistics for one ``batchnorm2d`` site."""

    def __init__(self, channels: int, dtype=np.float64, gamma: float = 1.0, beta: float = 0.0):
        self.gamma = Tensor(np.full(channels, gamma, dtype=dtype))
        self.beta = Tensor(np.full(channels, beta, dtype=dtype))
        self.state = BatchNormState(channels, dtype=dtype)

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batchnorm2d(x, self.gamma, self.beta, training, self.state)

    def tensors(self, prefix: str) -> dict:
        return {
            prefix + "gamma": self.gamma.data,
            prefix + "beta": self.beta.data,
            prefix + "running_mean": self.state.running_mean,
            prefix + "running_var": self.state.running_var,
        }

    def load(self, prefix: str, tensors: dict, dtype) -> None:
        self.gamma = Tensor(np.asarray(tensors[prefix + "gamma"], dtype=dtype))
        self.beta = Tensor(np.asarray(tensors[prefix + "beta"], dtype=dtype))
        self.state.running_mean = np.asarray(tensors[prefix + "running_mean"], dtype=dtype).copy()
        self.state.running_var = np.asarray(tensors[prefix + "running_var"], dtype=dtype).copy()


# -- convolution and pooling ------------------------------------------------------


def conv_output_extent(n: int, k: int, stride: int, pad: int, allow_truncation: bool = False) -> int:
    span = n + 2 * pad - k
    if span < 0:
        raise ConfigurationError(f"kernel {k} larger than padded extent {n + 2 * pad}")
    if span % stride and not allow_truncation:
        raise ConfigurationError(
            f"output extent ({n}+2*{pad}-{k})/{stride}+1 is not integral"
        )
    return span // stride + 1


def conv2d(
    x: Tensor, w: Tensor, stride: int = 1, pad: int = 0, allow_truncation: bool = False
) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    ``x`` is ``[Cin, H, W]`` or ``[B, Cin, H, W]``; ``w`` is ``[Cout, Cin, k, k]``.
    With ``allow_truncation`` trailing rows/columns that do not fill a whole
    stride are dropped instead of raising.
    """
    if stride < 1 or pad < 0:
        raise ConfigurationError(f"conv2d: stride {stride} and pad {pad} must be >= 1 and >= 0")
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or w.ndim != 4 or w.shape[1] != x.shape[1] or w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    B, Cin, H, W = x.shape
    Cout, _, k, _ = w.shape
    Ho = conv_output_extent(H, k, stride, pad, allow_truncation)
    Wo = conv_output_extent(W, k, stride, pad, allow_truncation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (Ho - 1) + 1 : stride, : stride * (Wo - 1) + 1 : stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, Cin * k * k)
    wmat = w.data.reshape(Cout, Cin * k * k)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2)
    Hp, Wp = xp.shape[2], xp.shape[3]

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, Cout)
        dw = (g2.T @ cols).reshape(w.shape)
        dcols = (g2 @ wmat).reshape(B, Ho, Wo, Cin, k, k)
        dxp = np.zeros((B, Cin, Hp, Wp), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp
        return np.ascontiguousarray(dx), dw

    y = _make("conv2d", np.ascontiguousarray(out), (x, w), backward)
    if squeeze:
        y = reshape(y, y.shape[1:])
    return y


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the two spatial axes of ``[B, C, H, W]``, giving ``[B, C]``."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy(),)

    return _make("global_avg_pool", x.data.mean(axis=(2, 3)), (x,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` of shape ``[out, in]``."""
    y = matmul(x, transpose(w))
    return add(y, b) if b is not None else y


# -- spatial patch accumulation ------------------------------------------------------


def patch_offsets(K: int) -> list[int]:
    """Per-axis offsets of a K-wide window; even K leans toward +1."""
    if K < 1:
        raise ConfigurationError(f"patch size must be >= 1, got {K}")
    lo = -((K - 1) // 2)
    return list(range(lo, lo + K))


def _window_slices(grid, offsets):
    H, W = grid
    out = []
    for dy, dx in offsets:
        if abs(dy) >= H or abs(dx) >= W:
            continue
        ys = slice(max(0, -dy), H - max(0, dy))
        xs = slice(max(0, -dx), W - max(0, dx))
        out.append((ys, xs, slice(ys.start + dy, ys.stop + dy), slice(xs.start + dx, xs.stop + dx)))
    return out


def shifted_patch_sum(G: Tensor, grid: tuple[int, int], offsets, base: Tensor | None = None) -> Tensor:
    """``base + sum_d G[i+d, j+d]`` over 2-D offsets ``d``, zero outside the grid.

    ``G`` is ``[..., M, M]`` with ``M = H*W`` and positions indexed ``y*W + x``;
    ``offsets`` is a sequence of ``(dy, dx)`` pairs. Only index shifts and
    additions are involved.
    """
    H, W = grid
    M = H * W
    if G.shape[-2:] != (M, M):
        raise DimensionError(f"patch sum: G {G.shape} does not match grid {H}x{W}")
    if base is not None and base.shape != G.shape:
        raise DimensionError(f"patch sum: base {base.shape} vs G {G.shape}")
    lead = G.shape[:-2]
    g4 = G.data.reshape(lead + (H, W, H, W))
    windows = _window_slices(grid, offsets)
    out = np.zeros_like(g4) if base is None else base.data.reshape(g4.shape).copy()
    for ys, xs, ys_src, xs_src in windows:
        out[..., ys, xs, ys, xs] += g4[..., ys_src, xs_src, ys_src, xs_src]

    def backward(g):
        g4o = g.reshape(lead + (H, W, H, W))
        dG = np.zeros_like(g4o)
        for ys, xs, ys_src, xs_src in windows:
            dG[..., ys_src, xs_src, ys_src, xs_src] += g4o[..., ys, xs, ys, xs]
        return dG.reshape(G.shape), (g if base is not None else None)

    inputs = (G,) if base is None else (G, base)
    return _make("shifted_patch_sum", out.reshape(G.shape), inputs, backward)
