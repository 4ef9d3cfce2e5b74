"""Central-difference gradient checking against the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import UsageError
from .tensor import GradTape, Tensor


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def numerical_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor], epsilon: float = 1e-5):
    """Central differences ``(f(x+e) - f(x-e)) / 2e`` for every input element."""
    grads = []
    for t in inputs:
        flat = t.data.reshape(-1)
        g = np.zeros(flat.size, dtype=np.float64)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            fp = float(fn(*inputs).data)
            flat[idx] = orig - epsilon
            fm = float(fn(*inputs).data)
            flat[idx] = orig
            g[idx] = (fp - fm) / (2 * epsilon)
        grads.append(g.reshape(t.shape))
    return grads


def analytic_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor], grad_output=None):
    for t in inputs:
        t.requires_grad = True
    with GradTape() as tape:
        out = fn(*inputs)
    if out.size != 1 and grad_output is None:
        raise UsageError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    return tape.backward(out, wrt=list(inputs), grad_output=grad_output)


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence, epsilon: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    ``inputs`` are converted to 64-bit tensors. A non-scalar ``fn`` is checked
    through the projection ``sum(fn(x) * R)`` with a fixed standard-normal
    ``R`` drawn from ``seed``; the projection itself is not taped. The
    relative error uses the denominator ``max(|a|, |b|, 1e-8)``.
    """
    tensors = [Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)) for x in inputs]
    probe = fn(*tensors)
    R = None
    if probe.size != 1:
        R = np.random.default_rng(seed).standard_normal(probe.shape)
    analytic = analytic_gradient(fn, tensors, R)
    for t in tensors:
        t.requires_grad = False

    def scalar(*xs):
        out = fn(*xs).data
        return Tensor(np.sum(out * R) if R is not None else out)

    numeric = numerical_gradient(scalar, tensors, epsilon)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


# -- canonical suite --------------------------------------------------------------------

ISOLATED_THRESHOLD = 1e-6
COMPOSITE_THRESHOLD = 1e-4
COMPOSITE_NAME = "composite:sia>cia>bn>pool>cross_entropy"


def _cases(rng: np.random.Generator) -> list[tuple[str, Callable, list]]:
    from . import ops

    def r(*shape):
        return rng.standard_normal(shape)

    away = r(3, 4)
    away += np.sign(away) * 0.2  # keep relu inputs off the kink
    a_max = r(3, 4)
    b_max = a_max + rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.2, 1.0, size=(3, 4))
    labels = np.array([0, 2, 4, 1])
    return [
        ("add", lambda a, b: ops.add(a, b), [r(3, 4), r(4)]),
        ("sub", lambda a, b: ops.sub(a, b), [r(3, 4), r(3, 1)]),
        ("mul", lambda a, b: ops.mul(a, b), [r(3, 4), r(4)]),
        ("neg", lambda a: ops.neg(a), [r(3, 4)]),
        ("maximum", lambda a, b: ops.maximum(a, b), [a_max, b_max]),
        ("logaddexp", lambda a, b: ops.logaddexp(a, b), [r(3, 4), r(3, 4)]),
        ("exp", lambda a: ops.exp(a), [r(3, 4)]),
        ("log", lambda a: ops.log(a), [rng.uniform(0.5, 2.0, size=(3, 4))]),
        ("relu", lambda a: ops.relu(a), [away]),
        ("reshape", lambda a: ops.reshape(a, (4, 3)), [r(3, 4)]),
        ("transpose", lambda a: ops.transpose(a, (2, 0, 1)), [r(2, 3, 4)]),
        ("sum", lambda a: ops.sum(a, axis=1), [r(3, 4)]),
        ("mean", lambda a: ops.mean(a, axis=0, keepdims=True), [r(3, 4)]),
        ("matmul", lambda a, b: ops.matmul(a, b), [r(2, 3, 4), r(2, 4, 5)]),
        ("softmax_rows", lambda a: ops.softmax_rows(a), [r(3, 5)]),
        ("log_softmax", lambda a: ops.log_softmax(a), [r(3, 5)]),
        ("cross_entropy", lambda a: ops.cross_entropy(a, labels), [r(4, 5)]),
        (
            "batchnorm2d",
            lambda x, g, b: ops.batchnorm2d(x, g, b, training=True),
            [r(3, 2, 2, 2), r(2), r(2)],
        ),
        ("conv2d", lambda x, w: ops.conv2d(x, w, stride=2, pad=1), [r(2, 2, 5, 5), r(3, 2, 3, 3)]),
        ("global_avg_pool", lambda x: ops.global_avg_pool(x), [r(2, 3, 2, 2)]),
        (
            "shifted_patch_sum",
            lambda G, base: ops.shifted_patch_sum(G, (4, 3), [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)], base),
            [r(2, 12, 12), r(2, 12, 12)],
        ),
    ]


def _composite(rng: np.random.Generator) -> tuple[Callable, list]:
    from . import ops
    from .block import IAConfig, ia_residual
    from .ops import BatchNorm

    cfg = IAConfig(patch_sizes=(1, 2, 3), fusion="PROD", sigma1=2.0, sigma2=3.0)
    labels = np.array([0, 2])

    def bn(g, b):
        m = BatchNorm(g.shape[0])
        m.gamma, m.beta = g, b
        m.state = None
        return m

    def fn(F, g_s, b_s, g_c, b_c, w):
        y = ia_residual(F, "SIA", bn(g_s, b_s), cfg, training=True)
        y = ia_residual(y, "CIA", bn(g_c, b_c), cfg, training=True)
        logits = ops.linear(ops.global_avg_pool(y), w)
        return ops.cross_entropy(logits, labels)

    C = 4
    F = rng.standard_normal((2, C, 4, 3)) * 0.5
    params = [rng.uniform(0.5, 1.5, C), rng.standard_normal(C) * 0.1, rng.uniform(0.5, 1.5, C), rng.standard_normal(C) * 0.1]
    return fn, [F, *params, rng.standard_normal((3, C))]


def differentiable_ops() -> list[str]:
    return [name for name, _, _ in _cases(np.random.default_rng(0))]


def run_suite(seed: int = 0, epsilon: float = 1e-5) -> dict[str, float]:
    """Max relative error per op (isolated) and for the composite IA pipeline."""
    rng = np.random.default_rng(seed)
    report = {name: gradcheck(fn, inputs, epsilon) for name, fn, inputs in _cases(rng)}
    fn, inputs = _composite(rng)
    report[COMPOSITE_NAME] = gradcheck(fn, inputs, epsilon)
    return report


def failures(report: dict[str, float]) -> list[str]:
    """Names whose error breaks the isolated or composite threshold."""
    out = []
    for name, err in report.items():
        limit = COMPOSITE_THRESHOLD if name == COMPOSITE_NAME else ISOLATED_THRESHOLD
        if not err < limit:
            out.append(name)
    return out
