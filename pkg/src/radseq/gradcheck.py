"""Central finite-difference checks for the layer kernels and the whole network.

Everything here runs in float64. The scalar objective for a kernel check is
``sum(upstream * kernel(...))`` with a fixed random ``upstream`` tensor, so the
analytic gradient of each input is simply the kernel's backward applied to
``upstream``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import kernels as K

EPS = 1e-5
TOLERANCE = 1e-4
# Entries whose true gradient is below this magnitude are compared in absolute
# terms; round-off in (f(x+h) - f(x-h)) / 2h is ~1e-11 for O(1) objectives.
DENOM_FLOOR = 1e-6


def relative_error(analytic, numeric, floor: float = DENOM_FLOOR) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numerical_gradient(
    f: Callable[[], float],
    x: np.ndarray,
    eps: float = EPS,
    indices: Iterable[tuple[int, ...]] | None = None,
) -> np.ndarray:
    """Central differences of ``f`` w.r.t. entries of ``x`` (perturbed in place).

    If ``indices`` is given only those entries are filled in; the rest stay 0.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    it = indices if indices is not None else np.ndindex(*x.shape)
    for idx in it:
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<28} max_rel_err={self.max_rel_error:.3e} entries={self.n_checked}"


def _compare(name, analytic, numeric, mask=None) -> CheckResult:
    err = relative_error(analytic, numeric)
    if mask is not None:
        err = err[mask]
    return CheckResult(name, float(err.max()) if err.size else 0.0, int(err.size))


def check_conv(rng: np.random.Generator, stride: int = 2, pad: int = 1) -> list[CheckResult]:
    p = K.ConvParams(3, 4, 3, 3, stride=stride, pad=pad)
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal(p.weight_shape)
    b = rng.standard_normal(4)
    up = rng.standard_normal(K.conv2d_forward(x, w, b, p).shape)

    def f():
        return float(np.sum(up * K.conv2d_forward(x, w, b, p)))

    gx, gw, gb = K.conv2d_backward(up, x, w, p)
    tag = f"conv2d(s={stride},p={pad})"
    return [
        _compare(f"{tag}.input", gx, numerical_gradient(f, x)),
        _compare(f"{tag}.weights", gw, numerical_gradient(f, w)),
        _compare(f"{tag}.bias", gb, numerical_gradient(f, b)),
    ]


def check_maxpool(rng: np.random.Generator) -> list[CheckResult]:
    # a permutation keeps every window's maximum separated by >= 1 from the runner-up
    x = rng.permutation(2 * 3 * 7 * 7).reshape(2, 3, 7, 7).astype(np.float64)
    out, argmax = K.maxpool2d(x, 3, 2)
    up = rng.standard_normal(out.shape)

    def f():
        return float(np.sum(up * K.maxpool2d(x, 3, 2)[0]))

    gx = K.maxpool2d_backward(up, argmax, x.shape)
    return [_compare("maxpool2d(3,2).input", gx, numerical_gradient(f, x))]


def check_relu(rng: np.random.Generator) -> list[CheckResult]:
    x = rng.standard_normal((4, 5, 6))
    up = rng.standard_normal(x.shape)

    def f():
        return float(np.sum(up * K.relu(x)))

    gx = K.relu_backward(up, x)
    return [_compare("relu.input", gx, numerical_gradient(f, x), mask=np.abs(x) >= 1e-3)]


def check_linear(rng: np.random.Generator) -> list[CheckResult]:
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((4, 5))
    b = rng.standard_normal(4)
    up = rng.standard_normal((3, 4))

    def f():
        return float(np.sum(up * K.linear(x, w, b)))

    gx, gw, gb = K.linear_backward(up, x, w)
    return [
        _compare("linear.input", gx, numerical_gradient(f, x)),
        _compare("linear.weights", gw, numerical_gradient(f, w)),
        _compare("linear.bias", gb, numerical_gradient(f, b)),
    ]


def check_softmax_ce(rng: np.random.Generator) -> list[CheckResult]:
    logits = rng.standard_normal((4, 3)) * 2
    labels = rng.integers(0, 3, 4)
    _, g = K.softmax_cross_entropy(logits, labels)
    num = numerical_gradient(lambda: K.softmax_cross_entropy(logits, labels)[0], logits)
    return [_compare("softmax_cross_entropy.logits", g, num)]


def check_kernels(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    results += check_conv(rng, stride=1, pad=0)
    results += check_conv(rng, stride=2, pad=1)
    results += check_maxpool(rng)
    results += check_relu(rng)
    results += check_linear(rng)
    results += check_softmax_ce(rng)
    return results


def check_network(seed: int = 0, batch: int = 2, per_tensor: int = 6) -> list[CheckResult]:
    """Whole-network check on the reduced-scale sequencer.

    Every parameter tensor gets ``per_tensor`` randomly chosen entries checked
    (all entries when the tensor is smaller than that).
    """
    from . import sequencer as S

    spec, head = S.reduced_spec()
    model = S.build(spec, head, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    # non-zero biases so no unit sits exactly on a rectifier kink
    for name, p in model.params.items():
        if name.endswith(".bias"):
            p[...] = rng.standard_normal(p.shape) * 0.1
    x = rng.standard_normal((batch, spec.input_channels, spec.input_h, spec.input_w))
    labels = np.arange(batch) % head.class_count

    def loss():
        return K.softmax_cross_entropy(S.forward(model, x).cache.logits, labels)[0]

    res = S.forward(model, x)
    _, g = K.softmax_cross_entropy(res.cache.logits, labels)
    grads = S.backward(model, res.cache, g)

    results = []
    for name, p in model.params.items():
        if p.size <= per_tensor:
            idx = list(np.ndindex(*p.shape))
        else:
            flat = rng.choice(p.size, per_tensor, replace=False)
            idx = [np.unravel_index(i, p.shape) for i in sorted(flat)]
        num = numerical_gradient(loss, p, indices=idx)
        sel = tuple(np.array(idx).T)
        results.append(_compare(f"network.{name}", grads[name][sel], num[sel]))
    return results
