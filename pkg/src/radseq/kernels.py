"""Numeric layer kernels with hand-written gradients.

Tensors are plain ``numpy.ndarray`` objects in row-major (C) order. Images
are channel-major: ``C x H x W`` or batched ``N x C x H x W``. Every kernel
preserves the dtype of its inputs, so the same code runs in float32 for
training and float64 for gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ValidationError

Tensor = np.ndarray


def output_extent(size: int, kernel: int, stride: int, pad: int = 0) -> int:
    """Spatial extent after a sliding window: floor((size + 2*pad - kernel) / stride) + 1."""
    if size + 2 * pad < kernel:
        raise DimensionError(
            f"window {kernel} larger than padded input extent {size + 2 * pad}"
        )
    return (size + 2 * pad - kernel) // stride + 1


@dataclass(frozen=True)
class ConvParams:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"):
            if getattr(self, name) < 1:
                raise ValidationError(f"ConvParams.{name} must be positive")
        if self.pad < 0:
            raise ValidationError("ConvParams.pad must be non-negative")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return (
            output_extent(h, self.kernel_h, self.stride, self.pad),
            output_extent(w, self.kernel_w, self.stride, self.pad),
        )


def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected C x H x W or N x C x H x W input, got shape {x.shape}")


def _im2col(xb: Tensor, p: ConvParams) -> tuple[Tensor, int, int]:
    """Rows are output positions (n, oh, ow); columns are (c, i, j) window taps."""
    n, c, h, w = xb.shape
    oh, ow = p.output_hw(h, w)
    if p.pad:
        xb = np.pad(xb, ((0, 0), (0, 0), (p.pad, p.pad), (p.pad, p.pad)))
    win = sliding_window_view(xb, (p.kernel_h, p.kernel_w), axis=(2, 3))
    win = win[:, :, :: p.stride, :: p.stride][:, :, :oh, :ow]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * p.kernel_h * p.kernel_w)
    return cols, oh, ow


def _check_conv_shapes(xb: Tensor, weights: Tensor, bias: Tensor, p: ConvParams):
    if xb.shape[1] != p.in_channels:
        raise DimensionError(
            f"input has {xb.shape[1]} channels, conv expects {p.in_channels}"
        )
    if weights.shape != p.weight_shape:
        raise DimensionError(f"weights shape {weights.shape} != {p.weight_shape}")
    if bias.shape != (p.out_channels,):
        raise DimensionError(f"bias shape {bias.shape} != ({p.out_channels},)")


def conv2d_forward(x: Tensor, weights: Tensor, bias: Tensor, params: ConvParams) -> Tensor:
    """2-D cross-correlation with symmetric zero padding (no kernel flip)."""
    xb, single = _as_batch(x)
    _check_conv_shapes(xb, weights, bias, params)
    cols, oh, ow = _im2col(xb, params)
    out = cols @ weights.reshape(params.out_channels, -1).T + bias
    out = out.reshape(xb.shape[0], oh, ow, params.out_channels).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_backward(
    grad_out: Tensor, x: Tensor, weights: Tensor, params: ConvParams, input_grad: bool = True
) -> tuple[Tensor | None, Tensor, Tensor]:
    """Gradients of ``conv2d_forward`` w.r.t. input, weights and bias.

    With ``input_grad=False`` the (expensive) input gradient is skipped and
    returned as ``None``; used for the first layer of a network.
    """
    xb, single = _as_batch(x)
    gb = grad_out[None] if single else grad_out
    n, c, h, w = xb.shape
    oh, ow = params.output_hw(h, w)
    if gb.shape != (n, params.out_channels, oh, ow):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"{(n, params.out_channels, oh, ow)}"
        )
    kh, kw, s, pad = params.kernel_h, params.kernel_w, params.stride, params.pad
    cols, _, _ = _im2col(xb, params)
    g2 = gb.transpose(0, 2, 3, 1).reshape(n * oh * ow, params.out_channels)

    grad_w = (g2.T @ cols).reshape(params.weight_shape)
    grad_b = g2.sum(axis=0)
    if not input_grad:
        return None, grad_w, grad_b

    dcols = (g2 @ weights.reshape(params.out_channels, -1)).reshape(n, oh, ow, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=grad_out.dtype)
    # fixed (i, j) accumulation order keeps the result bit-reproducible
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += dcols[:, :, :, :, i, j].transpose(
                0, 3, 1, 2
            )
    grad_x = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
    grad_x = np.ascontiguousarray(grad_x)
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def maxpool2d(x: Tensor, window: int, stride: int) -> tuple[Tensor, Tensor]:
    """Max pooling over each channel plane.

    Returns the pooled tensor and, for every output element, the flat index
    (``row * W + col``) of the winning input element within its plane. Ties go
    to the lowest flat index.
    """
    xb, single = _as_batch(x)
    n, c, h, w = xb.shape
    if window > h or window > w:
        raise DimensionError(f"pool window {window} exceeds input extent {h}x{w}")
    if window < 1 or stride < 1:
        raise ValidationError("pool window and stride must be positive")
    oh, ow = output_extent(h, window, stride), output_extent(w, window, stride)
    win = sliding_window_view(xb, (window, window), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow].reshape(n, c, oh, ow, window * window)
    local = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    # argmax scans the window row-major, which is increasing flat index order
    rows = np.arange(oh)[:, None] * stride + local // window
    cols = np.arange(ow)[None, :] * stride + local % window
    argmax = rows * w + cols
    out = np.ascontiguousarray(out)
    if single:
        return out[0], argmax[0]
    return out, argmax


def maxpool2d_backward(grad_out: Tensor, argmax: Tensor, input_shape: tuple[int, ...]) -> Tensor:
    """Route each output gradient to the input element recorded in ``argmax``."""
    if grad_out.shape != argmax.shape:
        raise DimensionError(f"grad_out shape {grad_out.shape} != argmax shape {argmax.shape}")
    h, w = input_shape[-2:]
    planes = int(np.prod(input_shape[:-2], dtype=np.int64))
    offsets = (np.arange(planes) * (h * w)).reshape(grad_out.shape[:-2] + (1, 1))
    flat = (argmax + offsets).ravel()
    # bincount sums in index order: deterministic for overlapping windows
    dx = np.bincount(flat, weights=grad_out.ravel(), minlength=planes * h * w)
    return dx.astype(grad_out.dtype, copy=False).reshape(input_shape)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(grad_out: Tensor, x: Tensor) -> Tensor:
    if grad_out.shape != x.shape:
        raise DimensionError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ W.T + b`` with ``x: N x D_in`` and ``W: D_out x D_in``."""
    if x.ndim != 2 or weights.ndim != 2:
        raise DimensionError(f"linear expects 2-D input and weights, got {x.shape}, {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise DimensionError(
            f"input width {x.shape[1]} does not match weight input width {weights.shape[1]}"
        )
    if bias.shape != (weights.shape[0],):
        raise DimensionError(f"bias shape {bias.shape} != ({weights.shape[0]},)")
    return x @ weights.T + bias


def linear_backward(grad_out: Tensor, x: Tensor, weights: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    if grad_out.shape != (x.shape[0], weights.shape[0]):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} != {(x.shape[0], weights.shape[0])}"
        )
    return grad_out @ weights, grad_out.T @ x, grad_out.sum(axis=0)


def softmax(logits: Tensor) -> Tensor:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[float, Tensor]:
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns ``(loss, grad_logits)`` where ``grad_logits = (softmax - onehot) / N``.
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be N x K, got {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValidationError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.intp)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, labels])) if n else 0.0
    grad = np.exp(z - lse[:, None])
    grad[rows, labels] -= 1
    grad /= max(n, 1)
    return loss, grad.astype(logits.dtype, copy=False)
