"""
Layer ops for the pipeline: dilated convolution, pooling, fully-connected,
ReLU, bilinear upsampling and the two losses.

Each op has a raw-array kernel (usable as a test oracle target and by
inference code) and a Tensor-level wrapper that records its backward pass.
Convolution runs as im2col + one matmul; the im2col column order is
(channel, kernel row, kernel column), which fixes the accumulation order of
every output element.
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit, log_softmax, softmax

from src.core.autograd import (MissingContextError, ShapeMismatchError, Tensor, check_finite,
                               make_result)
from src.utils.validators import IGNORE, LabelError, validate_binary_labels


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one 2-D convolution (zero padding only)."""
    in_channels: int
    out_channels: int
    kernel: Tuple[int, int] = (3, 3)
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        if isinstance(self.kernel, int):
            object.__setattr__(self, "kernel", (self.kernel, self.kernel))
        else:
            object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if min(self.kernel) < 1 or self.stride < 1 or self.dilation < 1:
            raise ValueError("kernel, stride and dilation must be positive")
        if self.padding < 0:
            raise ValueError("padding must be non-negative")

    def effective_kernel(self) -> Tuple[int, int]:
        """Kernel extent once taps are spread ``dilation`` apart: k + (k-1)(d-1)."""
        return tuple(k + (k - 1) * (self.dilation - 1) for k in self.kernel)

    def output_size(self, height: int, width: int) -> Tuple[int, int]:
        eff_h, eff_w = self.effective_kernel()
        out_h = (height + 2 * self.padding - eff_h) // self.stride + 1
        out_w = (width + 2 * self.padding - eff_w) // self.stride + 1
        return out_h, out_w


# =============================================================================
# Convolution
# =============================================================================

def _check_conv_shapes(x: np.ndarray, weights: np.ndarray, bias: Optional[np.ndarray],
                       spec: ConvSpec) -> Tuple[int, int]:
    if x.ndim != 4:
        raise ShapeMismatchError(f"conv2d expects [N,C,H,W] input, got shape {x.shape}")
    expected_w = (spec.out_channels, spec.in_channels) + spec.kernel
    if weights.shape != expected_w:
        raise ShapeMismatchError(f"conv2d weights shape {weights.shape} != {expected_w}")
    if x.shape[1] != spec.in_channels:
        raise ShapeMismatchError(f"conv2d input has {x.shape[1]} channels, spec says {spec.in_channels}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeMismatchError(f"conv2d bias shape {bias.shape} != ({spec.out_channels},)")
    out_h, out_w = spec.output_size(x.shape[2], x.shape[3])
    if out_h < 1 or out_w < 1:
        raise ShapeMismatchError(f"conv2d output would be empty for input {x.shape[2:]} and spec {spec}")
    return out_h, out_w


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def im2col(x_padded: np.ndarray, kernel: Tuple[int, int], stride: int, dilation: int,
           out_hw: Tuple[int, int]) -> np.ndarray:
    """
    Gather every receptive window of a padded input into columns.

    Returns:
        cols of shape (N, C*kh*kw, Ho*Wo), rows ordered (c, i, j)
    """
    x_padded = np.ascontiguousarray(x_padded)
    n, c = x_padded.shape[:2]
    kh, kw = kernel
    out_h, out_w = out_hw
    s_n, s_c, s_h, s_w = x_padded.strides
    patches = as_strided(
        x_padded,
        shape=(n, c, kh, kw, out_h, out_w),
        strides=(s_n, s_c, dilation * s_h, dilation * s_w, stride * s_h, stride * s_w),
        writeable=False,
    )
    return patches.reshape(n, c * kh * kw, out_h * out_w)


def col2im(cols: np.ndarray, padded_shape: Tuple[int, int, int, int], kernel: Tuple[int, int],
           stride: int, dilation: int, out_hw: Tuple[int, int]) -> np.ndarray:
    """Scatter-add columns back onto the padded input grid (adjoint of im2col)."""
    n, c, hp, wp = padded_shape
    kh, kw = kernel
    out_h, out_w = out_hw
    grid = np.zeros(padded_shape, dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, out_h, out_w)
    for i in range(kh):
        top = i * dilation
        for j in range(kw):
            left = j * dilation
            grid[:, :, top:top + stride * (out_h - 1) + 1:stride,
                 left:left + stride * (out_w - 1) + 1:stride] += cols[:, :, i, j]
    return grid


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: Optional[np.ndarray],
                   spec: ConvSpec) -> np.ndarray:
    """
    out[n,o,y,x] = bias[o] + sum_{c,i,j} w[o,c,i,j] * in[n,c, y*s - pad + i*d, x*s - pad + j*d].

    Raises:
        ShapeMismatchError: On inconsistent shapes or an empty output
    """
    out, _ = _conv2d_forward_cols(x, weights, bias, spec)
    return out


def _conv2d_forward_cols(x, weights, bias, spec):
    out_h, out_w = _check_conv_shapes(x, weights, bias, spec)
    cols = im2col(_pad(x, spec.padding), spec.kernel, spec.stride, spec.dilation, (out_h, out_w))
    out = np.matmul(weights.reshape(spec.out_channels, -1), cols)
    if bias is not None:
        out = out + bias[None, :, None]
    return out.reshape(x.shape[0], spec.out_channels, out_h, out_w), cols


def _conv2d_grads(upstream: np.ndarray, cols: np.ndarray, input_shape: tuple,
                  weights: np.ndarray, spec: ConvSpec):
    n, c, h, w = input_shape
    out_h, out_w = upstream.shape[2:]
    go = upstream.reshape(n, spec.out_channels, out_h * out_w)

    grad_weights = np.tensordot(go, cols, axes=([0, 2], [0, 2])).reshape(weights.shape)
    grad_bias = upstream.sum(axis=(0, 2, 3))

    w_mat = weights.reshape(spec.out_channels, -1)
    grad_cols = np.matmul(w_mat.T, go)
    pad = spec.padding
    padded_shape = (n, c, h + 2 * pad, w + 2 * pad)
    grad_padded = col2im(grad_cols, padded_shape, spec.kernel, spec.stride, spec.dilation, (out_h, out_w))
    grad_input = grad_padded[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(grad_input), grad_weights, grad_bias


def conv2d_backward(upstream_grad: np.ndarray, saved_input: Optional[np.ndarray],
                    weights: np.ndarray, spec: ConvSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of conv2d with respect to input, weights and bias.

    Args:
        upstream_grad: dL/dout, shaped like the forward output
        saved_input: The forward input
        weights: The forward weights
        spec: The forward geometry

    Returns:
        (grad_input, grad_weights, grad_bias)

    Raises:
        MissingContextError: If saved_input is None
        ShapeMismatchError: If upstream_grad does not match the forward output shape
    """
    if saved_input is None:
        raise MissingContextError("conv2d_backward needs the saved forward input")
    out_h, out_w = _check_conv_shapes(saved_input, weights, None, spec)
    expected = (saved_input.shape[0], spec.out_channels, out_h, out_w)
    if upstream_grad.shape != expected:
        raise ShapeMismatchError(f"upstream gradient shape {upstream_grad.shape} != forward output {expected}")
    cols = im2col(_pad(saved_input, spec.padding), spec.kernel, spec.stride, spec.dilation, (out_h, out_w))
    return _conv2d_grads(upstream_grad, cols, saved_input.shape, weights, spec)


def conv2d(x: Tensor, weights: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    """Differentiable dilated convolution (see conv2d_forward)."""
    out, cols = _conv2d_forward_cols(x.data, weights.data, None if bias is None else bias.data, spec)
    input_shape = x.shape

    def backward(g):
        grad_input, grad_weights, grad_bias = _conv2d_grads(g, cols, input_shape, weights.data, spec)
        return (grad_input, grad_weights) + ((grad_bias,) if bias is not None else ())

    parents = (x, weights) + ((bias,) if bias is not None else ())
    return make_result(out, parents, backward, f"conv2d(d={spec.dilation})")


def dilate_kernel(weights: Union[Tensor, np.ndarray], d: int) -> Union[Tensor, np.ndarray]:
    """
    Spread kernel taps ``d`` apart with zeros in between.

    Args:
        weights: [O, C, k, k] kernel
        d: Dilation rate (>= 1)

    Returns:
        [O, C, k+(k-1)(d-1), k+(k-1)(d-1)] kernel of the same kind as the input
    """
    if d < 1:
        raise ValueError(f"dilation must be >= 1, got {d}")
    raw = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
    if d == 1:
        result = raw.copy()
    else:
        o, c, kh, kw = raw.shape
        result = np.zeros((o, c, kh + (kh - 1) * (d - 1), kw + (kw - 1) * (d - 1)), dtype=raw.dtype)
        result[:, :, ::d, ::d] = raw
    return Tensor(result) if isinstance(weights, Tensor) else result


# =============================================================================
# Pooling, dense, activation, resampling
# =============================================================================

def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: [N,C,H,W] -> [N,C]."""
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeMismatchError(f"global_avg_pool expects non-empty [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    area = h * w

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / area, (n, c, h, w)).astype(g.dtype),)

    return make_result(x.data.mean(axis=(2, 3)), (x,), backward, "global_avg_pool")


def _pool_windows(x: np.ndarray, window: int, stride: int) -> Tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    out_h = (h - window) // stride + 1
    out_w = (w - window) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeMismatchError(f"max_pool2d window {window} larger than input {x.shape[2:]}")
    x = np.ascontiguousarray(x)
    s_n, s_c, s_h, s_w = x.strides
    windows = as_strided(x, shape=(n, c, out_h, out_w, window, window),
                         strides=(s_n, s_c, stride * s_h, stride * s_w, s_h, s_w), writeable=False)
    return windows.reshape(n, c, out_h, out_w, window * window), out_h, out_w


def max_pool2d_forward(x: np.ndarray, window: int = 2, stride: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """
    Max over windows; ties resolve to the lowest linear index in the window.

    Returns:
        (output, argmax index within each window)
    """
    windows, _, _ = _pool_windows(x, window, stride)
    arg = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return out, arg


def max_pool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Differentiable max-pool; the gradient goes to each window's argmax."""
    out, arg = max_pool2d_forward(x.data, window, stride)
    n, c, h, w = x.shape
    out_h, out_w = out.shape[2:]

    def backward(g):
        rows = np.arange(out_h)[:, None] * stride + arg // window
        cols = np.arange(out_w)[None, :] * stride + arg % window
        flat = (np.arange(n * c).reshape(n, c, 1, 1) * (h * w) + rows * w + cols).ravel()
        grad = np.zeros(n * c * h * w, dtype=g.dtype)
        np.add.at(grad, flat, g.ravel())
        return (grad.reshape(n, c, h, w),)

    return make_result(out, (x,), backward, "max_pool2d")


def fully_connected(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map [N,F] -> [N,C] with W of shape [C,F]."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ShapeMismatchError(f"fully_connected cannot map {x.shape} with weights {weights.shape}")
    if bias.shape != (weights.shape[0],):
        raise ShapeMismatchError(f"fully_connected bias shape {bias.shape} != ({weights.shape[0]},)")

    def backward(g):
        return g @ weights.data, g.T @ x.data, g.sum(axis=0)

    return make_result(x.data @ weights.data.T + bias.data, (x, weights, bias), backward, "fully_connected")


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at 0 is 0."""
    positive = x.data > 0
    return make_result(np.where(positive, x.data, 0), (x,), lambda g: (g * positive,), "relu")


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """
    1-D linear interpolation weights with half-pixel centers and edge clamping.

    Returns:
        (n_out, n_in) matrix R with out = R @ in; identity when n_in == n_out
    """
    matrix = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    low = np.floor(src).astype(np.int64)
    high = np.minimum(low + 1, n_in - 1)
    frac = src - low
    rows = np.arange(n_out)
    np.add.at(matrix, (rows, low), 1.0 - frac)
    np.add.at(matrix, (rows, high), frac)
    return matrix


def upsample_bilinear_forward(x: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize of the last two axes of x to ``size``."""
    r_h = bilinear_matrix(x.shape[-2], size[0], x.dtype)
    r_w = bilinear_matrix(x.shape[-1], size[1], x.dtype)
    return np.matmul(np.matmul(r_h, x), r_w.T)


def upsample_bilinear(x: Tensor, size: Tuple[int, int]) -> Tensor:
    """Differentiable bilinear resize of [N,C,h,w] to [N,C,H,W]."""
    r_h = bilinear_matrix(x.shape[-2], size[0], x.dtype)
    r_w = bilinear_matrix(x.shape[-1], size[1], x.dtype)
    out = np.matmul(np.matmul(r_h, x.data), r_w.T)
    return make_result(out, (x,), lambda g: (np.matmul(np.matmul(r_h.T, g), r_w),), "upsample_bilinear")


# =============================================================================
# Losses
# =============================================================================

def sigmoid_cross_entropy_multilabel(logits: Tensor, labels: np.ndarray) -> Tensor:
    """
    Mean over N*C of -[y log s(z) + (1-y) log(1-s(z))], in the stable
    max(z,0) - z*y + log(1 + exp(-|z|)) form.

    Raises:
        LabelError: If labels are not binary
        ShapeMismatchError: If labels and logits differ in shape
    """
    labels = np.asarray(labels)
    if labels.shape != logits.shape:
        raise ShapeMismatchError(f"labels shape {labels.shape} != logits shape {logits.shape}")
    validate_binary_labels(labels)
    z = logits.data
    y = labels.astype(z.dtype)
    count = z.size
    loss = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).sum() / count

    def backward(g):
        return ((expit(z) - y) * (g / count),)

    return make_result(np.asarray(loss), (logits,), backward, "sigmoid_cross_entropy_multilabel")


def _target_array(target, logits_shape: tuple) -> np.ndarray:
    labels = getattr(target, "labels", target)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    expected = (logits_shape[0],) + tuple(logits_shape[2:])
    if labels.shape != expected:
        raise ShapeMismatchError(f"target shape {labels.shape} != {expected}")
    return labels.astype(np.int64)


def pixel_softmax_ce_ignored(logits: Tensor, target, per_image: bool = False) -> Tensor:
    """
    Softmax cross-entropy over labeled pixels, divided by the number of labeled pixels.

    IGNORE pixels contribute neither loss nor gradient; an all-IGNORE target gives 0.

    Args:
        logits: [N, K, H, W] class scores
        target: PseudoMask or integer array [N,H,W] ([H,W] when N == 1)
        per_image: Normalize each image by its own labeled count and average over
            images (the per-image loss of the weak/strong objectives); identical
            to the pooled form when N == 1

    Raises:
        LabelError: If a class id is >= K
    """
    if logits.ndim != 4:
        raise ShapeMismatchError(f"pixel_softmax_ce_ignored expects [N,K,H,W] logits, got {logits.shape}")
    labels = _target_array(target, logits.shape)
    num_channels = logits.shape[1]
    valid = labels != IGNORE
    if np.any(labels[valid] >= num_channels) or np.any(labels[valid] < 0):
        raise LabelError(f"target holds a class id outside 0..{num_channels - 1}")

    z = logits.data
    dtype = z.dtype
    if per_image:
        counts = valid.reshape(valid.shape[0], -1).sum(axis=1)
        scale = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0) / valid.shape[0]
        weights = valid * scale[:, None, None]
    else:
        total = valid.sum()
        weights = valid * (1.0 / total if total > 0 else 0.0)
    weights = weights.astype(dtype)

    safe = np.where(valid, labels, 0)
    log_probs = log_softmax(z, axis=1)
    picked = np.take_along_axis(log_probs, safe[:, None], axis=1)[:, 0]
    loss = -np.where(valid, picked * weights, 0).sum(dtype=dtype)

    def backward(g):
        probs = softmax(z, axis=1)
        one_hot = np.zeros_like(probs)
        np.put_along_axis(one_hot, safe[:, None], 1.0, axis=1)
        return ((probs - one_hot) * (weights * g)[:, None],)

    return make_result(np.asarray(loss, dtype=dtype), (logits,), backward, "pixel_softmax_ce_ignored")
