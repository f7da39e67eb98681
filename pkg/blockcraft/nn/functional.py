"""
Differentiable layer rules.

Every function takes :class:`~blockcraft.core.autodiff.Variable` inputs,
computes the forward value with numpy and records one node whose backward
rule keeps only the context it needs.
"""

from __future__ import annotations
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from blockcraft.core.autodiff import Variable, add, record_op, relu
from blockcraft.core.tensor import Tensor
from blockcraft.errors import LabelError, ShapeError

Padding = Union[int, str]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

__all__ = [
    "conv2d",
    "conv_output_extent",
    "resolve_padding",
    "dense",
    "batchnorm_train",
    "batchnorm_eval",
    "maxpool2d",
    "global_avg_pool",
    "relu",
    "residual_add",
    "softmax",
    "softmax_cross_entropy",
    "BN_EPS",
    "BN_MOMENTUM",
]


def resolve_padding(padding: Padding, kernel: int) -> int:
    """
    Zero-padding amount for ``"valid"``, ``"same"`` or an explicit int.

    ``"same"`` keeps the spatial extent at stride 1 for odd kernels.
    """
    if padding == "valid":
        return 0
    if padding == "same":
        if kernel % 2 == 0:
            raise ShapeError(f"'same' padding needs an odd kernel, got {kernel}")
        return (kernel - 1) // 2
    if isinstance(padding, int) and padding >= 0:
        return padding
    raise ShapeError(f"invalid padding {padding!r}")


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    """
    Output extent ``(size + 2*padding - kernel) // stride + 1``.

    Raises
    ------
    ShapeError
        If the kernel is larger than the padded input
    """
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    padded = size + 2 * padding
    if kernel > padded:
        raise ShapeError(
            f"kernel larger than padded input: kernel {kernel} > {padded} "
            f"(extent {size}, padding {padding})"
        )
    return (padded - kernel) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided view ``[B, C, H', W', kh, kw]`` of kernel windows."""
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d(
    x: Variable,
    weight: Variable,
    bias: Optional[Variable] = None,
    stride: int = 1,
    padding: Padding = 0,
) -> Variable:
    """
    2-D cross-correlation (no kernel flip).

    Parameters
    ----------
    x : Variable
        Input ``[B, C, H, W]``
    weight : Variable
        Kernels ``[C', C, kh, kw]``
    bias : Optional[Variable]
        Per-output-channel bias ``[C']``
    stride : int
        Step between windows, at least 1
    padding : Padding
        ``"valid"``, ``"same"`` or zero-padding amount

    Returns
    -------
    Variable
        Output ``[B, C', H', W']``

    Examples
    --------
    >>> x = Variable.constant(np.ones((1, 1, 3, 3)))
    >>> w = Variable.constant(np.ones((1, 1, 2, 2)))
    >>> conv2d(x, w).data[0, 0]
    array([[4., 4.],
           [4., 4.]])
    """
    if x.value.ndim != 4 or weight.value.ndim != 4:
        raise ShapeError(
            f"conv2d needs 4-D input and weight, got {x.shape} and {weight.shape}"
        )
    batch, channels, height, width = x.shape
    out_ch, in_ch, kh, kw = weight.shape
    if in_ch != channels:
        raise ShapeError(f"conv2d channel mismatch: input {channels}, weight {in_ch}")
    if bias is not None and bias.shape != (out_ch,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({out_ch},)")
    pad = resolve_padding(padding, kh)
    out_h = conv_output_extent(height, kh, stride, pad)
    out_w = conv_output_extent(width, kw, stride, pad)

    xp = x.data
    if pad:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _windows(xp, kh, kw, stride)
    w = weight.data
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    padded_shape = xp.shape

    def rule(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grad_w = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        grad_cols = np.tensordot(g, w, axes=([1], [0]))  # [B, H', W', C, kh, kw]
        grad_xp = np.zeros(padded_shape, dtype=g.dtype)
        h_end = stride * (out_h - 1) + 1
        w_end = stride * (out_w - 1) + 1
        for i in range(kh):
            for j in range(kw):
                grad_xp[:, :, i : i + h_end : stride, j : j + w_end : stride] += grad_cols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        grad_x = grad_xp[:, :, pad : pad + height, pad : pad + width] if pad else grad_xp
        grad_b = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (np.ascontiguousarray(grad_x), grad_w, grad_b)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record_op("conv2d", Tensor.wrap(out), inputs, rule)


def dense(x: Variable, weight: Variable, bias: Optional[Variable] = None) -> Variable:
    """
    Affine map ``x @ weight.T + bias``.

    Parameters
    ----------
    x : Variable
        Input ``[B, F]``
    weight : Variable
        Weights ``[N, F]``
    bias : Optional[Variable]
        Bias ``[N]``
    """
    if x.value.ndim != 2 or weight.value.ndim != 2:
        raise ShapeError(f"dense needs 2-D operands, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"dense feature mismatch: input has {x.shape[1]}, weight expects "
            f"{weight.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense bias shape {bias.shape} != ({weight.shape[0]},)")
    xv, w = x.data, weight.data
    out = xv @ w.T
    if bias is not None:
        out = out + bias.data

    def rule(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grad_b = g.sum(axis=0) if bias is not None else None
        return (g @ w, g.T @ xv, grad_b)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record_op("dense", Tensor.wrap(out), inputs, rule)


def _per_channel(v: np.ndarray) -> np.ndarray:
    return v[None, :, None, None]


def batchnorm_train(
    x: Variable,
    gamma: Variable,
    beta: Variable,
    eps: float = BN_EPS,
) -> Tuple[Variable, np.ndarray, np.ndarray]:
    """
    Batch normalization with batch statistics.

    Returns
    -------
    Tuple[Variable, np.ndarray, np.ndarray]
        Output, per-channel batch mean, per-channel unbiased batch variance
        (for the caller's running statistics)

    Raises
    ------
    ShapeError
        If a channel holds fewer than two values
    """
    _check_bn_shapes(x, gamma, beta)
    batch, channels, height, width = x.shape
    count = batch * height * width
    if count < 2:
        raise ShapeError(
            f"batchnorm in train mode needs at least 2 values per channel, got {count}"
        )
    xv = x.data
    dtype = xv.dtype
    mu = xv.mean(axis=(0, 2, 3))
    centered = xv - _per_channel(mu)
    var = (centered * centered).mean(axis=(0, 2, 3))
    inv_std = (1.0 / np.sqrt(var + dtype.type(eps))).astype(dtype)
    xhat = centered * _per_channel(inv_std)
    g_val, b_val = gamma.data, beta.data
    out = xhat * _per_channel(g_val) + _per_channel(b_val)
    n = dtype.type(count)

    def rule(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        grad_beta = g.sum(axis=(0, 2, 3))
        grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
        dxhat = g * _per_channel(g_val)
        sum_dxhat = dxhat.sum(axis=(0, 2, 3))
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))
        grad_x = (
            _per_channel(inv_std / n)
            * (n * dxhat - _per_channel(sum_dxhat) - xhat * _per_channel(sum_dxhat_xhat))
        )
        return (grad_x.astype(dtype), grad_gamma, grad_beta)

    result = record_op("batchnorm", Tensor.wrap(out), (x, gamma, beta), rule)
    unbiased = var * dtype.type(count / (count - 1))
    return result, mu, unbiased


def batchnorm_eval(
    x: Variable,
    gamma: Variable,
    beta: Variable,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = BN_EPS,
) -> Variable:
    """Batch normalization as a fixed affine map from running statistics."""
    _check_bn_shapes(x, gamma, beta)
    xv = x.data
    dtype = xv.dtype
    inv_std = (1.0 / np.sqrt(running_var.astype(dtype) + dtype.type(eps))).astype(dtype)
    xhat = (xv - _per_channel(running_mean.astype(dtype))) * _per_channel(inv_std)
    g_val = gamma.data
    out = xhat * _per_channel(g_val) + _per_channel(beta.data)

    def rule(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        return (
            g * _per_channel(g_val * inv_std),
            (g * xhat).sum(axis=(0, 2, 3)),
            g.sum(axis=(0, 2, 3)),
        )

    return record_op("batchnorm", Tensor.wrap(out), (x, gamma, beta), rule)


def _check_bn_shapes(x: Variable, gamma: Variable, beta: Variable) -> None:
    if x.value.ndim != 4:
        raise ShapeError(f"batchnorm needs 4-D input, got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"batchnorm affine shapes {gamma.shape}/{beta.shape} != ({channels},)"
        )


def maxpool2d(x: Variable, kernel: int = 2, stride: Optional[int] = None) -> Variable:
    """
    Max pooling over ``kernel x kernel`` windows.

    Ties go to the lowest flat index inside the window; the backward pass
    routes the whole gradient there.
    """
    if x.value.ndim != 4:
        raise ShapeError(f"maxpool needs 4-D input, got {x.shape}")
    stride = stride or kernel
    batch, channels, height, width = x.shape
    out_h = conv_output_extent(height, kernel, stride, 0)
    out_w = conv_output_extent(width, kernel, stride, 0)
    cols = _windows(x.data, kernel, kernel, stride).reshape(
        batch, channels, out_h, out_w, kernel * kernel
    )
    winner = np.argmax(cols, axis=-1)
    out = np.take_along_axis(cols, winner[..., None], axis=-1)[..., 0]
    in_shape = x.shape

    def rule(g: np.ndarray) -> Tuple[np.ndarray]:
        grad_x = np.zeros(in_shape, dtype=g.dtype)
        h_end = stride * (out_h - 1) + 1
        w_end = stride * (out_w - 1) + 1
        for i in range(kernel):
            for j in range(kernel):
                routed = np.where(winner == i * kernel + j, g, 0).astype(g.dtype)
                grad_x[:, :, i : i + h_end : stride, j : j + w_end : stride] += routed
        return (grad_x,)

    return record_op("maxpool", Tensor.wrap(out), (x,), rule)


def global_avg_pool(x: Variable) -> Variable:
    """Spatial mean ``[B, C, H, W] -> [B, C]``."""
    if x.value.ndim != 4:
        raise ShapeError(f"global average pool needs 4-D input, got {x.shape}")
    batch, channels, height, width = x.shape
    if height * width == 0:
        raise ShapeError(f"global average pool over empty extent {x.shape}")
    out = x.data.mean(axis=(2, 3))
    in_shape = x.shape
    area = x.value.dtype.type(height * width)

    def rule(g: np.ndarray) -> Tuple[np.ndarray]:
        spread = np.broadcast_to((g / area)[:, :, None, None], in_shape)
        return (spread.astype(g.dtype),)

    return record_op("gap", Tensor.wrap(out), (x,), rule)


def residual_add(a: Variable, b: Variable) -> Variable:
    """
    Shortcut sum of identically shaped activations.

    Projection shortcuts are explicit layers; nothing is broadcast here.
    """
    if a.shape != b.shape:
        raise ShapeError(f"residual add shape mismatch: {a.shape} vs {b.shape}")
    return add(a, b)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax of ``[B, N]`` scores (not recorded)."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax needs 2-D logits, got {logits.shape}")
    return Tensor.wrap(np.exp(_log_softmax(logits.data)))


def softmax_cross_entropy(
    logits: Variable, labels: Union[np.ndarray, Sequence[int]]
) -> Tuple[Variable, Tensor]:
    """
    Mean softmax cross-entropy and the class probabilities.

    Parameters
    ----------
    logits : Variable
        Scores ``[B, N]``
    labels : Union[np.ndarray, Sequence[int]]
        Class indices in ``[0, N)``

    Returns
    -------
    Tuple[Variable, Tensor]
        Scalar loss and probabilities ``[B, N]``

    Raises
    ------
    LabelError
        If a label is outside ``[0, N)``
    """
    if logits.value.ndim != 2:
        raise ShapeError(f"cross-entropy needs 2-D logits, got {logits.shape}")
    batch, classes = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} != ({batch},)")
    if batch == 0:
        raise ShapeError("cross-entropy over an empty batch")
    if labels.dtype.kind not in "iu":
        raise LabelError(f"labels must be integers, got dtype {labels.dtype}")
    bad = (labels < 0) | (labels >= classes)
    if np.any(bad):
        index = int(np.argmax(bad))
        raise LabelError(
            f"label {int(labels[index])} at position {index} outside [0, {classes})"
        )

    dtype = logits.value.dtype
    log_probs = _log_softmax(logits.data)
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()
    probs = np.exp(log_probs)

    def rule(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = probs.copy()
        grad[rows, labels] -= dtype.type(1)
        return ((grad * (g / dtype.type(batch))).astype(dtype),)

    value = Tensor.wrap(np.asarray(loss, dtype=dtype))
    return record_op("softmax_ce", value, (logits,), rule), Tensor.wrap(probs)
