"""Forward/backward numpy kernels for the layers of the ECG encoder.

All arrays are channels-last: activations are ``[batch, length, channels]``.
Every kernel preserves the floating dtype of its inputs, so the same code runs
in float32 for training and in float64 for gradient checks.

Forward functions return ``(output, cache)``; the matching backward takes the
upstream gradient and the cache.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ConfigError, DimensionError


def _check_rank(x: np.ndarray, rank: int, what: str) -> None:
    if x.ndim != rank:
        raise DimensionError(f"{what}: expected rank {rank}, got shape {x.shape}")


def same_padding(length: int, kernel: int, stride: int) -> tuple[int, int]:
    """Left/right zero padding for ``same`` convolution.

    The output length is ``ceil(length / stride)``; an odd pad total puts the
    extra zero on the right.
    """
    out = math.ceil(length / stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2


def _windows(x: np.ndarray, size: int, stride: int, n_out: int) -> np.ndarray:
    """Strided view ``[B, n_out, size, C]`` over the length axis of ``x``."""
    b, _, c = x.shape
    sb, sl, sc = x.strides
    return as_strided(x, shape=(b, n_out, size, c), strides=(sb, sl * stride, sl, sc), writeable=False)


def conv1d_forward(x, kernel, stride=1, padding="same"):
    """Bias-free 1-D cross-correlation.

    Args:
        x: ``[B, L, Cin]``.
        kernel: ``[K, Cin, Cout]``.
        stride: positive step along the length axis.
        padding: ``"same"`` or ``"valid"``.
    """
    _check_rank(x, 3, "conv1d input")
    _check_rank(kernel, 3, "conv1d kernel")
    k, cin, cout = kernel.shape
    if k < 1:
        raise DimensionError("conv1d kernel: axis 0 (taps) must be >= 1")
    if x.shape[2] != cin:
        raise DimensionError(
            f"conv1d: input axis 2 (channels) is {x.shape[2]} but kernel axis 1 expects {cin}"
        )
    if stride < 1:
        raise ConfigError(f"conv1d stride must be positive, got {stride}")
    b, length, _ = x.shape
    if padding == "same":
        left, right = same_padding(length, k, stride)
    elif padding == "valid":
        left = right = 0
    else:
        raise ConfigError(f"unknown padding {padding!r}")
    padded_len = length + left + right
    if padded_len < k:
        raise DimensionError(f"conv1d: input axis 1 (length) {length} shorter than kernel {k}")
    n_out = (padded_len - k) // stride + 1
    if left or right:
        xp = np.zeros((b, padded_len, cin), dtype=x.dtype)
        xp[:, left:left + length] = x
    else:
        xp = np.ascontiguousarray(x)
    if k == 1:
        cols = xp[:, : (n_out - 1) * stride + 1 : stride].reshape(b * n_out, cin)
    else:
        cols = _windows(xp, k, stride, n_out).reshape(b * n_out, k * cin)
    out = (cols @ kernel.reshape(k * cin, cout)).reshape(b, n_out, cout)
    cache = (cols, kernel, x.shape, stride, left, padded_len, n_out)
    return out, cache


def conv1d_backward(dout, cache, need_input_grad=True):
    cols, kernel, x_shape, stride, left, padded_len, n_out = cache
    k, cin, cout = kernel.shape
    b, length, _ = x_shape
    dflat = dout.reshape(b * n_out, cout)
    dkernel = (cols.T @ dflat).reshape(k, cin, cout)
    if not need_input_grad:
        return None, dkernel
    dcols = (dflat @ kernel.reshape(k * cin, cout).T).reshape(b, n_out, k, cin)
    dxp = np.zeros((b, padded_len, cin), dtype=dout.dtype)
    span = (n_out - 1) * stride + 1
    for tap in range(k):
        dxp[:, tap:tap + span:stride] += dcols[:, :, tap]
    return dxp[:, left:left + length], dkernel


def batchnorm_forward(x, gamma, beta, moving_mean, moving_var, training, momentum=0.99, epsilon=1e-3):
    """Per-channel batch normalization over the batch and length axes.

    In training mode the moving statistics are updated in place with an
    exponential moving average (``moving = momentum * moving + (1 - momentum) * batch``)
    using the biased batch variance.
    """
    _check_rank(x, 3, "batchnorm input")
    if epsilon < 0:
        raise ConfigError(f"batchnorm epsilon must be non-negative, got {epsilon}")
    c = x.shape[2]
    for name, arr in (("gamma", gamma), ("beta", beta), ("moving_mean", moving_mean), ("moving_var", moving_var)):
        if arr.shape != (c,):
            raise DimensionError(f"batchnorm {name}: expected shape ({c},) got {arr.shape}")
    if training:
        mean = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        moving_mean *= momentum
        moving_mean += (1 - momentum) * mean.astype(moving_mean.dtype)
        moving_var *= momentum
        moving_var += (1 - momentum) * var.astype(moving_var.dtype)
    else:
        mean = moving_mean.astype(x.dtype)
        var = moving_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(epsilon))
    x_hat = (x - mean) * inv_std
    out = x_hat * gamma + beta
    return out, (x_hat, inv_std, gamma, training)


def batchnorm_backward(dout, cache):
    x_hat, inv_std, gamma, training = cache
    dgamma = (dout * x_hat).sum(axis=(0, 1))
    dbeta = dout.sum(axis=(0, 1))
    dx_hat = dout * gamma
    if not training:
        return dx_hat * inv_std, dgamma, dbeta
    m = dout.shape[0] * dout.shape[1]
    dx = (inv_std / m) * (
        m * dx_hat - dx_hat.sum(axis=(0, 1)) - x_hat * (dx_hat * x_hat).sum(axis=(0, 1))
    )
    return dx, dgamma, dbeta


def maxpool1d_forward(x, pool, stride):
    """Windowed maximum along the length axis (valid windows only)."""
    _check_rank(x, 3, "maxpool input")
    b, length, c = x.shape
    if pool < 1 or stride < 1:
        raise ConfigError("maxpool pool and stride must be positive")
    if length < pool:
        raise DimensionError(f"maxpool: input axis 1 (length) {length} < pool {pool}")
    n_out = (length - pool) // stride + 1
    win = _windows(np.ascontiguousarray(x), pool, stride, n_out)
    arg = win.argmax(axis=2)  # first index on ties
    out = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return out, (arg, x.shape, pool, stride)


def maxpool1d_backward(dout, cache):
    arg, x_shape, pool, stride = cache
    b, length, c = x_shape
    n_out = arg.shape[1]
    dx = np.zeros(x_shape, dtype=dout.dtype)
    pos = arg + (np.arange(n_out) * stride)[None, :, None]
    bi = np.broadcast_to(np.arange(b)[:, None, None], pos.shape)
    ci = np.broadcast_to(np.arange(c)[None, None, :], pos.shape)
    if stride >= pool:
        dx[bi, pos, ci] = dout
    else:
        np.add.at(dx, (bi, pos, ci), dout)
    return dx


def global_avg_pool_forward(x):
    _check_rank(x, 3, "global average pool input")
    if x.shape[1] < 1:
        raise DimensionError("global average pool: input axis 1 (length) must be >= 1")
    return x.mean(axis=1), x.shape


def global_avg_pool_backward(dout, x_shape):
    return np.broadcast_to(dout[:, None, :] / x_shape[1], x_shape).copy()


def dense_forward(x, weight, bias):
    """Affine map ``x @ weight + bias``."""
    _check_rank(x, 2, "dense input")
    _check_rank(weight, 2, "dense weight")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"dense: input axis 1 is {x.shape[1]} but weight axis 0 expects {weight.shape[0]}"
        )
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"dense bias: expected shape ({weight.shape[1]},) got {bias.shape}")
    return x @ weight + bias, (x, weight)


def dense_backward(dout, cache):
    x, weight = cache
    return dout @ weight.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(x):
    mask = x > 0
    return np.maximum(x, 0), mask


def relu_backward(dout, mask):
    return dout * mask
