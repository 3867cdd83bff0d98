"""Graph-recording wrappers around the numpy kernels."""
from __future__ import annotations

import numpy as np

from . import kernels as K
from .tensor import Parameter, Tensor, record
from ..errors import DimensionError


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def conv1d(x, kernel: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    x = _t(x)
    out, cache = K.conv1d_forward(x.data, kernel.data, stride, padding)
    need_dx = x.requires_grad

    def _backward(g):
        return K.conv1d_backward(g, cache, need_input_grad=need_dx)

    return record(out, (x, kernel), _backward)


def batch_norm(
    x,
    gamma: Tensor,
    beta: Tensor,
    moving_mean: Parameter,
    moving_var: Parameter,
    training: bool,
    momentum: float = 0.99,
    epsilon: float = 1e-3,
    update_stats: bool = True,
) -> Tensor:
    """Batch normalization; ``update_stats=False`` freezes the moving averages in train mode."""
    x = _t(x)
    if training and not update_stats:
        mm, mv = moving_mean.data.copy(), moving_var.data.copy()
    else:
        mm, mv = moving_mean.data, moving_var.data
    out, cache = K.batchnorm_forward(x.data, gamma.data, beta.data, mm, mv, training, momentum, epsilon)

    def _backward(g):
        return K.batchnorm_backward(g, cache)

    return record(out, (x, gamma, beta), _backward)


def max_pool1d(x, pool: int, stride: int) -> Tensor:
    x = _t(x)
    out, cache = K.maxpool1d_forward(x.data, pool, stride)
    return record(out, (x,), lambda g: (K.maxpool1d_backward(g, cache),))


def global_avg_pool(x) -> Tensor:
    x = _t(x)
    out, shape = K.global_avg_pool_forward(x.data)
    return record(out, (x,), lambda g: (K.global_avg_pool_backward(g, shape),))


def dense(x, weight: Tensor, bias: Tensor) -> Tensor:
    x = _t(x)
    out, cache = K.dense_forward(x.data, weight.data, bias.data)
    return record(out, (x, weight, bias), lambda g: K.dense_backward(g, cache))


def relu(x) -> Tensor:
    x = _t(x)
    out, mask = K.relu_forward(x.data)
    return record(out, (x,), lambda g: (K.relu_backward(g, mask),))


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def total(x) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    x = _t(x)
    shape = x.shape
    return record(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def softmax_cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Mean categorical cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    logits = _t(logits)
    z = logits.data
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise DimensionError(f"cross-entropy: logits {z.shape} vs labels {labels.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = (log_norm - shifted[rows, labels]).mean()

    def _backward(g):
        p = np.exp(shifted - log_norm[:, None])
        p[rows, labels] -= 1
        return (p * (g / z.shape[0]),)

    return record(np.asarray(loss, dtype=z.dtype), (logits,), _backward)


def mean_squared_error(pred, target: np.ndarray) -> Tensor:
    pred = _t(pred)
    target = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    diff = pred.data - target
    loss = np.asarray((diff ** 2).mean(), dtype=pred.dtype)
    return record(loss, (pred,), lambda g: (2 * diff * (g / diff.size),))
