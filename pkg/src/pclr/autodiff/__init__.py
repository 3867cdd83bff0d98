"""Numpy tensors, layer kernels, reverse-mode gradients and the Adam optimizer."""
from .tensor import Parameter, Tensor, backward
from .optim import AdamConfig, adam_step, cosine_lr, zero_grad
from . import functional, kernels

__all__ = [
    "Parameter",
    "Tensor",
    "backward",
    "AdamConfig",
    "adam_step",
    "cosine_lr",
    "zero_grad",
    "functional",
    "kernels",
]
