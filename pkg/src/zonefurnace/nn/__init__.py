"""Small reverse-mode autodiff engine and the multi-layer perceptron built on it."""

from .network import DEFAULT_HIDDEN, Adam, Mlp, adam_step, gradient_check, load_checkpoint, save_checkpoint
from .tensor import Tensor, backward, detach

__all__ = ["Adam", "DEFAULT_HIDDEN", "Mlp", "Tensor", "adam_step", "backward", "detach", "gradient_check",
           "load_checkpoint", "save_checkpoint"]
