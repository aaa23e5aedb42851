"""
SGD with momentum and weight decay, plus the step-decay learning-rate schedule.
"""

from typing import Dict, Mapping, Optional

import numpy as np

from src.core.autograd import Tensor
from src.utils.logger import setup_logger


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or gradient becomes NaN/Inf during training."""
    pass


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, Optional[np.ndarray]],
             lr: float, momentum: float = 0.9, weight_decay: float = 5e-4,
             velocity: Optional[Dict[str, np.ndarray]] = None) -> Dict[str, np.ndarray]:
    """
    One SGD update: v <- mu*v + g + lambda*theta; theta <- theta - lr*v.

    Args:
        params: Parameter arrays by name (updated in place)
        grads: Gradients by name; a missing or None gradient counts as zero
        lr: Learning rate (0 leaves parameters unchanged)
        momentum: mu
        weight_decay: lambda
        velocity: Momentum state by name (updated in place; zeros when absent)

    Returns:
        The updated params mapping

    Raises:
        ValueError: If lr is negative
        TrainingDivergedError: If a gradient is not finite
    """
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    if velocity is None:
        velocity = {}

    for name, theta in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(theta)
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(f"non-finite gradient for parameter {name}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(theta)
        v = momentum * v + grad + weight_decay * theta
        velocity[name] = v.astype(theta.dtype, copy=False)
        if lr != 0:
            theta -= (lr * velocity[name]).astype(theta.dtype, copy=False)
    return params


def step_decay_lr(epoch: int, base_lr: float, decay_epoch: int, gamma: float = 0.1) -> float:
    """
    Learning rate for a 0-based epoch: base_lr until decay_epoch, base_lr*gamma after.

    15 epochs with decay_epoch=6 give 6 epochs at base_lr and 9 at base_lr/10.
    """
    return base_lr if epoch < decay_epoch else base_lr * gamma


class SGD:
    """Momentum SGD over a named parameter map of Tensors (single writer)."""

    def __init__(self, params: Dict[str, Tensor], lr: float, momentum: float = 0.9,
                 weight_decay: float = 5e-4):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {}
        self.logger = setup_logger("SGD")

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def step(self) -> None:
        """Apply one update from the gradients currently held by the parameters."""
        sgd_step(
            {name: tensor.data for name, tensor in self.params.items()},
            {name: tensor.grad for name, tensor in self.params.items()},
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            velocity=self.velocity,
        )

    def set_lr(self, lr: float) -> None:
        if lr != self.lr:
            self.logger.info(f"Learning rate {self.lr:g} -> {lr:g}")
        self.lr = lr
