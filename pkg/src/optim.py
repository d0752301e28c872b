import logging
from typing import List, Optional, Sequence

import numpy as np

from .errors import DimensionError
from .tensor import Tensor

logger = logging.getLogger(__name__)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[Optional[np.ndarray]], lr: float, momentum: float,
             weight_decay: float, velocity: List[Optional[np.ndarray]]) -> List[np.ndarray]:
    """
    One SGD update with momentum and coupled weight decay:
    v <- momentum * v + (g + wd * p);  p <- p - lr * v.
    ``velocity`` is updated in place; returns the new parameter arrays.
    """
    if len(params) != len(grads) or len(params) != len(velocity):
        raise DimensionError("params, grads and velocity must have equal length")
    updated = []
    for idx, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p) if g is None else g
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        v = velocity[idx]
        step = g + weight_decay * p
        v = step if v is None else momentum * v + step
        velocity[idx] = v
        updated.append(p - lr * v)
    return updated


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, momentum: float = 0.9, weight_decay: float = 5e-4):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: List[Optional[np.ndarray]] = [None] * len(self.params)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        new = sgd_step([p.data for p in self.params], [p.grad for p in self.params],
                       self.lr, self.momentum, self.weight_decay, self.velocity)
        for p, data in zip(self.params, new):
            p.data = data
