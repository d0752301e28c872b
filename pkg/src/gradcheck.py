"""
Central finite-difference gradients and comparison against the analytic
gradients produced by ``Tensor.backward``.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np

from .tensor import Tensor

logger = logging.getLogger(__name__)


def finite_difference(func: Callable[[], float], params: Sequence[Tensor], eps: float = 1e-5) -> Dict[int, np.ndarray]:
    """
    Centered-difference gradient of ``func`` with respect to every entry of
    every tensor in ``params``. Parameters are perturbed in place and
    restored afterwards.
    """
    grads = {}
    for idx, param in enumerate(params):
        flat = param.data.reshape(-1)
        grad = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fplus = func()
            flat[j] = orig - eps
            fminus = func()
            flat[j] = orig
            grad[j] = (fplus - fminus) / (2 * eps)
        grads[idx] = grad.reshape(param.shape)
    return grads


@dataclass
class GradCheckResult:
    coordinates: int
    passed: int
    worst_rel_error: float

    @property
    def pass_fraction(self) -> float:
        return self.passed / self.coordinates if self.coordinates else 1.0


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                    rtol: float = 1e-4, atol: float = 1e-8) -> GradCheckResult:
    """
    Compare analytic gradients of ``loss_fn()`` with central differences.

    A coordinate passes when its relative error is below ``rtol`` or both
    gradients are below ``atol`` in magnitude.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    numeric = finite_difference(lambda: loss_fn().item(), params, eps=eps)

    total, passed, worst = 0, 0, 0.0
    for idx, a in enumerate(analytic):
        n = numeric[idx]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-300)
        rel = np.abs(a - n) / denom
        small = (np.abs(a) < atol) & (np.abs(n) < atol)
        ok = small | (rel < rtol)
        total += ok.size
        passed += int(ok.sum())
        if (~small).any():
            worst = max(worst, float(rel[~small].max()))
    logger.debug(f"gradcheck: {passed}/{total} coordinates within {rtol}, worst {worst:.3g}")
    return GradCheckResult(coordinates=total, passed=passed, worst_rel_error=worst)
