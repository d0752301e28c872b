import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import DimensionError
from src.optim import SGD, sgd_step
from src.tensor import Tensor


def test_plain_gradient_descent():
    p, g = np.array([1.0, -2.0]), np.array([0.5, 0.5])
    velocity = [None]
    (new,) = sgd_step([p], [g], lr=0.1, momentum=0.0, weight_decay=0.0, velocity=velocity)
    assert_allclose(new, p - 0.1 * g)


def test_momentum_decays_geometrically_without_gradient():
    p = np.array([1.0])
    velocity = [np.array([2.0])]
    for step in range(1, 4):
        (p,) = sgd_step([p], [np.zeros(1)], lr=0.1, momentum=0.5, weight_decay=0.0, velocity=velocity)
        assert velocity[0][0] == pytest.approx(2.0 * 0.5 ** step)
    assert p[0] == pytest.approx(1.0 - 0.1 * (1.0 + 0.5 + 0.25))


def test_weight_decay_is_coupled():
    p = np.array([2.0])
    velocity = [None]
    (new,) = sgd_step([p], [np.array([1.0])], lr=0.1, momentum=0.9, weight_decay=0.5, velocity=velocity)
    assert_allclose(velocity[0], [2.0])
    assert_allclose(new, [1.8])


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        sgd_step([np.zeros(2)], [np.zeros(3)], 0.1, 0.0, 0.0, [None])
    with pytest.raises(DimensionError):
        sgd_step([np.zeros(2)], [], 0.1, 0.0, 0.0, [None])


def test_optimizer_updates_tensors():
    w = Tensor([1.0, 1.0], requires_grad=True)
    opt = SGD([w], lr=0.5, momentum=0.0, weight_decay=0.0)
    (w * 2.0).sum().backward()
    opt.step()
    assert_allclose(w.data, [0.0, 0.0])
    opt.zero_grad()
    assert w.grad is None


def test_parameter_without_gradient_only_decays():
    w = Tensor([4.0], requires_grad=True)
    opt = SGD([w], lr=0.1, momentum=0.0, weight_decay=0.5)
    opt.step()
    assert_allclose(w.data, [3.8])
