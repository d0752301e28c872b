import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import ArgumentError, DimensionError
from src.gradcheck import check_gradients
from src.tensor import ComputationTape, Tensor, concat, logsumexp, matmul, parameters_to_vector, softmax


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_identity():
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(Tensor(np.eye(2)), b).data, b.data)


def test_matmul_annihilating():
    out = matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[0.0, 0.0], [0.0, 1.0]]))
    assert np.array_equal(out.data, np.zeros((2, 2)))


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert_allclose(matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), rtol=0, atol=1e-14)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_examples():
    assert_allclose(softmax(Tensor([[0.0, 0.0]]), axis=1).data, [[0.5, 0.5]])
    saturated = softmax(Tensor([[3.0, -1e9]]), axis=1).data
    assert saturated[0, 0] == pytest.approx(1.0)
    assert saturated[0, 1] == pytest.approx(0.0, abs=1e-300)
    e = np.exp([1.0, 2.0, 3.0])
    assert_allclose(softmax(Tensor([[1.0, 2.0, 3.0]]), axis=1).data[0], e / e.sum(), rtol=1e-15)


def test_softmax_rows_sum_to_one(rng):
    out = softmax(Tensor(rng.normal(scale=50.0, size=(6, 5))), axis=1).data
    assert np.all(out >= 0)
    assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_logsumexp_examples():
    assert logsumexp([0.0, 0.0]) == pytest.approx(np.log(2.0), abs=1e-15)
    assert logsumexp([5.0]) == 5.0
    assert logsumexp([1.0, 2.0, 3.0]) == pytest.approx(np.log(np.exp(1) + np.exp(2) + np.exp(3)), rel=1e-15)


def test_logsumexp_is_stable_and_bounded(rng):
    v = rng.normal(scale=300.0, size=7)
    value = logsumexp(v)
    assert np.isfinite(value)
    assert v.max() <= value <= v.max() + np.log(v.size) + 1e-12


def test_logsumexp_empty():
    with pytest.raises(ArgumentError):
        logsumexp([])


def test_backward_sum_gives_ones():
    w = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    w.sum().backward()
    assert np.array_equal(w.grad, np.ones((2, 3)))


def test_backward_zero_scale_gives_zeros():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    (w * 0.0).sum().backward()
    assert np.array_equal(w.grad, np.zeros((2, 2)))


def test_backward_needs_scalar():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ArgumentError):
        (w * 2.0).backward()


def test_backward_accumulates_across_calls():
    w = Tensor([1.0, 2.0], requires_grad=True)
    w.sum().backward()
    w.sum().backward()
    assert_allclose(w.grad, [2.0, 2.0])


def test_shared_subexpression_propagates_once():
    x = Tensor([3.0], requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    assert_allclose(x.grad, [12.0])


def test_tape_orders_parents_before_children():
    a = Tensor([1.0], requires_grad=True)
    b = a.exp()
    c = (b * a).sum()
    tape = ComputationTape.from_output(c)
    position = {id(node): i for i, node in enumerate(tape.nodes)}
    assert position[id(a)] < position[id(b)] < position[id(c)]


def test_deep_chain_does_not_hit_recursion_limit():
    x = Tensor([1.0], requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.sum().backward()
    assert_allclose(x.grad, [1.0])


def test_detach_cuts_gradient():
    x = Tensor([2.0], requires_grad=True)
    (x.detach() * x).sum().backward()
    assert_allclose(x.grad, [2.0])


def test_floored_log_has_zero_gradient_below_floor():
    x = Tensor([0.0, 0.5], requires_grad=True)
    out = x.log(floor=1e-12)
    assert out.data[0] == pytest.approx(np.log(1e-12))
    out.sum().backward()
    assert_allclose(x.grad, [0.0, 2.0])


def test_reciprocal():
    x = Tensor([0.5, 4.0], requires_grad=True)
    r = x.reciprocal()
    assert_allclose(r.data, [2.0, 0.25])
    r.sum().backward()
    assert_allclose(x.grad, [-4.0, -1.0 / 16.0])


def test_log1p_is_accurate_near_zero_and_floored_at_minus_one():
    x = Tensor([1e-12, -1.0, 3.0], requires_grad=True)
    out = x.log1p()
    assert out.data[0] == pytest.approx(1e-12, rel=1e-12)
    assert np.isfinite(out.data[1])
    out.sum().backward()
    assert_allclose(x.grad, [1.0 / (1.0 + 1e-12), 0.0, 0.25])


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    out = concat([a, b.scale(2.0)], axis=1)
    assert out.shape == (2, 5)
    out.sum().backward()
    assert_allclose(a.grad, np.ones((2, 2)))
    assert_allclose(b.grad, np.full((2, 3), 2.0))


def test_broadcast_bias_gradient_is_summed():
    x = Tensor(np.ones((4, 3)))
    bias = Tensor(np.zeros((1, 3)), requires_grad=True)
    (x + bias).sum().backward()
    assert_allclose(bias.grad, np.full((1, 3), 4.0))


def test_two_layer_cross_entropy_matches_finite_differences(rng):
    w1 = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b1 = Tensor(rng.normal(size=(1, 5)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    b2 = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(1, 4)))
    onehot = np.array([[0.0, 1.0, 0.0]])

    def loss():
        p = ((x @ w1 + b1).relu() @ w2 + b2).softmax(axis=1)
        return -(p * onehot).sum().log()

    result = check_gradients(loss, [w1, b1, w2, b2], eps=1e-5, rtol=1e-4)
    assert result.pass_fraction == 1.0


def test_elementwise_ops_match_finite_differences(rng):
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    y = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

    def loss():
        z = (x * y).abs() + x.log() - y.exp().scale(0.1) + y.scale(0.3).log1p()
        return z.T.reshape(2, 6).logsumexp(axis=1).mean()

    assert check_gradients(loss, [x, y]).pass_fraction == 1.0


def test_parameters_to_vector():
    params = [Tensor(np.ones((2, 2))), Tensor([3.0])]
    assert_allclose(parameters_to_vector(params), [1, 1, 1, 1, 3])
