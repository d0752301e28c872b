import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import ArgumentError, DimensionError
from src.model import MultimodalNet, cross_entropy, cross_entropy_value
from src.tensor import Tensor


@pytest.fixture
def net():
    return MultimodalNet([4, 3], hidden_dim=5, num_classes=3, rng=np.random.default_rng(0))


def straight_line(net, xs):
    p = {name: t.data for name, t in net.named_parameters()}

    def softmax(z):
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    hs = [np.maximum(x @ p[f"enc{i}.weight"] + p[f"enc{i}.bias"], 0.0) for i, x in enumerate(xs)]
    fused = softmax(np.concatenate(hs, axis=1) @ p["head.weight"] + p["head.bias"])
    probes = [softmax(h @ p[f"probe{i}.weight"] + p[f"probe{i}.bias"]) for i, h in enumerate(hs)]
    return hs, fused, probes


def test_parameter_layout(net):
    names = [name for name, _ in net.named_parameters()]
    assert names[:4] == ["enc0.weight", "enc0.bias", "enc1.weight", "enc1.bias"]
    assert net.params["head.weight"].shape == (10, 3)
    assert net.params["probe1.bias"].shape == (1, 3)
    assert all(p.requires_grad for p in net.parameters())
    assert len(net.encoder_parameters()) == 4


def test_zero_input_zero_parameters_gives_zero_features(net):
    for p in net.encoder_parameters():
        p.data = np.zeros_like(p.data)
    features = net.encode_all([np.zeros((2, 4)), np.zeros((2, 3))])
    assert all(np.array_equal(f.data, np.zeros((2, 5))) for f in features)


def test_forward_is_deterministic(net, rng):
    xs = [rng.normal(size=(3, 4)), rng.normal(size=(3, 3))]
    a, b = net.forward(xs), net.forward(xs)
    assert np.array_equal(a.fused.data, b.fused.data)


def test_forward_matches_straight_line(net, rng):
    xs = [rng.normal(size=(6, 4)), rng.normal(size=(6, 3))]
    out = net.forward(xs)
    hs, fused, probes = straight_line(net, xs)
    for f, h in zip(out.features, hs):
        assert_allclose(f.data, h, rtol=0, atol=1e-12)
    assert_allclose(out.fused.data, fused, rtol=0, atol=1e-12)
    for u, q in zip(out.unimodal_arrays(), probes):
        assert_allclose(u, q, rtol=0, atol=1e-12)
    assert_allclose(out.fused.data.sum(axis=1), 1.0, atol=1e-12)


def test_encode_dimension_mismatch(net):
    with pytest.raises(DimensionError):
        net.encode_all([np.zeros((1, 4)), np.zeros((1, 5))])
    with pytest.raises(ArgumentError):
        net.encode_all([np.zeros((1, 4))])


def test_fuse_weights(net, rng):
    features = [Tensor(rng.normal(size=(2, 5))), Tensor(rng.normal(size=(2, 5)))]
    plain = net.fuse(features).data
    assert_allclose(plain, np.concatenate([f.data for f in features], axis=1))
    assert_allclose(net.fuse(features, np.ones(2)).data, plain)

    zeroed = net.fuse(features, np.array([0.0, 1.0])).data
    assert np.array_equal(zeroed[:, :5], np.zeros((2, 5)))

    scaled = net.fuse(features, np.array([1.5, 0.5])).data
    assert_allclose(scaled[:, :5], 1.5 * features[0].data)
    assert_allclose(scaled[:, 5:], 0.5 * features[1].data)

    per_sample = net.fuse(features, np.array([[2.0, 1.0], [1.0, 3.0]])).data
    assert_allclose(per_sample[1, 5:], 3.0 * features[1].data[1])

    with pytest.raises(ArgumentError):
        net.fuse(features, np.ones(3))


def test_zero_head_gives_uniform_posteriors(net, rng):
    for name in ("head.weight", "head.bias"):
        net.params[name].data = np.zeros_like(net.params[name].data)
    out = net.forward([rng.normal(size=(4, 4)), rng.normal(size=(4, 3))])
    assert_allclose(out.fused.data, np.full((4, 3), 1 / 3))


def test_probes_do_not_backpropagate_into_encoders(net, rng):
    out = net.forward([rng.normal(size=(4, 4)), rng.normal(size=(4, 3))])
    cross_entropy(out.unimodal[0], np.array([0, 1, 2, 0])).backward()
    assert net.params["enc0.weight"].grad is None
    assert net.params["probe0.weight"].grad is not None
    assert net.params["head.weight"].grad is None


def test_cross_entropy_examples():
    assert cross_entropy_value([0.0, 1.0], 1) == 0.0
    assert cross_entropy_value([0.5, 0.5], 0) == pytest.approx(np.log(2))
    assert cross_entropy_value([0.25, 0.75], 0) == pytest.approx(np.log(4))
    assert cross_entropy_value([1.0, 0.0], 1) == pytest.approx(-np.log(1e-12))
    with pytest.raises(ArgumentError):
        cross_entropy_value([0.5, 0.5], 2)


def test_cross_entropy_tensor_is_batch_mean():
    p = Tensor([[0.25, 0.75], [0.5, 0.5]])
    assert cross_entropy(p, [0, 1]).item() == pytest.approx((np.log(4) + np.log(2)) / 2)
    with pytest.raises(ArgumentError):
        cross_entropy(p, [0, 3])


def test_state_dict_round_trip(net):
    other = MultimodalNet([4, 3], hidden_dim=5, num_classes=3, rng=np.random.default_rng(99))
    other.load_state_dict(net.state_dict())
    for (_, a), (_, b) in zip(net.named_parameters(), other.named_parameters()):
        assert np.array_equal(a.data, b.data)
    bad = net.state_dict()
    bad["head.weight"] = np.zeros((2, 2))
    with pytest.raises(DimensionError):
        other.load_state_dict(bad)
