import numpy as np
import pytest

from hashCT.models.v1.network import MLPConfig
from hashCT.util.v1 import network
from hashCT.util.v1.errors import ShapeError, StaleCacheError


@pytest.fixture
def params64(tiny_mlp_config):
    return network.init(tiny_mlp_config, seed=7, dtype=np.float64)


def test_init_shapes_and_bounds(tiny_mlp_config):
    params = network.init(tiny_mlp_config, seed=0)
    assert [w.shape for w in params.weights] == [(8, 16), (16, 16), (16, 1)]
    for w in params.weights:
        assert np.abs(w).max() <= np.sqrt(6.0 / w.shape[0]) * (1 + 1e-6)
    assert not any(b.any() for b in params.biases)


def test_init_is_seeded(tiny_mlp_config):
    a = network.init(tiny_mlp_config, seed=3)
    b = network.init(tiny_mlp_config, seed=3)
    for wa, wb in zip(a.tensors(), b.tensors()):
        np.testing.assert_array_equal(wa, wb)


def test_outputs_stay_in_range(params64, rng):
    mu, _ = network.forward(params64, rng.normal(scale=50.0, size=(200, 8)))
    assert mu.min() > 0.0
    assert mu.max() < 0.1


def test_zero_weights_give_half_scale(tiny_mlp_config, rng):
    params = network.init(tiny_mlp_config, seed=0)
    for w in params.weights:
        w[...] = 0.0
    mu, _ = network.forward(params, rng.normal(size=(4, 8)))
    np.testing.assert_allclose(mu, 0.05, rtol=1e-6)


def test_backward_matches_finite_differences(params64, rng):
    features = rng.normal(size=(5, 8))
    upstream = rng.normal(size=5)
    _, cache = network.forward(params64, features)
    grads, dfeatures = network.backward(params64, cache, upstream)

    def objective():
        mu, _ = network.forward(params64, features)
        return float((mu * upstream).sum())

    h = 1e-6
    for tensor, grad in zip(params64.tensors(), grads.tensors()):
        flat, gflat = tensor.reshape(-1), grad.reshape(-1)
        for i in range(0, flat.size, max(1, flat.size // 7)):
            saved = flat[i]
            flat[i] = saved + h
            plus = objective()
            flat[i] = saved - h
            minus = objective()
            flat[i] = saved
            assert (plus - minus) / (2 * h) == pytest.approx(gflat[i], rel=1e-5, abs=1e-9)

    for i in range(8):
        shifted = features.copy()
        shifted[2, i] += h
        mu_plus, _ = network.forward(params64, shifted)
        shifted[2, i] -= 2 * h
        mu_minus, _ = network.forward(params64, shifted)
        fd = (mu_plus[2] - mu_minus[2]) * upstream[2] / (2 * h)
        assert fd == pytest.approx(dfeatures[2, i], rel=1e-5, abs=1e-9)


def test_stale_cache_is_detected(params64, rng):
    _, cache = network.forward(params64, rng.normal(size=(3, 8)))
    params64.version += 1
    with pytest.raises(StaleCacheError):
        network.backward(params64, cache, np.ones(3))


def test_feature_width_is_checked(params64):
    with pytest.raises(ShapeError):
        network.forward(params64, np.zeros((2, 7)))


def test_config_validation():
    with pytest.raises(ValueError):
        MLPConfig(mu_max=0.0)
    assert MLPConfig(hidden_layers=0).layer_dims == [32, 1]
