import numpy as np
import pytest

from hashCT.util.v1 import network
from hashCT.util.v1.encoder import HashEncoding
from hashCT.util.v1.errors import NumericalError
from hashCT.util.v1.optimizer import BETA1, BETA2, EPSILON, AdamState, adam_step
from hashCT.util.v1.projector import FieldModel

LR = 1e-3


@pytest.fixture
def model64(tiny_encoder_config, tiny_mlp_config):
    return FieldModel(
        HashEncoding(tiny_encoder_config, dim=2, seed=5, dtype=np.float64),
        network.init(tiny_mlp_config, seed=6, dtype=np.float64),
    )


def _away_from_zero(rng, shape):
    return rng.uniform(0.5, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _grads(model, rng, rows):
    grads = model.new_buffers()
    for g in grads.mlp.tensors():
        g[...] = _away_from_zero(rng, g.shape)
    values = _away_from_zero(rng, (rows.size, model.encoding.config.feature_dim))
    grads.encoder.add(1, rows, values)
    return grads, values


def test_first_step_moves_by_learning_rate(model64, rng):
    before = [t.copy() for t in model64.params.tensors()]
    state = AdamState.create(model64)
    grads, _ = _grads(model64, rng, np.array([3, 7]))
    adam_step(model64, grads, state, LR)
    assert state.step == 1
    for old, new, g in zip(before, model64.params.tensors(), grads.mlp.tensors()):
        np.testing.assert_allclose(new - old, -LR * np.sign(g), rtol=1e-4)


def test_only_touched_rows_change(model64, rng):
    tables = [t.copy() for t in model64.encoding.tables]
    state = AdamState.create(model64)
    rows = np.array([3, 7, 500])
    grads, _ = _grads(model64, rng, rows)
    adam_step(model64, grads, state, LR)

    changed = np.flatnonzero(np.any(model64.encoding.tables[1] != tables[1], axis=1))
    np.testing.assert_array_equal(changed, rows)
    for level in (0, 2, 3):
        np.testing.assert_array_equal(model64.encoding.tables[level], tables[level])
    untouched = np.setdiff1d(np.arange(tables[1].shape[0]), rows)
    assert not state.table_m[1][untouched].any()
    assert not state.table_v[1][untouched].any()


def test_matches_textbook_adam(model64, rng):
    rows = np.array([2, 9])
    state = AdamState.create(model64)
    p = model64.encoding.tables[1][rows].copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for step in range(1, 4):
        grads, g = _grads(model64, rng, rows)
        adam_step(model64, grads, state, LR)
        m = BETA1 * m + (1 - BETA1) * g
        v = BETA2 * v + (1 - BETA2) * g * g
        m_hat = m / (1 - BETA1**step)
        v_hat = v / (1 - BETA2**step)
        p = p - LR * m_hat / (np.sqrt(v_hat) + EPSILON)
    np.testing.assert_allclose(model64.encoding.tables[1][rows], p, rtol=1e-12)
    assert state.step == 3


def test_lazy_rows_use_shared_step(model64, rng):
    # a row first touched at step 2 is bias-corrected with t = 2
    state = AdamState.create(model64)
    grads, _ = _grads(model64, rng, np.array([1]))
    adam_step(model64, grads, state, LR)
    before = model64.encoding.tables[1][4].copy()
    grads, g = _grads(model64, rng, np.array([4]))
    adam_step(model64, grads, state, LR)
    m_hat = (1 - BETA1) * g[0] / (1 - BETA1**2)
    v_hat = (1 - BETA2) * g[0] ** 2 / (1 - BETA2**2)
    expected = before - LR * m_hat / (np.sqrt(v_hat) + EPSILON)
    np.testing.assert_allclose(model64.encoding.tables[1][4], expected, rtol=1e-12)


def test_non_finite_gradient_raises(model64, rng):
    state = AdamState.create(model64)
    grads, _ = _grads(model64, rng, np.array([0]))
    grads.mlp.biases[0][0] = np.nan
    before = [t.copy() for t in model64.params.tensors()]
    with pytest.raises(NumericalError):
        adam_step(model64, grads, state, LR)
    assert state.step == 0
    for old, new in zip(before, model64.params.tensors()):
        np.testing.assert_array_equal(old, new)


def test_version_bumps_after_step(model64, rng):
    state = AdamState.create(model64)
    version = model64.params.version
    grads, _ = _grads(model64, rng, np.array([0]))
    adam_step(model64, grads, state, LR)
    assert model64.params.version == version + 1
    assert state.all_finite()


def test_fully_touched_tables_follow_dense_adam(model64, rng):
    tables = [t.copy() for t in model64.encoding.tables]
    m = [np.zeros_like(t) for t in tables]
    v = [np.zeros_like(t) for t in tables]
    state = AdamState.create(model64)
    rows = np.arange(tables[0].shape[0])
    for step in range(1, 4):
        grads = model64.new_buffers()
        dense = [_away_from_zero(rng, t.shape) for t in tables]
        for level, g in enumerate(dense):
            grads.encoder.add(level, rows, g)
        adam_step(model64, grads, state, LR)
        bc1 = 1.0 - BETA1**step
        bc2 = 1.0 - BETA2**step
        for level, g in enumerate(dense):
            m[level] = BETA1 * m[level] + (1.0 - BETA1) * g
            v[level] = BETA2 * v[level] + (1.0 - BETA2) * g * g
            tables[level] = tables[level] - LR * (m[level] / bc1) / (
                np.sqrt(v[level] / bc2) + EPSILON
            )
    for level, expected in enumerate(tables):
        np.testing.assert_array_equal(model64.encoding.tables[level], expected)
        np.testing.assert_array_equal(state.table_m[level], m[level])
        np.testing.assert_array_equal(state.table_v[level], v[level])
