"""Adam update rule against a hand-rolled reference."""

import numpy as np
import pytest

from cordcpd.optim import AdamState, adam_step


def reference_adam(params, grads_sequence, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar-loop twin of the vectorized update, bias correction included."""
    p = [float(v) for v in params]
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    for t, grads in enumerate(grads_sequence, start=1):
        for i, g in enumerate(grads):
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            m_hat = m[i] / (1 - b1 ** t)
            v_hat = v[i] / (1 - b2 ** t)
            p[i] = p[i] - lr * m_hat / (v_hat ** 0.5 + eps)
    return np.array(p)


def test_matches_scalar_reference_over_steps():
    rng = np.random.default_rng(0)
    params = rng.normal(size=6)
    grads = [rng.normal(size=6) for _ in range(7)]
    state = AdamState(size=6, lr=0.01)
    got = params.copy()
    for g in grads:
        got = adam_step(got, g, state)
    want = reference_adam(params, grads, lr=0.01)
    assert np.allclose(got, want, atol=1e-15)


def test_first_step_size_is_learning_rate():
    # bias correction makes the very first update ~lr * sign(g)
    state = AdamState(size=3, lr=0.5)
    p = np.zeros(3)
    g = np.array([1.0, -2.0, 0.5])
    out = adam_step(p, g, state)
    assert np.allclose(out, -0.5 * np.sign(g), atol=1e-6)


def test_converges_on_quadratic():
    state = AdamState(size=2, lr=0.1)
    p = np.array([3.0, -4.0])
    for _ in range(500):
        p = adam_step(p, 2.0 * p, state)
    assert np.abs(p).max() < 1e-3


def test_rejects_non_finite_gradients():
    state = AdamState(size=2)
    with pytest.raises(FloatingPointError):
        adam_step(np.zeros(2), np.array([1.0, np.nan]), state)


def test_rejects_size_mismatch():
    state = AdamState(size=3)
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(2), state)


def test_step_count_advances_in_place():
    state = AdamState(size=1)
    p = np.ones(1)
    p = adam_step(p, np.ones(1), state)
    p = adam_step(p, np.ones(1), state)
    assert state.step_count == 2
