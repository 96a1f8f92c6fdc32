import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csvae_lab.optim import (GAMMA, INITIAL_LR, MILESTONES, AdamState, LrSchedule,
                             adam_step, lr_at)


def test_adam_first_step_hand_value():
    # t=1: m_hat = g, v_hat = g^2 -> update = lr * 1/(1+eps)
    p = np.array([0.0])
    g = np.array([1.0])
    state = AdamState.for_params([p])
    adam_step([p], [g], state, lr=5e-4)
    expected = -5e-4 * (1.0 / (1.0 + 1e-8))
    np.testing.assert_allclose(p, [expected], rtol=1e-12)
    assert state.step == 1


def test_adam_zero_gradient_is_identity():
    rng = np.random.default_rng(0)
    p = rng.standard_normal((3, 2))
    orig = p.copy()
    state = AdamState.for_params([p])
    for _ in range(5):
        adam_step([p], [np.zeros_like(p)], state, lr=1e-2)
    np.testing.assert_array_equal(p, orig)


def test_adam_moments_decay_toward_zero():
    p = np.zeros((2,))
    state = AdamState.for_params([p])
    state.m[0][:] = 0.5
    state.v[0][:] = 0.25
    adam_step([p], [np.zeros_like(p)], state, lr=1e-2)
    assert np.all(state.m[0] < 0.5) and np.all(state.v[0] < 0.25)
    assert np.all(state.m[0] > 0.0) and np.all(state.v[0] > 0.0)


def test_adam_descends_convex_quadratic():
    p = np.array([1.0])
    state = AdamState.for_params([p])
    for _ in range(10):
        adam_step([p], [2.0 * p], state, lr=0.05)
    assert abs(p[0]) < 1.0
    assert state.step == 10


def test_adam_shape_mismatch_raises():
    p = np.zeros(3)
    state = AdamState.for_params([p])
    with pytest.raises(ValueError):
        adam_step([p], [np.zeros(4)], state, lr=1e-3)
    with pytest.raises(ValueError):
        adam_step([p], [np.zeros(3)], state, lr=0.0)


def test_lr_schedule_paper_values():
    s = LrSchedule()
    assert s.initial_lr == INITIAL_LR == 5e-4
    assert lr_at(s, 0) == 5e-4
    np.testing.assert_allclose(lr_at(s, 2), 5e-4 * 0.1 ** (1 / 7), rtol=1e-12)
    # all seven milestones passed: gamma^7 = 0.1 exactly
    np.testing.assert_allclose(lr_at(s, 1000), 5e-5, rtol=1e-12)


def test_lr_schedule_validation():
    with pytest.raises(ValueError):
        LrSchedule(milestones=(3, 1))
    with pytest.raises(ValueError):
        LrSchedule(gamma=0.0)
    with pytest.raises(ValueError):
        lr_at(LrSchedule(), -1)


@settings(deadline=None, max_examples=50)
@given(st.lists(st.integers(1, 400), min_size=1, max_size=6, unique=True),
       st.one_of(st.floats(0.05, 0.99), st.just(1.0)), st.floats(1e-5, 1.0))
def test_lr_schedule_monotone_with_exact_discontinuities(milestones, gamma, lr0):
    s = LrSchedule(initial_lr=lr0, milestones=tuple(sorted(milestones)), gamma=gamma)
    values = [lr_at(s, e) for e in range(max(milestones) + 2)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    jumps = sum(1 for a, b in zip(values, values[1:]) if a != b)
    expected = len(milestones) if gamma < 1.0 else 0
    assert jumps == expected


def test_defaults_match_schedule_constants():
    assert MILESTONES == (1, 3, 9, 27, 81, 243, 729)
    np.testing.assert_allclose(GAMMA ** 7, 0.1, rtol=1e-12)
