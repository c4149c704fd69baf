import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msid import (Dataset, DivergenceError, gen_logistic, run_intervals,
                  simulate, simulate_with_sensitivities)
from msid.models import LogisticMap, Pendulum, linear_oe_2nd, lower_to_state_space
from msid.models import regressor_matrices

import oracles


def test_logistic_rollout_matches_hand_iteration(logistic_model):
    ds = gen_logistic(n=10)
    states, preds = simulate(logistic_model, np.array([0.5]), ds, 0, 10,
                             np.array([3.78]))
    expect = oracles.logistic_sequence(3.78, 0.5, 10)
    np.testing.assert_allclose(preds[:, 0], expect, rtol=1e-15)
    np.testing.assert_allclose(states[:, 0], expect, rtol=1e-15)


def test_linear_rollout_matches_direct_recursion(linear_model, rng):
    n = 40
    u = rng.normal(size=n)
    ds = Dataset(u, np.zeros(n), {})
    theta = np.array([0.5, -0.2, 2.0])
    _, preds = simulate(linear_model, np.zeros(linear_model.state_dim), ds,
                        0, n, theta)
    # pre-record lags are held at the first sample, so u[-1] reads as u[0]
    expect = np.zeros(n)
    y1 = y2 = 0.0
    for k in range(n):
        u_prev = u[k - 1] if k else u[0]
        expect[k] = 0.5 * y1 - 0.2 * y2 + 2.0 * u_prev
        y2, y1 = y1, expect[k]
    np.testing.assert_allclose(preds[:, 0], expect, rtol=1e-12, atol=1e-12)


def test_sensitivity_matches_finite_differences(logistic_model):
    ds = gen_logistic(n=15)
    theta = np.array([3.5])
    x0 = np.array([0.4])
    trace = simulate_with_sensitivities(logistic_model, x0, ds, 0, 15, theta)

    def preds_at(th, x):
        _, p = simulate(logistic_model, np.atleast_1d(x), ds, 0, 15,
                        np.atleast_1d(th))
        return p[:, 0]

    fd_th = oracles.fd_jacobian(lambda v: preds_at(v[0], x0), theta)
    fd_x0 = oracles.fd_jacobian(lambda v: preds_at(theta, v), x0)
    np.testing.assert_allclose(trace.output_sens[:, 0, 0], fd_th[:, 0],
                               rtol=1e-5)
    np.testing.assert_allclose(trace.output_sens[:, 0, 1], fd_x0[:, 0],
                               rtol=1e-5)


def test_sensitivity_initialization():
    # D at the interval start is [0 | I]
    model = lower_to_state_space(Pendulum())
    ds = gen_logistic(n=5)
    ds = Dataset(np.zeros(5), np.zeros(5), {})
    trace = simulate_with_sensitivities(model, np.array([0.1, 0.0]), ds, 0, 1,
                                        np.array([32.0, 2.0]))
    zy, zu = regressor_matrices(model, ds)
    roll = run_intervals(model, np.array([32.0, 2.0]),
                         np.array([[0.1, 0.0]]), zy, zu,
                         np.array([0]), np.array([0]), with_sens=True)
    np.testing.assert_array_equal(roll.end_state_sens[0, :, 2:], np.eye(2))
    np.testing.assert_array_equal(roll.end_state_sens[0, :, :2], 0.0)


def test_divergence_raises_with_step():
    model = lower_to_state_space(LogisticMap())
    ds = gen_logistic(n=60)
    with pytest.raises(DivergenceError) as err:
        simulate(model, np.array([0.5]), ds, 0, 60, np.array([5.5]))
    assert err.value.step >= 1


def test_batched_divergence_freezes_only_bad_rows():
    model = lower_to_state_space(LogisticMap())
    ds = gen_logistic(n=30)
    zy, zu = regressor_matrices(model, ds)
    roll = run_intervals(model, np.array([5.5]),
                         np.array([[0.5], [0.0]]), zy, zu,
                         np.array([0, 0]), np.array([30, 30]), with_sens=False)
    assert roll.diverged[0] and not roll.diverged[1]
    assert roll.divergence_step[0] >= 1
    assert np.all(np.isfinite(roll.states[1]))
    assert not roll.valid[0, -1] and roll.valid[1, -1]


def test_unequal_lengths_freeze_end_states(logistic_model):
    ds = gen_logistic(n=20)
    zy, zu = regressor_matrices(logistic_model, ds)
    roll = run_intervals(logistic_model, np.array([3.3]),
                         np.array([[0.5], [0.4]]), zy, zu,
                         np.array([0, 5]), np.array([3, 7]), with_sens=False)
    # each end state equals a fresh rollout of exactly that interval
    s0, _ = simulate(logistic_model, np.array([0.5]), ds, 0, 3, np.array([3.3]))
    s1, _ = simulate(logistic_model, np.array([0.4]), ds, 5, 12, np.array([3.3]))
    assert roll.end_states[0, 0] == pytest.approx(s0[-1, 0], rel=1e-15)
    assert roll.end_states[1, 0] == pytest.approx(s1[-1, 0], rel=1e-15)
    assert not roll.valid[0, 3:].any() and roll.valid[1].all()


@settings(max_examples=20, deadline=None)
@given(theta=st.floats(min_value=0.5, max_value=3.9),
       split=st.integers(min_value=1, max_value=14))
def test_chained_intervals_equal_one_rollout(theta, split):
    model = lower_to_state_space(LogisticMap())
    ds = gen_logistic(n=15)
    full_states, full_preds = simulate(model, np.array([0.5]), ds, 0, 15,
                                       np.array([theta]))
    # restart the second interval from the first interval's end state
    s1, p1 = simulate(model, np.array([0.5]), ds, 0, split, np.array([theta]))
    s2, p2 = simulate(model, s1[-1], ds, split, 15, np.array([theta]))
    np.testing.assert_allclose(np.concatenate([p1, p2]), full_preds, rtol=1e-12)
