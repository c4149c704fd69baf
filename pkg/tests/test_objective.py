import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msid import (Dataset, EstimationProblem, MsaPem, MultipleShooting,
                  ShootingPlan, SingleShooting, as_nlp, cost_sequential,
                  gen_logistic)
from msid.models import LogisticMap, Pendulum, linear_arx, linear_oe_2nd, \
    lower_to_state_space

import oracles


def _logistic_problem(form, n=30):
    model = lower_to_state_space(LogisticMap())
    return EstimationProblem(model, gen_logistic(n=n), form)


# ---------------------------------------------------------------------------
# Shooting plans
# ---------------------------------------------------------------------------

def test_plan_from_max_len_partitions_record():
    plan = ShootingPlan.from_max_len(10, 3)
    assert plan.lengths.sum() == 10
    assert plan.lengths.max() <= 3
    assert plan.starts[0] == 0
    np.testing.assert_array_equal(np.diff(plan.starts), plan.lengths[:-1])


def test_plan_rejects_duplicate_boundary():
    with pytest.raises(ValueError):
        ShootingPlan((3, 3), 4)


def test_plan_rejects_unsorted_boundaries():
    with pytest.raises(ValueError):
        ShootingPlan((5, 2), 6)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(min_value=1, max_value=200),
       max_len=st.integers(min_value=1, max_value=50))
def test_plan_property(n, max_len):
    plan = ShootingPlan.from_max_len(n, max_len)
    assert plan.lengths.sum() == n
    assert plan.lengths.max() <= max_len
    assert plan.lengths.min() >= 1


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------

def test_single_shooting_cost_is_mean_square_error():
    prob = _logistic_problem(SingleShooting(optimize_x0=True), n=20)
    phi = np.concatenate([[3.5], [0.4]])
    preds, x = [], 0.4
    for k in range(20):
        x = 3.5 * x * (1 - x)
        preds.append(x)
    expect = float(np.mean((prob.dataset.y - np.array(preds)) ** 2))
    assert prob.cost(phi) == pytest.approx(expect, rel=1e-14)


def test_cost_at_truth_is_zero_on_noiseless_data():
    prob = _logistic_problem(SingleShooting(optimize_x0=True), n=50)
    phi = np.concatenate([[3.78], [0.5]])
    assert prob.cost(phi) == pytest.approx(0.0, abs=1e-25)


def test_multiple_shooting_cost_with_cohesive_seeds_matches_single():
    prob_ss = _logistic_problem(SingleShooting(optimize_x0=True), n=30)
    plan = ShootingPlan.from_max_len(30, 4)
    prob_ms = _logistic_problem(MultipleShooting(plan), n=30)
    theta = np.array([3.6])
    # chain the seeds through an exact rollout
    states, _ = __import__("msid").simulate(
        prob_ss.model, np.array([0.5]), prob_ss.dataset, 0, 30, theta)
    seeds = [np.array([0.5])] + [states[s - 1] for s in plan.starts[1:]]
    phi_ms = np.concatenate([theta] + seeds)
    phi_ss = np.concatenate([theta, [0.5]])
    v_ss = prob_ss.cost(phi_ss)
    v_ms, interval_costs = prob_ms.cost_multiple(phi_ms)
    assert v_ms == pytest.approx(v_ss, abs=1e-15 * (1 + abs(v_ss)))
    # total cost is the length-weighted mix of interval costs
    mix = float(np.sum(plan.lengths / 30 * interval_costs))
    assert v_ms == pytest.approx(mix, rel=1e-12)
    assert np.abs(prob_ms.constraints(phi_ms)).max() <= 1e-15


def test_constraints_measure_seed_mismatch():
    plan = ShootingPlan.from_max_len(20, 5)
    prob = _logistic_problem(MultipleShooting(plan), n=20)
    phi = prob.default_point(np.array([3.4]))
    c = prob.constraints(phi)
    assert c.shape == (prob.n_constraints,)
    # perturbing one seed moves exactly the matching constraint entries
    phi2 = phi.copy()
    phi2[1 + prob.model.state_dim] += 0.01
    dc = prob.constraints(phi2) - c
    assert np.abs(dc[: prob.model.state_dim]).max() > 0


def test_msa_cost_matches_direct_window_computation():
    k_hor = 3
    prob = _logistic_problem(MsaPem(k_hor), n=12)
    model, ds = prob.model, prob.dataset
    theta = np.array([3.4])
    phi = prob.default_point(theta)
    sq = []
    for k in range(1, 13):
        s = max(0, k - k_hor)
        x = model.init_state(ds.y, ds.u, s)
        for t in range(s + 1, k + 1):
            zy = np.array([[ds.y[t - 2] if t >= 2 else ds.y[0]]])
            zu = np.zeros((1, 1))
            from msid.models import RegressorWindow
            x = model.transition(np.atleast_2d(x), RegressorWindow(zy, zu), theta)[0]
        sq.append((ds.y[k - 1] - x[0]) ** 2)
    assert prob.cost(phi) == pytest.approx(float(np.mean(sq)), rel=1e-12)


def test_divergent_parameters_give_infinite_cost():
    prob = _logistic_problem(SingleShooting(optimize_x0=True), n=60)
    assert prob.cost(np.array([5.5, 0.5])) == np.inf


# ---------------------------------------------------------------------------
# Gradients and Jacobians
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("form", [
    SingleShooting(optimize_x0=True),
    MultipleShooting(ShootingPlan.from_max_len(30, 7)),
    MsaPem(4),
])
def test_gradient_matches_finite_differences(form, rng):
    prob = _logistic_problem(form, n=30)
    for _ in range(5):
        theta = rng.uniform(2.5, 3.6, size=1)
        phi = prob.default_point(theta) + rng.normal(scale=0.01,
                                                     size=prob.n_decision)
        g = prob.gradient(phi)
        fd = oracles.fd_gradient(prob.cost, phi, h=1e-7)
        np.testing.assert_allclose(g, fd, rtol=2e-5, atol=1e-10)


def test_constraint_jacobian_matches_finite_differences(rng):
    plan = ShootingPlan.from_max_len(25, 6)
    prob = _logistic_problem(MultipleShooting(plan), n=25)
    phi = prob.default_point(np.array([3.3]))
    jac = prob.constraint_jacobian(phi).toarray()
    fd = oracles.fd_jacobian(prob.constraints, phi, h=1e-7)
    np.testing.assert_allclose(jac, fd, rtol=1e-6, atol=1e-9)


def test_constraint_jac_t_vec_matches_dense(rng):
    plan = ShootingPlan.from_max_len(25, 6)
    prob = _logistic_problem(MultipleShooting(plan), n=25)
    phi = prob.default_point(np.array([3.3]))
    lam = rng.normal(size=prob.n_constraints)
    dense = prob.constraint_jacobian(phi).toarray().T @ lam
    fast = prob.constraint_jac_t_vec(phi, lam)
    np.testing.assert_allclose(fast, dense, rtol=1e-12, atol=1e-14)


def test_gn_hessian_vec_is_symmetric_psd(rng):
    prob = _logistic_problem(SingleShooting(optimize_x0=True), n=30)
    phi = prob.default_point(np.array([3.3]))
    for _ in range(5):
        p = rng.normal(size=prob.n_decision)
        q = rng.normal(size=prob.n_decision)
        hp = prob.gn_hessian_vec(phi, p)
        hq = prob.gn_hessian_vec(phi, q)
        assert float(q @ hp) == pytest.approx(float(p @ hq), rel=1e-10, abs=1e-12)
        assert float(p @ hp) >= -1e-12


# ---------------------------------------------------------------------------
# Sequential evaluation and NLP adapter
# ---------------------------------------------------------------------------

def test_cost_sequential_matches_batched():
    plan = ShootingPlan.from_max_len(40, 8)
    prob = _logistic_problem(MultipleShooting(plan), n=40)
    phi = prob.default_point(np.array([3.45]))
    v_batched, _ = prob.cost_multiple(phi)
    assert cost_sequential(prob, phi) == pytest.approx(v_batched, rel=1e-12)


def test_as_nlp_dimensions():
    plan = ShootingPlan.from_max_len(20, 5)
    prob = _logistic_problem(MultipleShooting(plan), n=20)
    nlp = as_nlp(prob)
    assert nlp.n == prob.n_decision
    assert nlp.m == prob.n_constraints
    prob_ss = _logistic_problem(SingleShooting(optimize_x0=True), n=20)
    assert as_nlp(prob_ss).m == 0


def test_default_point_seeds_come_from_measured_data():
    plan = ShootingPlan.from_max_len(20, 5)
    prob = _logistic_problem(MultipleShooting(plan), n=20)
    phi = prob.default_point(np.array([3.4]))
    assert phi[0] == 3.4
    # logistic seed for the interval starting at s is the measured y[s-1]
    y = prob.dataset.y
    np.testing.assert_allclose(phi[2:], y[np.array(plan.starts[1:]) - 1])
