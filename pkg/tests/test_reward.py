import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmppo.env import StepQoS
from hmppo.reward import (
    ConstraintState,
    RewardConfig,
    adaptive_weights,
    base_reward,
    compute_reward,
    dual_update,
    jain_index,
    objective_vector,
    penalized_reward,
    qos_margin,
    shaped_reward,
    shaping_term,
)

unit = st.floats(0.0, 1.0)
vec5 = st.lists(unit, min_size=5, max_size=5)


def qos(achieved, offered, target, delay, rel):
    n = len(achieved)
    f = lambda x: np.asarray(x, dtype=float)  # noqa: E731
    return StepQoS(f(achieved), f(offered), f(target), f(delay), f(rel), np.zeros(n, bool), np.zeros(n, bool),
                   np.zeros(n, bool))


# --------------------------------------------------------- objective vector
def test_targets_exactly_met():
    q = qos([10, 20], [10, 20], [10, 20], [0.05, 0.01], [1.0, 1.0])
    ov = objective_vector(q, np.array([0, 1]), np.array([0.05, 0.01]), np.zeros((2, 3)), np.ones(2))
    assert ov.utility.tolist() == [1, 1, 1, 1, 1]
    assert ov.violation.tolist() == [0, 0, 0, 0, 0]


def test_equal_throughputs_fair():
    assert jain_index([4, 4, 4]) == 1.0


def test_jain_hand_value(frozen):
    assert jain_index([1, 2, 3]) == pytest.approx(frozen["jain_1_2_3"], abs=1e-15)
    assert frozen["jain_1_2_3"] == pytest.approx(6 / 7)


def test_fairness_uses_per_slice_service_fractions():
    # per-slice served/offered = (1/3, 2/3, 1)
    q = qos([1, 2, 3], [3, 3, 3], [0, 0, 0], [0.0, 0.0, 0.0], [1, 1, 1])
    ov = objective_vector(q, np.arange(3), np.ones(3), np.zeros((3, 3)))
    assert ov.utility[3] == pytest.approx(6 / 7)


def test_isolation_from_overdraw():
    q = qos([1], [1], [1], [0.0], [1.0])
    over = np.array([[0.3, 0.0, 0.0], [0.9, 0.9, 0.9]])
    ov = objective_vector(q, np.array([0]), np.ones(1), over, np.array([1, 0]))
    assert ov.utility[4] == pytest.approx(0.9)


def test_empty_records_rejected():
    with pytest.raises(ValueError):
        objective_vector(qos([], [], [], [], []), np.zeros(0, int), np.zeros(0), np.zeros((1, 3)))


@settings(max_examples=300)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 12))
def test_objectives_in_unit_interval(seed, n):
    rng = np.random.default_rng(seed)
    q = qos(rng.uniform(0, 10, n), rng.uniform(0, 10, n), rng.uniform(0, 10, n), rng.exponential(1, n),
            rng.uniform(0, 1, n))
    us = rng.integers(0, 3, n)
    ov = objective_vector(q, us, rng.uniform(0.01, 1, n), rng.uniform(0, 1, (3, 3)), rng.integers(0, 2, 3))
    assert np.all((ov.utility >= 0) & (ov.utility <= 1))
    assert np.allclose(ov.violation, 1 - ov.utility)
    assert 0 <= qos_margin(q, us, rng.uniform(0.01, 1, n), 3) <= 1


# --------------------------------------------------------- adaptive weights
def test_equal_violations_uniform():
    assert adaptive_weights([0.3] * 5, 4.0) == pytest.approx([0.2] * 5)


def test_zero_sensitivity_uniform():
    assert adaptive_weights([0.9, 0, 0.1, 0.5, 1], 0.0) == pytest.approx([0.2] * 5)


def test_weights_numeric(frozen):
    w = adaptive_weights([1, 0, 0, 0, 0], 2.0)
    assert w.tolist() == pytest.approx(frozen["weights_v10000_k2"], abs=1e-12)
    assert w[0] == pytest.approx(0.6488, abs=1e-4)
    assert w[1] == pytest.approx(0.0878, abs=1e-4)


@settings(max_examples=1000)
@given(v=vec5, kappa=st.floats(0.0, 50.0))
def test_weights_on_simplex(v, kappa):
    w = adaptive_weights(v, kappa)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1) <= 1e-9


@settings(max_examples=500)
@given(v=vec5, kappa=st.floats(0.01, 50.0))
def test_argmax_follows_violation(v, kappa):
    v = np.asarray(v)
    if np.sum(v == v.max()) == 1:
        w = adaptive_weights(v, kappa)
        top = w[np.argmax(v)]
        assert np.all(top >= w)


# ------------------------------------------------------------------ reward
def test_base_reward_bounds_examples(frozen):
    w = adaptive_weights([0.1, 0.4, 0.2, 0, 0.9], 3.0)
    assert base_reward(np.ones(5), w) == pytest.approx(1.0)
    assert base_reward(np.zeros(5), w) == 0.0
    wt = frozen["weights_v10000_k2"]
    assert base_reward([1, 0, 0, 0, 0], wt) == pytest.approx(frozen["base_reward_u10000"])
    assert base_reward([1, 0, 0, 0, 0], [0.6488] + [0.0878] * 4) == pytest.approx(0.6488)


@settings(max_examples=500)
@given(u=vec5, v=vec5, kappa=st.floats(0, 20))
def test_base_reward_in_unit_interval(u, v, kappa):
    r = base_reward(u, adaptive_weights(v, kappa))
    assert -1e-12 <= r <= 1 + 1e-12


def test_shaping_examples():
    assert shaped_reward(0.37, 0.6, 0.6, 1.0) == pytest.approx(0.37)
    assert shaped_reward(0.0, 0.0, 1.0, 0.99) == pytest.approx(0.99)


def _telescope_check(phis, beta):
    total = sum(beta ** t * shaping_term(phis[t], phis[t + 1], beta) for t in range(len(phis) - 1))
    T = len(phis) - 1
    return total, beta ** T * phis[-1] - phis[0]


def test_shaping_telescopes_on_ten_steps():
    rng = np.random.default_rng(0)
    total, closed = _telescope_check(rng.uniform(0, 1, 11).tolist(), 0.97)
    assert total == pytest.approx(closed, abs=1e-9)


@settings(max_examples=1000)
@given(phis=st.lists(unit, min_size=2, max_size=60), beta=st.floats(0.01, 1.0))
def test_shaping_telescoping_property(phis, beta):
    total, closed = _telescope_check(phis, beta)
    assert abs(total - closed) <= 1e-9


# -------------------------------------------------------------- constraints
def test_penalty_examples():
    st0 = ConstraintState(np.array([0.1, 0.1]))
    assert penalized_reward(0.7, [0.3, 0.9], st0) == 0.7
    st1 = ConstraintState(np.array([0.1, 0.1]), np.array([1.0, 0.0]))
    assert penalized_reward(0.7, [0.3, 0.9], st1) == pytest.approx(0.4)


def test_penalty_random_dot_product():
    rng = np.random.default_rng(2)
    for _ in range(50):
        lam, c = rng.uniform(0, 5, 3), rng.uniform(0, 1, 3)
        expected = 0.5
        for a, b in zip(lam.tolist(), c.tolist()):
            expected -= a * b
        assert penalized_reward(0.5, c, ConstraintState(np.zeros(3), lam)) == pytest.approx(expected, abs=1e-12)


def test_dual_examples():
    s = ConstraintState(np.array([0.05]), np.array([0.4]), step_size=0.3)
    assert dual_update(s, [0.05]).multipliers[0] == pytest.approx(0.4)
    s = ConstraintState(np.array([1.0]), np.array([0.5]), step_size=1.0)
    assert dual_update(s, [0.0]).multipliers[0] == 0.0
    s = ConstraintState(np.array([0.0]), np.array([0.2]), step_size=0.1)
    assert dual_update(s, [0.3]).multipliers[0] == pytest.approx(0.23)


def test_dual_needs_positive_step():
    with pytest.raises(ValueError):
        dual_update(ConstraintState(np.zeros(1), step_size=0.0), [0.1])
    with pytest.raises(ValueError):
        ConstraintState(np.zeros(1), step_size=-1.0)


@settings(max_examples=1000)
@given(seq=st.lists(st.lists(unit, min_size=3, max_size=3), min_size=1, max_size=30),
       eta=st.floats(1e-4, 10.0), bounds=st.lists(unit, min_size=3, max_size=3))
def test_duals_stay_nonnegative(seq, eta, bounds):
    s = ConstraintState(np.asarray(bounds), step_size=eta)
    for j in seq:
        s = dual_update(s, j)
        assert np.all(s.multipliers >= 0)


def test_compute_reward_flat_configuration():
    q = qos([1, 2], [2, 2], [1, 1], [0.2, 0.01], [0.5, 1.0])
    ov = objective_vector(q, np.array([0, 1]), np.array([0.1, 0.1]), np.zeros((2, 3)))
    cs = ConstraintState(np.zeros(3), np.ones(3))
    flat = compute_reward(ov, 0.3, 0.9, np.ones(3), cs, RewardConfig(adaptive=False, shaping=False, lagrangian=False))
    assert flat.weights == pytest.approx([0.2] * 5)
    assert flat.penalized == flat.shaped == flat.base
    full = compute_reward(ov, 0.3, 0.9, np.ones(3), cs, RewardConfig())
    assert full.shaped == pytest.approx(full.base + 0.99 * 0.9 - 0.3)
    assert full.penalized == pytest.approx(full.shaped - 3.0)
