import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hmppo.env import SlicingEnv
from hmppo.policy import (
    FlatActorCritic,
    HierarchicalActorCritic,
    InvalidActionError,
    ModelConfig,
    ShapeError,
    SpatioTemporalEncoder,
    _bernoulli_entropy,
    batch_obs,
    budget_ratios,
    user_ratios,
)
from hmppo.scenario import desk_scenario


@pytest.fixture(scope="module")
def desk_obs():
    env = SlicingEnv(desk_scenario())
    obs = [env.reset(seed=s) for s in range(4)]
    return batch_obs(obs)


def _policy(seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    pol = HierarchicalActorCritic(3, 12)
    return pol.to(dtype)


# ------------------------------------------------------------- upper level
def test_equal_logits_equal_ratios():
    r = budget_ratios(torch.zeros(3, 3), torch.ones(3))
    assert torch.allclose(r, torch.full((3, 3), 1 / 3))


def test_log_logits_ratios(frozen):
    logits = torch.log(torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64))[:, None].repeat(1, 3)
    r = budget_ratios(logits, torch.ones(3, dtype=torch.float64))
    for d in range(3):
        assert r[:, d].tolist() == pytest.approx(frozen["budget_ratios_ln123"], abs=1e-12)


def test_masked_and_empty_admission():
    r = budget_ratios(torch.randn(3, 3), torch.tensor([1.0, 0.0, 1.0]))
    assert torch.all(r[1] == 0)
    assert torch.allclose(r.sum(0), torch.ones(3))
    assert torch.all(budget_ratios(torch.randn(3, 3), torch.zeros(3)) == 0)


@settings(max_examples=1000)
@given(seed=st.integers(0, 2**31 - 1), S=st.integers(1, 6), scale=st.floats(0.01, 50.0))
def test_budget_simplex(seed, S, scale):
    g = torch.Generator().manual_seed(seed)
    logits = torch.randn(S, 3, generator=g, dtype=torch.float64) * scale
    adm = (torch.rand(S, generator=g) < 0.6).double()
    r = budget_ratios(logits, adm)
    assert torch.all(r >= 0)
    assert torch.all(r[adm == 0] == 0)
    if adm.sum() > 0:
        assert torch.allclose(r.sum(0), torch.ones(3, dtype=torch.float64), atol=1e-6)


def test_certain_admission_in_both_modes(desk_obs):
    pol = _policy()
    torch.nn.init.constant_(pol.admission_head.bias, 100.0)
    for mode in ("sample", "greedy"):
        action, *_ = pol.act(desk_obs, mode, torch.Generator().manual_seed(1))
        assert torch.all(action["admission"] == 1)


# ------------------------------------------------------------- lower level
def test_single_user_gets_full_budget():
    r = user_ratios(torch.randn(1, 3), torch.tensor([0]), 1)
    assert torch.allclose(r, torch.ones(1, 3))


def test_equal_logits_four_users():
    r = user_ratios(torch.zeros(4, 3), torch.zeros(4, dtype=torch.long), 1)
    assert torch.allclose(r * 100, torch.full((4, 3), 25.0))


def _brute_normalize(logits):
    ex = [math.exp(x) for x in logits]
    return [e / sum(ex) for e in ex]


def test_random_five_users_sum_to_budget():
    g = torch.Generator().manual_seed(3)
    logits = torch.randn(5, 3, generator=g, dtype=torch.float64)
    r = user_ratios(logits, torch.zeros(5, dtype=torch.long), 1)
    budget = 70.0
    for d in range(3):
        oracle = _brute_normalize(logits[:, d].tolist())
        assert (r[:, d] * budget).tolist() == pytest.approx([o * budget for o in oracle], rel=1e-12)
        assert float((r[:, d] * budget).sum()) == pytest.approx(budget, rel=1e-6)


@settings(max_examples=1000)
@given(seed=st.integers(0, 2**31 - 1), U=st.integers(1, 15), S=st.integers(1, 4))
def test_allocation_simplex(seed, U, S):
    g = torch.Generator().manual_seed(seed)
    user_slice = torch.randint(0, S, (U,), generator=g)
    logits = torch.randn(U, 3, generator=g, dtype=torch.float64) * 5
    budgets = torch.rand(S, 3, generator=g, dtype=torch.float64) * 100
    alloc = user_ratios(logits, user_slice, S) * budgets[user_slice]
    assert torch.all(alloc >= 0)
    for s in range(S):
        members = user_slice == s
        if members.any():
            assert torch.allclose(alloc[members].sum(0), budgets[s], rtol=1e-6, atol=0)


def test_empty_slice_allocates_nothing():
    r = user_ratios(torch.randn(2, 3), torch.tensor([0, 0]), 2)
    assert r.shape == (2, 3)
    assert torch.allclose(r.sum(0), torch.ones(3))


# ---------------------------------------------------------------- encoder
def test_encode_deterministic(desk_obs):
    pol = _policy()
    assert torch.equal(pol.encode(desk_obs), pol.encode(desk_obs))


def test_encode_permutation_equivariant(desk_obs):
    torch.manual_seed(0)
    enc = SpatioTemporalEncoder(ModelConfig()).double()
    S = 3
    nodes = desk_obs["nodes"].double()
    adj = desk_obs["adjacency"].double()
    hist = desk_obs["history"].double() + torch.randn_like(desk_obs["history"].double())
    perm = torch.tensor([2, 0, 1])
    node_perm = torch.cat([perm, torch.arange(S, nodes.shape[1])])
    e = enc(nodes, adj, hist, S)
    e_p = enc(nodes[:, node_perm], adj[:, node_perm][:, :, node_perm], hist[:, :, perm], S)
    assert torch.allclose(e_p, e[:, perm], atol=1e-5)


def test_history_path_is_live(desk_obs):
    pol = _policy()
    obs = dict(desk_obs)
    e0 = pol.encode(obs)
    obs["history"] = torch.ones_like(obs["history"])
    assert not torch.allclose(e0, pol.encode(obs))


@pytest.mark.parametrize("key, role, tensor", [
    ("nodes", "node features", lambda o: o["nodes"][..., :5]),
    ("history", "history", lambda o: o["history"][..., :2]),
    ("adjacency", "adjacency", lambda o: o["adjacency"][:, :3]),
])
def test_shape_error_names_role(desk_obs, key, role, tensor):
    pol = _policy()
    obs = dict(desk_obs)
    obs[key] = tensor(obs)
    with pytest.raises(ShapeError, match=role):
        pol.encode(obs)


@pytest.mark.parametrize("factor", [0.0, 1e3])
def test_outputs_finite_for_extreme_inputs(desk_obs, factor):
    for pol in (_policy(), FlatActorCritic(3, 12, 7)):
        obs = {k: (v * factor if v.is_floating_point() and k not in ("adjacency",) else v)
               for k, v in desk_obs.items()}
        action, logp, value, cv = pol.act(obs, "sample", torch.Generator().manual_seed(0))
        for t in (logp, value, cv, action["user_ratio"], action["eff_budget"]):
            assert torch.isfinite(t).all()


# ------------------------------------------------------- evaluate_actions
@pytest.mark.parametrize("kind", ["hmppo", "standard_ppo"])
def test_logprob_roundtrip(desk_obs, kind):
    torch.manual_seed(0)
    pol = HierarchicalActorCritic(3, 12) if kind == "hmppo" else FlatActorCritic(3, 12, 7)
    obs = dict(desk_obs)
    obs["upper_step"] = torch.tensor([True, False, True, False])
    action, logp, value, _ = pol.act(obs, "sample", torch.Generator().manual_seed(5))
    logp2, ent, value2, _ = pol.evaluate_actions(obs, action)
    assert torch.allclose(logp, logp2, atol=1e-5)
    assert torch.allclose(value, value2)
    assert torch.all(ent >= 0)


def test_degenerate_admission_has_zero_entropy():
    h = _bernoulli_entropy(torch.tensor([0.0, 1.0, 0.5]))
    assert h[0] == 0 and h[1] == 0
    assert h[2] == pytest.approx(math.log(2))


def test_logprob_finite_difference(desk_obs):
    pol = _policy(dtype=torch.float64)
    obs = {k: (v.double() if v.is_floating_point() else v) for k, v in desk_obs.items()}
    obs = {k: (v if k == "user_slice" else v[:1]) for k, v in obs.items()}
    obs["upper_step"] = torch.tensor([True])
    action, *_ = pol.act(obs, "sample", torch.Generator().manual_seed(2))
    action["admission"] = torch.ones_like(action["admission"])
    action["eff_admission"] = action["admission"].clone()
    for key, idx in (("budget_logits", (0, 1, 2)), ("user_logits", (0, 4, 1))):
        x = action[key].clone().requires_grad_(True)
        act = dict(action, **{key: x})
        logp, *_ = pol.evaluate_actions(obs, act)
        (grad,) = torch.autograd.grad(logp.sum(), x)
        h = 1e-5
        plus, minus = action[key].clone(), action[key].clone()
        plus[idx] += h
        minus[idx] -= h
        lp_p = pol.evaluate_actions(obs, dict(action, **{key: plus}))[0].item()
        lp_m = pol.evaluate_actions(obs, dict(action, **{key: minus}))[0].item()
        numeric = (lp_p - lp_m) / (2 * h)
        assert grad[idx].item() == pytest.approx(numeric, rel=1e-3, abs=1e-8)


def test_invalid_action_rejected(desk_obs):
    pol = _policy()
    action, *_ = pol.act(desk_obs, "sample", torch.Generator().manual_seed(0))
    bad = dict(action, admission=action["admission"] * 0.5 + 0.25)
    with pytest.raises(InvalidActionError):
        pol.evaluate_actions(desk_obs, bad)
    bad = dict(action, user_logits=action["user_logits"][:, :5])
    with pytest.raises(InvalidActionError):
        pol.evaluate_actions(desk_obs, bad)
    with pytest.raises(InvalidActionError):
        pol.evaluate_actions(desk_obs, {k: v for k, v in action.items() if k != "budget_logits"})


def test_greedy_mode_is_deterministic(desk_obs):
    pol = _policy()
    a1, *_ = pol.act(desk_obs, "greedy")
    a2, *_ = pol.act(desk_obs, "greedy")
    for k in a1:
        assert torch.equal(a1[k], a2[k])


def test_flat_policy_admits_everything(desk_obs):
    pol = FlatActorCritic(3, 12, 7)
    action, *_ = pol.act(desk_obs, "sample", torch.Generator().manual_seed(0))
    assert torch.all(action["admission"] == 1)
    assert torch.all(action["upper"] == 1)


def test_held_budget_used_between_upper_steps(desk_obs):
    pol = _policy()
    obs = dict(desk_obs)
    obs["upper_step"] = torch.zeros(4, dtype=torch.bool)
    held = torch.tensor([[0.5, 0.2, 0.1], [0.3, 0.3, 0.3], [0.2, 0.5, 0.6]]).expand(4, 3, 3)
    obs["held_budget"] = held
    action, *_ = pol.act(obs, "sample", torch.Generator().manual_seed(0))
    assert torch.equal(action["eff_budget"], held)
    assert np.all(action["upper"].numpy() == 0)
