import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hmppo.baselines import GreedyPolicy
from hmppo.env import SlicingEnv
from hmppo.trainer import (
    CHECKPOINT_MAGIC,
    CheckpointIntegrityError,
    CheckpointVersionError,
    DimensionMismatchError,
    RolloutBuffer,
    TrainConfig,
    Trainer,
    TrainingDivergedError,
    compute_gae,
    load_checkpoint,
    load_policy,
    ppo_clip_loss,
    save_checkpoint,
)

from conftest import make_scenario


def tiny_cfg(**kw):
    base = dict(rollout_steps=64, n_envs=2, minibatch_size=32, epochs=2, total_steps=128, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def tiny_scenario(**kw):
    return make_scenario(users=(2, 3), pool=(100.0, 2e7, 2e8), arrival=2e6, horizon=24, cv=0.2, spread=0.2, **kw)


# ---------------------------------------------------------------------- GAE
def test_gae_single_step():
    adv, ret = compute_gae([1.0], [0.0], [0.0], 0.0, 0.99, 0.95)
    assert adv.tolist() == [1.0] and ret.tolist() == [1.0]


def test_gae_matches_discounted_sum(frozen):
    adv, _ = compute_gae([1, 1, 1], [0, 0, 0], [0, 0, 0], 0.0, 0.5, 1.0)
    assert adv.tolist() == pytest.approx(frozen["gae_111_beta05"], abs=1e-12)


def test_gae_lambda_zero_is_td_error():
    rng = np.random.default_rng(0)
    r, v, d = rng.normal(size=12), rng.normal(size=12), (rng.random(12) < 0.2).astype(float)
    boot = 0.7
    adv, _ = compute_gae(r, v, d, boot, 0.9, 0.0)
    nxt = np.append(v[1:], boot)
    assert adv == pytest.approx(r + 0.9 * nxt * (1 - d) - v, abs=1e-12)


def test_gae_length_mismatch():
    with pytest.raises(ValueError):
        compute_gae([1, 2], [0], [0, 0], 0.0, 0.9, 0.9)


def _reward_to_go(rewards, beta):
    out = []
    for t in range(len(rewards)):
        acc = 0.0
        for k in range(len(rewards) - 1, t - 1, -1):
            acc = rewards[k] + beta * acc
        out.append(acc)
    return out


@settings(max_examples=1000)
@given(rewards=st.lists(st.floats(-10, 10), min_size=1, max_size=40), beta=st.floats(0.01, 1.0))
def test_gae_oracle_property(rewards, beta):
    n = len(rewards)
    adv, ret = compute_gae(rewards, np.zeros(n), np.zeros(n), 0.0, beta, 1.0)
    assert np.allclose(adv, _reward_to_go(rewards, beta), rtol=0, atol=1e-9)
    assert np.array_equal(adv, ret)


# ----------------------------------------------------------------- clip loss
def test_clip_examples(frozen):
    assert ppo_clip_loss(1.0, 3.5, 0.2) == -3.5
    assert ppo_clip_loss(2.0, 1.0, 0.2) == pytest.approx(frozen["clip_ratio2_adv1"])
    assert ppo_clip_loss(0.5, -1.0, 0.2) == pytest.approx(frozen["clip_ratio05_advm1"])


@settings(max_examples=500)
@given(a=st.floats(-1e6, 1e6), eps=st.floats(0.01, 0.99))
def test_clip_no_update_point(a, eps):
    assert ppo_clip_loss(1.0, a, eps) == -a
    t = ppo_clip_loss(torch.tensor([1.0], dtype=torch.float64), torch.tensor([a], dtype=torch.float64), eps)
    assert float(t) == -a


# ------------------------------------------------------------------- config
@pytest.mark.parametrize("kw", [{"discount": 0.0}, {"gae_lambda": 1.5}, {"clip": 1.0}, {"lr_policy": -1},
                                {"rollout_steps": 65, "n_envs": 2}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_standard_ppo_config_drops_extras():
    cfg = TrainConfig.for_method("standard_ppo")
    assert not (cfg.adaptive_weights or cfg.shaping or cfg.lagrangian)
    rc = cfg.reward_config()
    assert not rc.adaptive


def test_buffer_alignment():
    buf = RolloutBuffer(3, 2)
    for t in range(3):
        buf.add({"x": np.full((2, 4), t)}, {"a": np.full((2,), t)}, done=np.full(2, t), value=np.full(2, -t))
    assert buf.full
    assert buf.obs["x"][:, 0, 0].tolist() == [0, 1, 2]
    assert buf.value[:, 1].tolist() == [0, -1, -2]
    with pytest.raises(IndexError):
        buf.add({"x": np.zeros((2, 4))}, {"a": np.zeros(2)})


# ------------------------------------------------------------------ training
@pytest.mark.parametrize("method", ["hmppo", "standard_ppo"])
def test_seeded_runs_identical(method):
    a = Trainer(tiny_scenario(), tiny_cfg(), method).train()
    b = Trainer(tiny_scenario(), tiny_cfg(), method).train()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_zero_learning_rates_freeze_parameters():
    tr = Trainer(tiny_scenario(), tiny_cfg(lr_policy=0.0, lr_value=0.0, lr_dual=0.0))
    before = {k: v.clone() for k, v in tr.policy.state_dict().items()}
    tr.run_iteration()
    for k, v in tr.policy.state_dict().items():
        assert torch.equal(before[k], v), k


def test_first_ratio_is_one_and_duals_nonnegative():
    tr = Trainer(tiny_scenario(), tiny_cfg(lr_dual=0.5, total_steps=256))
    for rec in tr.train():
        assert rec["first_ratio_dev"] <= 1e-5
        assert min(rec[k] for k in rec if k.startswith("lambda_")) >= 0


def test_metrics_written_line_by_line(tmp_path):
    path = tmp_path / "m.jsonl"
    recs = Trainer(tiny_scenario(), tiny_cfg()).train(metrics_path=path)
    lines = path.read_text().splitlines()
    assert [json.loads(x) for x in lines] == json.loads(json.dumps(recs))
    keys = set(recs[0])
    assert {"mean_reward", "qos_satisfaction", "cost_delay_violation", "lambda_delay_violation"} <= keys


def test_divergence_guard():
    tr = Trainer(tiny_scenario(), tiny_cfg(ratio_guard=1e-9, lr_policy=0.05))
    with pytest.raises(TrainingDivergedError, match="ratio"):
        tr.run_iteration()


def test_alternating_levels_runs():
    recs = Trainer(tiny_scenario(), tiny_cfg(alternate_levels=True)).train()
    assert len(recs) == 2


def test_toy_scenario_reaches_zero_delay_violation():
    scen = make_scenario(users=(2,), pool=(100.0, 1e9, 1e10), arrival=1e5, horizon=32, cv=0.1)
    env = SlicingEnv(scen, np.ones((1, 1)))
    env.reset(seed=0)
    greedy = GreedyPolicy(scen)
    assert env.step(greedy.decide(env)).costs[0] == 0.0
    tr = Trainer(scen, tiny_cfg(total_steps=50 * 64, train_loads=(1.0,)))
    hit = None
    for it in range(50):
        if tr.run_iteration()["cost_delay_violation"] == 0.0:
            hit = it
            break
    assert hit is not None


# --------------------------------------------------------------- checkpoints
def test_resume_matches_uninterrupted_run(tmp_path):
    full = Trainer(tiny_scenario(), tiny_cfg(total_steps=256)).train()
    tr = Trainer(tiny_scenario(), tiny_cfg(total_steps=256))
    tr.train(total_steps=128)
    tr.save(tmp_path / "mid.ckpt")
    resumed = Trainer.resume(tmp_path / "mid.ckpt")
    resumed.train()
    assert json.dumps(resumed.metrics, sort_keys=True) == json.dumps(full, sort_keys=True)


def test_dimension_mismatch(tmp_path):
    tr = Trainer(tiny_scenario(), tiny_cfg())
    tr.save(tmp_path / "a.ckpt")
    other = make_scenario(users=(2, 4), horizon=24)
    with pytest.raises(DimensionMismatchError, match="num_users"):
        Trainer.resume(tmp_path / "a.ckpt", other)
    with pytest.raises(DimensionMismatchError):
        load_policy(tmp_path / "a.ckpt", other)


def test_corrupt_checkpoint(tmp_path):
    tr = Trainer(tiny_scenario(), tiny_cfg())
    path = tr.save(tmp_path / "a.ckpt")
    raw = bytearray(path.read_bytes())
    raw[-10] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(path)
    path.write_bytes(bytes(raw[: len(raw) // 2]))
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(path)
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(path)


def test_version_mismatch(tmp_path):
    path = save_checkpoint({"method": "hmppo", "dims": {}}, tmp_path / "v.ckpt")
    raw = path.read_bytes()
    header_end = raw.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(raw[len(CHECKPOINT_MAGIC):header_end])
    header["version"] = 99
    path.write_bytes(CHECKPOINT_MAGIC + json.dumps(header).encode() + raw[header_end:])
    with pytest.raises(CheckpointVersionError, match="99"):
        load_checkpoint(path)


def test_policy_roundtrip(tmp_path):
    tr = Trainer(tiny_scenario(), tiny_cfg())
    tr.run_iteration()
    tr.save(tmp_path / "p.ckpt")
    pol, st = load_policy(tmp_path / "p.ckpt", tiny_scenario())
    assert st["method"] == "hmppo"
    for k, v in tr.policy.state_dict().items():
        assert torch.equal(pol.state_dict()[k], v)
