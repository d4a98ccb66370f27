import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perpl.controllers import ErrorState
from perpl.dynamics import VehicleState
from perpl.errors import ConfigError, DataError, NumericalAbort
from perpl.rl import (Adam, Batch, MlpParams, OBS_DIM, Policy, PpoHyper, RewardWeights, Transition,
                      actor_forward, build_observation, compute_advantages, critic_forward, gae,
                      gaussian_logprob, ppo_update, reward)
from perpl.rl.policy import LOG_STD_MAX, LOG_STD_MIN, R_MAX
from perpl.rl.ppo import clipped_objective, loss_and_grad, normalize

seeds = st.integers(0, 2**32 - 1)


# --------------------------------------------------------------------------- networks

def loop_forward(p: MlpParams, x):
    """Scalar-loop oracle for one observation."""
    n_in, hidden = p.w1.shape
    h = []
    for j in range(hidden):
        z = p.b1[j] + sum(x[i] * p.w1[i, j] for i in range(n_in))
        h.append(max(z, 0.0))
    return p.b2[0] + sum(h[j] * p.w2[j, 0] for j in range(hidden))


def test_toy_two_unit_network_by_hand():
    p = MlpParams(np.array([[1.0, -1.0], [2.0, 0.5]]), np.array([0.5, 0.0]),
                  np.array([[2.0], [-3.0]]), np.array([0.25]))
    # x = (1, 1): z = (1 + 2 + 0.5, -1 + 0.5) = (3.5, -0.5); h = (3.5, 0); out = 7 + 0.25
    out, _ = p.forward(np.array([[1.0, 1.0]]))
    assert out[0, 0] == 7.25
    mean, std = actor_forward(np.array([1.0, 1.0]), p, np.array([0.0]), r_max=3.0)
    assert mean[0] == pytest.approx(3.0 * math.tanh(7.25))
    assert std[0] == 1.0
    assert critic_forward(np.array([1.0, 1.0]), p)[0] == 7.25


def test_zero_network_and_log_std_bounds():
    zero = Policy.zeros()
    mean, std = zero.distribution(np.ones(OBS_DIM))
    assert (mean[0], std[0]) == (0.0, 1.0)
    assert zero.value(np.ones(OBS_DIM))[0] == 0.0
    _, std = actor_forward(np.ones(OBS_DIM), zero.actor, np.array([LOG_STD_MIN]))
    assert std[0] == pytest.approx(0.006737947, rel=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_seeded_forward_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    pol = Policy.init(rng)
    pol.actor.w2[...] = rng.normal(0, 0.1, pol.actor.w2.shape)
    x = rng.normal(size=OBS_DIM)
    mean, _ = pol.distribution(x)
    assert mean[0] == pytest.approx(R_MAX * math.tanh(loop_forward(pol.actor, x)), rel=1e-12, abs=1e-15)
    assert pol.value(x)[0] == pytest.approx(loop_forward(pol.critic, x), rel=1e-12, abs=1e-15)


def test_fresh_policy_has_zero_residual():
    pol = Policy.init(np.random.default_rng(5))
    x = np.random.default_rng(6).normal(size=(20, OBS_DIM))
    assert np.all(pol.distribution(x)[0] == 0.0)
    assert np.exp(pol.log_std[0]) == pytest.approx(0.5)


@settings(max_examples=100)
@given(seed=seeds, scale=st.floats(1e-3, 1e4))
def test_residual_is_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    pol = Policy.init(rng)
    pol.actor.w2[...] = rng.normal(0, 5.0, pol.actor.w2.shape)
    x = scale * rng.normal(size=(8, OBS_DIM))
    mean, _ = pol.distribution(x)
    assert np.all(np.abs(mean) <= R_MAX)
    executed, sampled, _ = pol.act(x, rng)
    assert np.all(np.abs(executed) <= R_MAX)


# --------------------------------------------------------------------------- gradients

def random_setup(seed, hidden=8, n=12):
    rng = np.random.default_rng(seed)
    pol = Policy.init(rng, hidden=hidden)
    for net in (pol.actor, pol.critic):
        net.b1[...] = rng.normal(0, 0.3, net.b1.shape)
        net.w2[...] = rng.normal(0, 0.3, net.w2.shape)
        net.b2[...] = rng.normal(0, 0.3, net.b2.shape)
    pol.log_std[0] = rng.uniform(-1.0, 0.5)
    # ReLU and the clipped objective (ratio = 1 +- eps) have kinks; a central
    # difference straddling one measures the jump, not the gradient, so the
    # samples are kept a small margin away from both
    obs = rng.normal(size=(n, OBS_DIM))
    pre = np.hstack([obs @ net.w1 + net.b1 for net in (pol.actor, pol.critic)])
    obs = obs[np.min(np.abs(pre), axis=1) > 1e-3]
    n = len(obs)
    mean, std = pol.distribution(obs)
    actions = mean + std * rng.normal(size=n)
    # behaviour log-probs from a nearby policy so ratios straddle the clip band
    old = gaussian_logprob(actions, mean, std) + rng.normal(0, 0.3, n)
    ratio = np.exp(gaussian_logprob(actions, mean, std) - old)
    near_kink = np.minimum(np.abs(ratio - 0.8), np.abs(ratio - 1.2)) < 1e-3
    old[near_kink] += 0.01
    batch = Batch(obs, actions, old, rng.normal(size=n), rng.normal(size=n))
    return pol, batch


def fd_check(pol, batch, clip_eps=0.2, value_coef=0.5, h=1e-5):
    _, grad, _ = loss_and_grad(pol, batch, clip_eps, value_coef)
    base = pol.flat()
    worst = 0.0
    for i in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[i] += h
        minus[i] -= h
        fd = (loss_and_grad(pol.with_flat(plus), batch, clip_eps, value_coef)[0]
              - loss_and_grad(pol.with_flat(minus), batch, clip_eps, value_coef)[0]) / (2 * h)
        denom = max(abs(fd), abs(grad[i]), 1e-6)
        worst = max(worst, abs(fd - grad[i]) / denom)
    return worst


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_gradients_match_finite_differences(seed):
    pol, batch = random_setup(seed)
    assert fd_check(pol, batch) < 1e-4


def test_full_size_gradient_matches_finite_differences():
    pol, batch = random_setup(123, hidden=100, n=16)
    assert fd_check(pol, batch) < 1e-4


# --------------------------------------------------------------------------- log-prob, clip

def test_logprob_examples():
    c = 0.5 * math.log(2 * math.pi)
    assert gaussian_logprob(0.0, 0.0, 1.0) == pytest.approx(-c)
    assert gaussian_logprob(-c, 0.0, 1.0) == pytest.approx(-c - 0.5 * c * c)
    assert gaussian_logprob(1.0, 0.0, 1.0) == pytest.approx(-0.9189385 - 0.5, abs=1e-7)
    density = math.exp(-((2 - 1) ** 2) / (2 * 0.25)) / (0.5 * math.sqrt(2 * math.pi))
    assert gaussian_logprob(2.0, 1.0, 0.5) == pytest.approx(math.log(density), rel=1e-12)


@settings(max_examples=100)
@given(x=st.floats(-10, 10), mu=st.floats(-10, 10), sigma=st.floats(0.01, 5))
def test_logprob_matches_density(x, mu, sigma):
    density = math.exp(-((x - mu) ** 2) / (2 * sigma**2)) / (sigma * math.sqrt(2 * math.pi))
    if density > 1e-300:
        assert gaussian_logprob(x, mu, sigma) == pytest.approx(math.log(density), rel=1e-9, abs=1e-9)


def test_clip_examples():
    assert clipped_objective(1.5, 2.0, 0.2) == pytest.approx(2.4)
    assert clipped_objective(0.5, -1.0, 0.2) == pytest.approx(-0.8)


@settings(max_examples=100)
@given(ratio=st.floats(0.0, 5.0), adv=st.floats(-10, 10), eps=st.floats(0.01, 0.99))
def test_clip_is_pessimistic(ratio, adv, eps):
    assert clipped_objective(ratio, adv, eps) <= ratio * adv + 1e-12


# --------------------------------------------------------------------------- GAE

def test_gae_examples():
    adv, ret = gae(np.array([1.0]), np.array([0.0]), np.array([True]), 0.0, 0.9, 0.95)
    assert (adv[0], ret[0]) == (1.0, 1.0)
    adv, _ = gae(np.array([0.0, 1.0]), np.zeros(2), np.array([False, True]), 0.0, 0.9, 0.95)
    assert adv == pytest.approx([0.855, 1.0], abs=1e-15)
    with pytest.raises(ValueError):
        gae(np.array([]), np.array([]), np.array([]), 0.0, 0.9, 0.95)
    with pytest.raises(ValueError):
        compute_advantages([], 0.9, 0.95)


def direct_gae(rewards, values, dones, bootstrap, gamma, lam):
    n = len(rewards)
    nxt = [values[t + 1] if t + 1 < n else bootstrap for t in range(n)]
    delta = [rewards[t] + (0.0 if dones[t] else gamma * nxt[t]) - values[t] for t in range(n)]
    out = []
    for t in range(n):
        total, w = 0.0, 1.0
        for k in range(t, n):
            total += w * delta[k]
            if dones[k]:
                break
            w *= gamma * lam
        out.append(total)
    return np.array(out)


@settings(max_examples=100)
@given(seed=seeds, n=st.integers(1, 40), gamma=st.floats(0.5, 1.0), lam=st.floats(0.0, 1.0))
def test_gae_matches_direct_summation(seed, n, gamma, lam):
    rng = np.random.default_rng(seed)
    rewards, values = rng.normal(size=n), rng.normal(size=n)
    dones = rng.random(n) < 0.15
    bootstrap = float(rng.normal())
    adv, ret = gae(rewards, values, dones, bootstrap, gamma, lam)
    assert np.max(np.abs(adv - direct_gae(rewards, values, dones, bootstrap, gamma, lam))) < 1e-12
    assert np.max(np.abs(ret - adv - values)) < 1e-12


def test_compute_advantages_from_transitions():
    traj = [Transition(np.zeros(OBS_DIM), 0.0, 0.0, r, 0.0, d) for r, d in ((0.0, False), (1.0, True))]
    adv, ret = compute_advantages(traj, 0.9, 0.95)
    assert adv == pytest.approx([0.855, 1.0])
    n = normalize(np.array([1.0, 2.0, 3.0]))
    assert n.mean() == pytest.approx(0.0) and n.std() == pytest.approx(1.0, rel=1e-6)


# --------------------------------------------------------------------------- PPO update

def test_hyper_defaults_and_validation():
    h = PpoHyper()
    assert (h.lr, h.gamma, h.gae_lambda, h.update_epochs, h.clip_eps, h.value_coef, h.max_grad_norm) == \
        (2e-4, 0.9, 0.95, 10, 0.2, 0.5, 0.5)
    with pytest.raises(ConfigError) as err:
        PpoHyper(gamma=0.0, clip_eps=1.0)
    assert len(err.value.problems) == 2
    with pytest.raises(ConfigError):
        PpoHyper.from_dict({"lr_value": 0.5})


def test_adam_first_step_is_lr_times_sign():
    opt = Adam(3, lr=0.1)
    new = opt.step(np.zeros(3), np.array([2.0, -0.5, 0.0]))
    assert new == pytest.approx([-0.1, 0.1, 0.0], abs=1e-6)
    clone = Adam.from_state(json.loads(json.dumps(opt.state_dict())))
    assert np.array_equal(clone.m, opt.m) and clone.t == 1


def test_ppo_update_is_pure_and_deterministic():
    pol, batch = random_setup(7, hidden=16, n=100)
    before = pol.flat().copy()
    h = PpoHyper(minibatch_size=32, update_epochs=3)
    a, opt_a, diag = ppo_update(batch, pol, h, np.random.default_rng(1))
    b, opt_b, _ = ppo_update(batch, pol, h, np.random.default_rng(1))
    assert np.array_equal(pol.flat(), before)
    assert np.array_equal(a.flat(), b.flat()) and np.array_equal(opt_a.m, opt_b.m)
    assert not np.array_equal(a.flat(), before)
    assert set(diag) == {"objective", "value_loss", "clip_fraction"}
    assert opt_a.t == 3 * math.ceil(100 / 32)


def test_ppo_update_aborts_on_nan_without_writing():
    pol, batch = random_setup(8, hidden=8, n=10)
    batch.advantages[3] = np.nan
    before = pol.flat().copy()
    with pytest.raises(NumericalAbort):
        ppo_update(batch, pol, PpoHyper(), np.random.default_rng(0))
    assert np.array_equal(pol.flat(), before)


def test_log_std_stays_clamped():
    pol, batch = random_setup(9, hidden=8, n=64)
    pol.log_std[0] = LOG_STD_MAX
    new, _, _ = ppo_update(batch, pol, PpoHyper(lr=0.5), np.random.default_rng(0))
    assert LOG_STD_MIN <= new.log_std[0] <= LOG_STD_MAX


@pytest.mark.parametrize("c", [-1.0, 0.0, 1.0])
def test_ppo_smoke_converges_on_bandit(c):
    rng = np.random.default_rng(42)
    pol = Policy.init(rng)
    obs = np.tile(np.linspace(-1, 1, OBS_DIM), (64, 1))
    h = PpoHyper(lr=1e-3)
    opt = None
    for _ in range(200):
        _, sampled, logp = pol.act(obs, rng)
        rewards = -(sampled - c) ** 2
        values = pol.value(obs)
        adv = rewards - values  # single-step episodes: delta = r - V
        batch = Batch(obs, sampled, logp, normalize(adv), rewards)
        pol, opt, _ = ppo_update(batch, pol, h, rng, opt)
    assert abs(pol.distribution(obs[:1])[0][0] - c) < 0.1


# --------------------------------------------------------------------------- reward, observation

def test_reward_examples():
    w = RewardWeights()
    assert (w.w_d, w.w_v, w.w_a, w.w_b, w.d_ref, w.v_ref, w.a_ref) == (1, 0.5, 0.1, 5, 10, 5, 3)
    assert reward(ErrorState(0.0, 0.0, 0.0), 0.0, False) == 0.0
    assert reward(ErrorState(10.0, 0.0, 1.0), 0.0, False) == pytest.approx(-1.0)
    assert reward(ErrorState(10.0, 5.0, 0.0), 3.0, True) == pytest.approx(-6.6)
    with pytest.raises(ConfigError):
        RewardWeights.from_dict({"w_x": 1})


def test_observation_layout_and_padding():
    err = ErrorState(5.0, -2.5, 1.5)
    ego = VehicleState(100.0, 10.0, 1.5)
    preds = [VehicleState(130.0, 12.0, 0.6), VehicleState(160.0, 14.0, -0.3)]
    obs = build_observation(err, ego, preds)
    assert obs.shape == (OBS_DIM,) == (15,)
    assert obs[:3] == pytest.approx([0.5, -0.5, 0.5])
    assert obs[3:7] == pytest.approx([1.0, 0.6, 0.2, 0.6])
    assert obs[7:11] == pytest.approx([1.0, 0.7, -0.1, 1.2])
    assert np.all(obs[11:] == 0.0)


# --------------------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    pol, _ = random_setup(3, hidden=100)
    pol.meta = {"seed": 3}
    opt = Adam(pol.flat().size, 2e-4)
    pol.save(tmp_path / "p.json", opt.state_dict())
    back = Policy.load(tmp_path / "p.json")
    assert np.array_equal(back.flat(), pol.flat())
    assert back.meta == {"seed": 3} and back.normalization == pol.normalization
    raw = json.loads((tmp_path / "p.json").read_text())
    assert raw["actor"]["shapes"]["w1"] == [15, 100]
    assert "optimizer" in raw


def test_checkpoint_rejects_bad_files(tmp_path):
    pol, _ = random_setup(4, hidden=100)
    raw = pol.to_dict()
    bad = json.loads(json.dumps(raw))
    bad["actor"]["w1"] = bad["actor"]["w1"][:-1]
    with pytest.raises(DataError, match="shape"):
        Policy.from_dict(bad)
    bad = json.loads(json.dumps(raw))
    del bad["critic"]
    with pytest.raises(DataError):
        Policy.from_dict(bad)
    with pytest.raises(DataError):
        Policy.from_dict({**raw, "format": "other"})
    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(DataError):
        Policy.load(tmp_path / "junk.json")
    with pytest.raises(DataError):
        Policy.load(tmp_path / "missing.json")
