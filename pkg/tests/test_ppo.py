import numpy as np
import pytest

from reachlab.dynamics import ee_position, link_sphere_centers
from reachlab.env import RewardWeights, StepResult, VecReachEnv, reward
from reachlab.obstacles import ObstacleSet, closest_points, obstacle_penalty
from reachlab.policy import GaussianPolicy, RunningNorm
from reachlab.ppo import (Adam, PpoConfig, collect_rollouts, gae, gae_from_values, normalize_advantages,
                          ppo_loss_and_grad, ppo_update)
from reachlab.regions import AnnularSector


def brute_gae(rewards, values, last_value, dones, gamma, lam):
    t_len = len(rewards)
    nxt = np.append(values[1:], last_value)
    delta = rewards + gamma * nxt * (1 - dones) - values
    adv = np.zeros(t_len)
    for t in range(t_len):
        coef = 1.0
        for s in range(t, t_len):
            adv[t] += coef * delta[s]
            coef *= gamma * lam * (1 - dones[s])
    return adv


def test_gae_matches_brute_force(rng):
    for _ in range(20):
        r, v = rng.normal(size=10), rng.normal(size=10)
        d = (rng.uniform(size=10) < 0.2).astype(float)
        last = rng.normal()
        adv, ret = gae_from_values(r, v, np.array(last), d, 0.97, 0.9)
        np.testing.assert_allclose(adv, brute_gae(r, v, last, d, 0.97, 0.9), atol=1e-12, rtol=0)
        np.testing.assert_allclose(ret, adv + v, atol=1e-15)


def test_gae_examples():
    adv, _ = gae_from_values(np.array([1.0]), np.array([0.0]), np.array(0.0), np.array([1.0]), 0.99, 0.95)
    assert adv[0] == 1.0
    r, v = np.array([1.0, 2.0, 3.0]), np.array([0.5, -1.0, 2.0])
    adv, _ = gae_from_values(r, v, np.array(4.0), np.zeros(3), 1.0, 1.0)
    np.testing.assert_allclose(adv, [6 + 4 - 0.5, 5 + 4 + 1.0, 3 + 4 - 2.0], atol=1e-12)


def test_gae_bootstraps_truncations_through_next_values():
    # step 1 is a truncation: its successor value 5 is used but the recursion is cut
    r, v = np.zeros(3), np.zeros(3)
    nv = np.array([0.0, 5.0, 0.0])
    adv, _ = gae(r, v, nv, np.array([0.0, 1.0, 0.0]), 1.0, 1.0)
    np.testing.assert_allclose(adv, [5.0, 5.0, 0.0])


def test_gae_batched_over_lanes(rng):
    r, v = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    d = (rng.uniform(size=(10, 3)) < 0.2).astype(float)
    last = rng.normal(size=3)
    adv, _ = gae_from_values(r, v, last, d, 0.99, 0.95)
    for e in range(3):
        np.testing.assert_allclose(adv[:, e], brute_gae(r[:, e], v[:, e], last[e], d[:, e], 0.99, 0.95), atol=1e-12)


def test_advantage_normalization(rng):
    a = normalize_advantages(rng.normal(3.0, 7.0, size=1000))
    assert abs(a.mean()) <= 1e-10
    assert abs(a.std() - 1.0) <= 1e-6
    np.testing.assert_array_equal(normalize_advantages(np.full(4, 2.0)), 0.0)


def _toy(rng, ratio_spread=0.05):
    pol = GaussianPolicy(3, 2, (5, 4))
    pol.initialize(rng, 1.0)
    pol.theta[:] += rng.normal(size=pol.theta.size) * 0.3
    obs, actions = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    old = pol.log_prob(obs, actions) + rng.normal(size=4) * ratio_spread
    return pol, obs, actions, old, rng.normal(size=4), rng.normal(size=4)


def _fd(f, theta, eps=1e-6):
    out = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = eps
        out[i] = (f(theta + e) - f(theta - e)) / (2 * eps)
    return out


@pytest.mark.parametrize("spread", [0.05, 0.6])
def test_total_loss_gradient_matches_finite_differences(rng, spread):
    cfg = PpoConfig(entropy_coeff=0.01)
    pol, obs, actions, old, adv, ret = _toy(rng, spread)
    grads = pol.zeros_like()
    ppo_loss_and_grad(pol, grads, obs, actions, old, adv, ret, cfg)

    def loss(th):
        return ppo_loss_and_grad(GaussianPolicy(3, 2, (5, 4), th), pol.zeros_like(), obs, actions, old, adv, ret, cfg)[0]

    fd = _fd(loss, pol.theta.copy())
    assert np.max(np.abs(grads.theta - fd) / np.maximum(1.0, np.abs(fd))) <= 1e-5


def test_unit_ratio_gives_vanilla_policy_gradient(rng):
    cfg = PpoConfig(value_loss_coeff=0.0)
    pol, obs, actions, _, adv, ret = _toy(rng)
    old = pol.log_prob(obs, actions)
    grads = pol.zeros_like()
    _, stats = ppo_loss_and_grad(pol, grads, obs, actions, old, adv, ret, cfg)
    assert stats["policy_loss"] == pytest.approx(-adv.mean(), abs=1e-14)
    assert stats["clip_fraction"] == 0.0 and stats["kl"] == 0.0

    def pg(th):
        return -np.mean(adv * GaussianPolicy(3, 2, (5, 4), th).log_prob(obs, actions))

    np.testing.assert_allclose(grads.theta, _fd(pg, pol.theta.copy()), atol=1e-8)


def test_clipped_sample_has_zero_surrogate_gradient(rng):
    cfg = PpoConfig(value_loss_coeff=0.0)
    pol, obs, actions, _, _, ret = _toy(rng)
    old = pol.log_prob(obs, actions) - np.log(1 + 2 * cfg.clip_epsilon)
    grads = pol.zeros_like()
    _, stats = ppo_loss_and_grad(pol, grads, obs, actions, old, np.ones(4), ret, cfg)
    np.testing.assert_array_equal(grads.theta, 0.0)
    assert stats["clip_fraction"] == 1.0
    assert stats["kl"] >= 0.0


def test_adam_matches_reference_formula():
    adam = Adam(2, lr=0.1)
    p = np.array([1.0, -1.0])
    g = np.array([0.5, -2.0])
    adam.step(p, g)
    # first step moves every coordinate by lr against the gradient sign
    np.testing.assert_allclose(p, [0.9, -0.9], atol=1e-8)
    m = 0.1 * g
    adam.step(p, g)
    m = 0.9 * m + 0.1 * g
    v = 0.999 * (0.001 * g * g) + 0.001 * g * g
    step = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(p, np.array([0.9, -0.9]) - step, atol=1e-12)


class Bandit:
    """One-step episodes with reward -|a - a*|^2 and a constant observation."""

    def __init__(self, num_envs, target):
        self.num_envs = num_envs
        self.target = np.asarray(target, float)

    def reset(self):
        return np.ones((self.num_envs, 1))

    def step(self, actions):
        r = -np.sum((actions - self.target) ** 2, axis=1)
        obs = self.reset()
        done = np.ones(self.num_envs, dtype=bool)
        return StepResult(obs, r, ~done, done, obs)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_bandit_converges(seed):
    rng = np.random.default_rng(seed)
    target = np.array([0.3, -0.5])
    env = Bandit(8, target)
    pol = GaussianPolicy(1, 2, (16, 16))
    pol.initialize(rng, 1.0)
    norm = RunningNorm.create(1)
    cfg = PpoConfig(horizon=16, minibatch_size=64, epochs_per_update=4, learning_rate=3e-3)
    adam = Adam(pol.theta.size, cfg.learning_rate)
    obs = None
    for _ in range(200):
        batch, obs = collect_rollouts(env, pol, norm, cfg.horizon, rng, obs)
        ppo_update(pol, batch, cfg, adam, rng)
    mean = pol.mean(norm(np.ones((1, 1))))[0]
    assert np.linalg.norm(mean - target) < 0.05


def _env(planar2, seed, obstacles=True):
    region = AnnularSector(inner_radius=0.6, outer_radius=1.4, sweep_angle=np.pi / 2)
    return VecReachEnv(planar2, 2, region, obstacles=obstacles, seed=seed)


def test_rollout_shapes_and_determinism(planar2):
    def run():
        rng = np.random.default_rng(3)
        env = _env(planar2, 3)
        pol = GaussianPolicy(env.obs_dim, 2, (8, 8))
        pol.initialize(rng, env.action_scale)
        batch, _ = collect_rollouts(env, pol, RunningNorm.create(env.obs_dim), 3, rng)
        return batch

    a, b = run(), run()
    assert a.obs.shape == (3, 2, 13) and a.rewards.shape == (3, 2) and a.size == 6
    for name in ("obs", "actions", "log_probs", "rewards", "values", "next_values"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_rewards_replay_from_state(planar2):
    """Recompute every reward from the arm state with the reference kinematics and distance code."""
    env = _env(planar2, 4)
    env.reset()
    rng = np.random.default_rng(4)
    w = RewardWeights()
    for _ in range(60):
        goal, qd0 = env.goal.copy(), env.qd.copy()
        scenes = [env.scene(b) for b in range(2)]
        res = env.step(rng.normal(size=(2, 2)))
        for b in range(2):
            q = res.final_obs[b, 3:5]
            dx = goal[b] - ee_position(planar2, q)
            qdd = (res.final_obs[b, 5:7] - qd0[b]) / 0.01
            dist = closest_points(link_sphere_centers(planar2, q), scenes[b] if len(scenes[b]) else ObstacleSet(), 2)
            expected = reward(w, dx, qdd, obstacle_penalty(dist, w.d_max)[1])
            assert res.reward[b] == pytest.approx(expected, abs=1e-9)


def test_timeout_bootstraps_and_abort_does_not(planar2):
    class Scripted:
        num_envs = 1

        def __init__(self):
            self.t = 0

        def reset(self):
            return np.zeros((1, 1))

        def step(self, actions):
            self.t += 1
            obs = np.full((1, 1), float(self.t))
            timeout, abort = np.array([self.t == 2]), np.array([self.t == 4])
            return StepResult(np.zeros((1, 1)) if self.t in (2, 4) else obs, np.zeros(1), timeout, abort, obs)

    pol = GaussianPolicy(1, 1, (4,))
    pol.initialize(np.random.default_rng(0), 1.0)
    pol.critic.layers[-1][1][:] = 0.0
    pol.critic.layers[-1][0][:] = 1.0
    norm = RunningNorm(np.zeros(1), np.ones(1))
    batch, _ = collect_rollouts(Scripted(), pol, norm, 5, np.random.default_rng(0))
    assert batch.next_values[1, 0] == pytest.approx(pol.value(norm(np.full((1, 1), 2.0)))[0])
    assert batch.next_values[3, 0] == 0.0
    assert batch.next_values[0, 0] == batch.values[1, 0]


def test_update_reports_stats(planar2):
    rng = np.random.default_rng(5)
    env = _env(planar2, 5, obstacles=False)
    pol = GaussianPolicy(env.obs_dim, 2, (8, 8))
    pol.initialize(rng, env.action_scale)
    norm = RunningNorm.create(env.obs_dim)
    batch, _ = collect_rollouts(env, pol, norm, 20, rng)
    cfg = PpoConfig(minibatch_size=10, epochs_per_update=2)
    stats = ppo_update(pol, batch, cfg, Adam(pol.theta.size), rng)
    assert set(stats) == {"policy_loss", "value_loss", "kl", "clip_fraction", "skipped"}
    assert 0.0 <= stats["clip_fraction"] <= 1.0 and stats["skipped"] == 0


def test_non_finite_minibatch_is_skipped(planar2):
    rng = np.random.default_rng(6)
    env = _env(planar2, 6, obstacles=False)
    pol = GaussianPolicy(env.obs_dim, 2, (8, 8))
    pol.initialize(rng, env.action_scale)
    batch, _ = collect_rollouts(env, pol, RunningNorm.create(env.obs_dim), 10, rng)
    batch.rewards[0, 0] = np.nan
    before = pol.theta.copy()
    stats = ppo_update(pol, batch, PpoConfig(minibatch_size=20, epochs_per_update=1), Adam(pol.theta.size), rng)
    assert stats["skipped"] == 1
    np.testing.assert_array_equal(pol.theta, before)
