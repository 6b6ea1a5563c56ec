"""Numpy MLPs and the diagonal-Gaussian actor-critic used by PPO.

All trainable numbers live in one flat float64 vector ``theta`` laid out as
``[actor layers, log_std, critic layers]``; layer weights and biases are views
into it, so the optimizer and the checkpoint writer only ever see ``theta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)
LOG_STD_MIN = np.log(1e-4)
LOG_STD_MAX = np.log(10.0)


class Mlp:
    """tanh hidden layers, linear output. Weights are ``(out, in)`` views into a flat buffer."""

    def __init__(self, sizes, buffer: np.ndarray | None = None, offset: int = 0):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) <= 0:
            raise ValueError("an MLP needs at least input and output sizes, all positive")
        if buffer is None:
            buffer = np.zeros(self.size)
            offset = 0
        self.layers = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = buffer[offset : offset + fan_out * fan_in].reshape(fan_out, fan_in)
            offset += fan_out * fan_in
            b = buffer[offset : offset + fan_out]
            offset += fan_out
            self.layers.append((w, b))

    @staticmethod
    def count(sizes) -> int:
        return sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))

    @property
    def size(self) -> int:
        return self.count(self.sizes)

    def forward(self, x):
        """Returns the output and the list of layer inputs needed by :meth:`backward`."""
        acts = [np.asarray(x, float)]
        h = acts[0]
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = h @ w.T + b
            if i < last:
                h = np.tanh(h)
                acts.append(h)
        return h, acts

    def backward(self, acts, dy, grads: "Mlp") -> np.ndarray:
        """Accumulate dL/dparams into ``grads`` (same layout); returns dL/dx."""
        g = np.asarray(dy, float)
        for i in range(len(self.layers) - 1, -1, -1):
            w, _ = self.layers[i]
            gw, gb = grads.layers[i]
            x = acts[i]
            gw += g.reshape(-1, g.shape[-1]).T @ x.reshape(-1, x.shape[-1])
            gb += g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ w
            if i > 0:
                g = g * (1.0 - acts[i] ** 2)
        return g


def mlp_forward(net: Mlp, x):
    return net.forward(x)


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    qm, r = np.linalg.qr(a)
    qm = qm * np.sign(np.diag(r))
    if rows < cols:
        qm = qm.T
    return gain * qm[:rows, :cols]


class GaussianPolicy:
    """State-independent diagonal Gaussian over joint-velocity commands plus a value net."""

    def __init__(self, obs_dim: int, act_dim: int, hidden=(128, 128), theta: np.ndarray | None = None):
        self.obs_dim, self.act_dim, self.hidden = int(obs_dim), int(act_dim), tuple(hidden)
        actor_sizes = (self.obs_dim, *self.hidden, self.act_dim)
        critic_sizes = (self.obs_dim, *self.hidden, 1)
        n_actor, n_critic = Mlp.count(actor_sizes), Mlp.count(critic_sizes)
        total = n_actor + self.act_dim + n_critic
        self.theta = np.zeros(total) if theta is None else np.asarray(theta, float)
        if self.theta.shape != (total,):
            raise ValueError(f"parameter vector has {self.theta.size} entries, architecture needs {total}")
        self.actor = Mlp(actor_sizes, self.theta, 0)
        self.log_std = self.theta[n_actor : n_actor + self.act_dim]
        self.critic = Mlp(critic_sizes, self.theta, n_actor + self.act_dim)

    def zeros_like(self) -> "GaussianPolicy":
        return GaussianPolicy(self.obs_dim, self.act_dim, self.hidden)

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.obs_dim, self.act_dim, self.hidden, self.theta.copy())

    def initialize(self, rng: np.random.Generator, action_scale) -> None:
        """Orthogonal weights (gain sqrt 2 hidden, 0.01 actor head, 1 critic head), zero biases."""
        for net, head_gain in ((self.actor, 0.01), (self.critic, 1.0)):
            last = len(net.layers) - 1
            for i, (w, b) in enumerate(net.layers):
                w[:] = _orthogonal(rng, *w.shape, head_gain if i == last else np.sqrt(2.0))
                b[:] = 0.0
        self.log_std[:] = np.log(0.5 * np.broadcast_to(np.asarray(action_scale, float), (self.act_dim,)))
        self.clamp_log_std()

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def mean(self, obs):
        return self.actor.forward(obs)[0]

    def value(self, obs):
        return self.critic.forward(obs)[0][..., 0]

    def log_prob(self, obs, actions):
        mu = self.mean(obs)
        return gaussian_log_prob(actions, mu, self.log_std)

    def entropy(self) -> float:
        return float(np.sum(self.log_std) + 0.5 * self.act_dim * (1.0 + LOG_2PI))


def gaussian_log_prob(actions, mean, log_std):
    z = (np.asarray(actions) - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG_2PI


def policy_sample(policy: GaussianPolicy, obs, rng: np.random.Generator):
    mu = policy.mean(obs)
    std = np.exp(policy.log_std)
    a = mu + std * rng.standard_normal(mu.shape)
    return a, gaussian_log_prob(a, mu, policy.log_std)


@dataclass
class RunningNorm:
    """Running mean/variance of observations (parallel Welford merge)."""

    mean: np.ndarray
    var: np.ndarray
    count: float = 1e-4
    clip: float = 10.0

    @classmethod
    def create(cls, dim: int) -> "RunningNorm":
        return cls(np.zeros(dim), np.ones(dim))

    def update(self, batch) -> None:
        batch = np.asarray(batch, float).reshape(-1, self.mean.size)
        b_mean, b_var, b_count = batch.mean(axis=0), batch.var(axis=0), batch.shape[0]
        total = self.count + b_count
        delta = b_mean - self.mean
        m2 = self.var * self.count + b_var * b_count + delta**2 * self.count * b_count / total
        self.mean = self.mean + delta * b_count / total
        self.var = m2 / total
        self.count = total

    def __call__(self, obs):
        return np.clip((np.asarray(obs) - self.mean) / np.sqrt(self.var + 1e-8), -self.clip, self.clip)

    def copy(self) -> "RunningNorm":
        return RunningNorm(self.mean.copy(), self.var.copy(), self.count, self.clip)


def widen_inputs(policy: GaussianPolicy, norm: RunningNorm, new_obs_dim: int, insert_at: int | None = None):
    """Grow the input layer for extra observation entries with zero weights.

    The new columns (inserted at ``insert_at``, default the end) are zero in
    both networks, so the widened policy computes exactly the old function.
    """
    extra = new_obs_dim - policy.obs_dim
    if extra < 0:
        raise ValueError("cannot shrink the observation")
    at = policy.obs_dim if insert_at is None else insert_at
    wide = GaussianPolicy(new_obs_dim, policy.act_dim, policy.hidden)
    for old, new in ((policy.actor, wide.actor), (policy.critic, wide.critic)):
        for (w0, b0), (w1, b1) in zip(old.layers, new.layers):
            if w0.shape == w1.shape:
                w1[:] = w0
            else:
                w1[:] = np.insert(w0, [at] * extra, 0.0, axis=1)
            b1[:] = b0
    wide.log_std[:] = policy.log_std
    wide_norm = RunningNorm(np.insert(norm.mean, [at] * extra, 0.0), np.insert(norm.var, [at] * extra, 1.0), norm.count, norm.clip)
    return wide, wide_norm
