"""Soft Actor-Critic over a pluggable policy backend.

The trainer is identical for the quantum and the MLP policy: both provide
``distribution(obs)`` and ``backward(cache, grad_mu, grad_log_std)`` and a flat
``params`` vector. Critics are :class:`~qsac.nn.DenseNet` instances taking
``concat(obs, action)`` with the action in the policy's (-1, 1) units; the replay
buffer stores env-scale actions, which are mapped back before they reach a critic.

Update order on every update tick: critics, policy, temperature (if auto), targets.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .envs import EnvSpec, scale_action, unscale_action
from .errors import ConfigurationError, EnvironmentStepError, StructuralError, UsageError
from .nn import DEFAULT_HIDDEN, Adam, DenseNet
from .policy import HALF_LOG_2PI, TANH_EPS


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray        # (B, obs_dim)
    action: np.ndarray     # (B, act_dim), env scale
    reward: np.ndarray     # (B,)
    next_obs: np.ndarray   # (B, obs_dim)
    done: np.ndarray       # (B,) float, 1.0 on terminal transitions

    def __len__(self):
        return self.reward.shape[0]


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ConfigurationError("replay capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, act_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.inserted = 0

    def __len__(self):
        return min(self.inserted, self.capacity)

    def push(self, t: Transition) -> None:
        i = self.inserted % self.capacity
        self.obs[i] = t.obs
        self.action[i] = t.action
        self.reward[i] = t.reward
        self.next_obs[i] = t.next_obs
        self.done[i] = float(t.done)
        self.inserted += 1

    def _order(self):
        n = len(self)
        start = self.inserted - n
        return [(start + k) % self.capacity for k in range(n)]

    def contents(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        return [Transition(self.obs[i].copy(), self.action[i].copy(), float(self.reward[i]),
                           self.next_obs[i].copy(), bool(self.done[i])) for i in self._order()]

    def sample(self, n: int, rng) -> Batch:
        size = len(self)
        if size == 0:
            raise UsageError("cannot sample from an empty replay buffer")
        if n > size:
            raise UsageError(f"requested {n} samples but the buffer holds {size}")
        # slots [0, size) are exactly the live entries, full or not
        idx = rng.integers(0, size, n)
        return Batch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.done[idx])

    def state_dict(self):
        order = self._order()
        return {"capacity": self.capacity, "inserted": self.inserted,
                "obs": self.obs[order].tolist(), "action": self.action[order].tolist(),
                "reward": self.reward[order].tolist(), "next_obs": self.next_obs[order].tolist(),
                "done": self.done[order].tolist()}

    def load_state_dict(self, doc):
        n = len(doc["reward"])
        self.inserted = doc["inserted"]
        start = self.inserted - n
        idx = [(start + k) % self.capacity for k in range(n)]
        for name in ("obs", "action", "reward", "next_obs", "done"):
            if n:
                getattr(self, name)[idx] = np.asarray(doc[name], dtype=np.float64)


@dataclass
class SacHyperparams:
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 1.0          # fixed value, or the starting value when auto_alpha
    auto_alpha: bool = True
    target_entropy: float | None = None   # None -> -act_dim
    batch_size: int = 256
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    lr_alpha: float = 3e-4
    start_steps: int = 1000
    update_every: int = 1
    capacity: int = 100_000
    critic_hidden: tuple[int, ...] = DEFAULT_HIDDEN

    def __post_init__(self):
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("gamma must be in [0, 1)")
        if not 0 < self.tau <= 1:
            raise ConfigurationError("tau must be in (0, 1]")
        if self.alpha < 0 or (self.auto_alpha and self.alpha <= 0):
            raise ConfigurationError("alpha must be >= 0 (and > 0 when auto-tuned)")
        if self.batch_size < 1 or self.update_every < 1 or self.capacity < 1 or self.start_steps < 0:
            raise ConfigurationError("batch_size, update_every, capacity must be >= 1, start_steps >= 0")
        for lr in (self.lr_actor, self.lr_critic, self.lr_alpha):
            if lr <= 0:
                raise ConfigurationError("learning rates must be positive")


# ---------------------------------------------------------------- loss pieces

def bootstrap_target(reward, done, q1_next, q2_next, next_log_prob, alpha, gamma):
    """y = r + gamma * (1 - done) * (min(Q1', Q2') - alpha * log pi(a'|s'))."""
    soft_value = np.minimum(q1_next, q2_next) - alpha * next_log_prob
    return reward + gamma * (1.0 - done) * soft_value


def _critic_input(obs, unit_action):
    return np.concatenate([obs, unit_action], axis=1)


def squashed_sample(mu, log_std, noise):
    """Reparameterized sample; returns (pre-squash u, action tanh(u), log-prob per row)."""
    sigma = np.exp(log_std)
    u = mu + sigma * noise
    t = np.tanh(u)
    logp = (-log_std - HALF_LOG_2PI - 0.5 * noise * noise - np.log(1.0 - t * t + TANH_EPS)).sum(axis=1)
    return u, t, logp


def critic_target(batch: Batch, targets, policy, alpha, gamma, rng) -> np.ndarray:
    mu, log_std, _ = policy.distribution(batch.next_obs)
    _, a_next, logp_next = squashed_sample(mu, log_std, rng.standard_normal(mu.shape))
    x = _critic_input(batch.next_obs, a_next)
    q1 = targets[0](x)[:, 0]
    q2 = targets[1](x)[:, 0]
    return bootstrap_target(batch.reward, batch.done, q1, q2, logp_next, alpha, gamma)


def critic_loss_and_grad(critic: DenseNet, obs, unit_action, y):
    """Mean squared error to ``y`` and its gradient w.r.t. the critic's parameters."""
    q, cache = critic.forward(_critic_input(obs, unit_action))
    err = q[:, 0] - y
    grads, _ = critic.backward(cache, (2.0 / err.size) * err[:, None])
    return float(np.mean(err * err)), grads


def critic_update(batch: Batch, critics, critic_opts, y, env_spec: EnvSpec):
    unit = unscale_action(batch.action, env_spec)
    losses = []
    for critic, opt in zip(critics, critic_opts):
        loss, grads = critic_loss_and_grad(critic, batch.obs, unit, y)
        critic.params = opt.step(critic.params, grads)
        losses.append(loss)
    return tuple(losses)


def policy_loss_and_grad(obs, policy, critics, alpha, noise):
    """Loss mean(alpha * log pi(a|s) - min_k Q_k(s, a)) with a reparameterized, and its gradient.

    Critics are only differentiated w.r.t. their action input; their parameters are
    left alone. Returns (loss, flat policy gradient, per-row log-probs).
    """
    mu, log_std, cache = policy.distribution(obs)
    B, A = mu.shape
    sigma = np.exp(log_std)
    u, t, logp = squashed_sample(mu, log_std, noise)
    x = _critic_input(obs, t)
    q1, c1 = critics[0].forward(x)
    q2, c2 = critics[1].forward(x)
    pick1 = q1[:, 0] <= q2[:, 0]
    q_min = np.where(pick1, q1[:, 0], q2[:, 0])
    loss = float(np.mean(alpha * logp - q_min))
    _, gx1 = critics[0].backward(c1, -(pick1[:, None] / B))
    _, gx2 = critics[1].backward(c2, -(~pick1[:, None] / B))
    g_t = (gx1 + gx2)[:, -A:]
    one_minus = 1.0 - t * t
    dk_du = 2.0 * t * one_minus / (one_minus + TANH_EPS)
    g_u = g_t * one_minus + (alpha / B) * dk_du
    g_mu = g_u
    g_log_std = g_u * sigma * noise - alpha / B
    return loss, policy.backward(cache, g_mu, g_log_std), logp


def policy_update(batch: Batch, policy, policy_opt, critics, alpha, rng):
    noise = rng.standard_normal((len(batch), policy_action_dim(policy)))
    loss, grads, logp = policy_loss_and_grad(batch.obs, policy, critics, alpha, noise)
    policy.params = policy_opt.step(policy.params, grads)
    return loss, logp


def policy_action_dim(policy) -> int:
    return policy.cfg.act_dim if hasattr(policy, "cfg") else policy.act_dim


@dataclass
class AlphaState:
    """Entropy temperature kept positive by optimizing its logarithm."""

    log_alpha: float
    target_entropy: float
    opt: Adam

    @classmethod
    def create(cls, alpha, target_entropy, lr):
        return cls(math.log(alpha), float(target_entropy), Adam(1, lr=lr))

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)


def alpha_update(state: AlphaState, log_probs) -> float:
    """One Adam step on L = -alpha * mean(log pi + target_entropy); returns the new alpha."""
    grad = -state.alpha * float(np.mean(np.asarray(log_probs) + state.target_entropy))
    state.log_alpha = float(state.opt.step(np.array([state.log_alpha]), np.array([grad]))[0])
    return state.alpha


def polyak_update(targets, critics, tau):
    for target, online in zip(targets, critics):
        if target.n_params != online.n_params:
            raise StructuralError("target and online networks differ in shape")
        target.params = tau * online.params + (1.0 - tau) * target.params
    return targets


# ---------------------------------------------------------------- agent + trainer

class SACAgent:
    def __init__(self, policy, env_spec: EnvSpec, hp: SacHyperparams, rng):
        self.policy = policy
        self.env_spec = env_spec
        self.hp = hp
        self.rng = rng
        in_dim = env_spec.obs_dim + env_spec.act_dim
        self.critics = [DenseNet((in_dim, *hp.critic_hidden, 1), rng=rng) for _ in range(2)]
        self.targets = [c.copy() for c in self.critics]
        self.critic_opts = [Adam(c.n_params, lr=hp.lr_critic) for c in self.critics]
        self.policy_opt = Adam(policy.n_params, lr=hp.lr_actor)
        target_entropy = -env_spec.act_dim if hp.target_entropy is None else hp.target_entropy
        self.alpha_state = AlphaState.create(hp.alpha, target_entropy, hp.lr_alpha) if hp.auto_alpha else None
        self.buffer = ReplayBuffer(hp.capacity, env_spec.obs_dim, env_spec.act_dim)
        self.call_log = None  # set to a list to record update phases
        self.n_updates = 0

    @property
    def alpha(self) -> float:
        return self.alpha_state.alpha if self.alpha_state is not None else self.hp.alpha

    def act(self, obs, deterministic=False) -> np.ndarray:
        """Env-scale action for one observation."""
        mu, log_std, _ = self.policy.distribution(np.asarray(obs, dtype=np.float64)[None, :])
        if deterministic:
            unit = np.tanh(mu[0])
        else:
            _, unit, _ = squashed_sample(mu, log_std, self.rng.standard_normal(mu.shape))
            unit = unit[0]
        return scale_action(unit, self.env_spec)

    def _log(self, name):
        if self.call_log is not None:
            self.call_log.append(name)

    def update(self, batch: Batch) -> dict:
        alpha = self.alpha
        y = critic_target(batch, self.targets, self.policy, alpha, self.hp.gamma, self.rng)
        self._log("critic_update")
        l1, l2 = critic_update(batch, self.critics, self.critic_opts, y, self.env_spec)
        self._log("policy_update")
        pi_loss, logp = policy_update(batch, self.policy, self.policy_opt, self.critics, alpha, self.rng)
        if self.alpha_state is not None:
            self._log("alpha_update")
            alpha_update(self.alpha_state, logp)
        self._log("polyak_update")
        polyak_update(self.targets, self.critics, self.hp.tau)
        self.n_updates += 1
        return {"critic_loss_1": l1, "critic_loss_2": l2, "policy_loss": pi_loss,
                "log_prob": float(np.mean(logp)), "alpha": self.alpha}

    def state_dict(self, include_buffer=False) -> dict:
        doc = {
            "hyperparams": asdict(self.hp),
            "policy": self.policy.to_dict(),
            "critics": [c.params.tolist() for c in self.critics],
            "targets": [t.params.tolist() for t in self.targets],
            "critic_opts": [o.state_dict() for o in self.critic_opts],
            "policy_opt": self.policy_opt.state_dict(),
            "alpha": None if self.alpha_state is None else {
                "log_alpha": self.alpha_state.log_alpha,
                "target_entropy": self.alpha_state.target_entropy,
                "opt": self.alpha_state.opt.state_dict()},
            "rng": self.rng.bit_generator.state,
            "n_updates": self.n_updates,
        }
        if include_buffer:
            doc["buffer"] = self.buffer.state_dict()
        return doc

    def load_state_dict(self, doc) -> None:
        self.policy.params = np.asarray(doc["policy"]["params"], dtype=np.float64)
        for net, p in zip(self.critics, doc["critics"]):
            net.params = p
        for net, p in zip(self.targets, doc["targets"]):
            net.params = p
        self.critic_opts = [Adam.from_state_dict(o) for o in doc["critic_opts"]]
        self.policy_opt = Adam.from_state_dict(doc["policy_opt"])
        if doc["alpha"] is not None:
            a = doc["alpha"]
            self.alpha_state = AlphaState(a["log_alpha"], a["target_entropy"], Adam.from_state_dict(a["opt"]))
        self.rng.bit_generator.state = doc["rng"]
        self.n_updates = doc["n_updates"]
        if "buffer" in doc:
            self.buffer.load_state_dict(doc["buffer"])


@dataclass
class StepInfo:
    step: int
    reward: float
    terminated: bool
    truncated: bool
    updated: bool
    episode_end: bool
    episode_return: float
    episode_steps: int
    update: dict = field(default_factory=dict)


class SACTrainer:
    """Owns one environment and one agent; advances both one step at a time."""

    def __init__(self, agent: SACAgent, env, seed: int):
        self.agent = agent
        self.env = env
        self.total_steps = 0
        self.episode = 0
        self._env_seeds = np.random.default_rng([int(seed), 0xE7])
        self._obs = None
        self._ep_return = 0.0
        self._ep_steps = 0

    def _reset(self):
        self._obs = np.asarray(self.env.reset(seed=int(self._env_seeds.integers(2 ** 31))), dtype=np.float64)
        self._ep_return = 0.0
        self._ep_steps = 0

    def train_step(self) -> StepInfo:
        agent, hp = self.agent, self.agent.hp
        if self._obs is None:
            self._reset()
        if self.total_steps < hp.start_steps:
            spec = agent.env_spec
            action = agent.rng.uniform(np.asarray(spec.action_low), np.asarray(spec.action_high))
        else:
            action = agent.act(self._obs)
        try:
            result = self.env.step(action)
        except Exception as exc:
            raise EnvironmentStepError(
                f"environment step {self.total_steps} (episode {self.episode}) failed: {exc}") from exc
        next_obs = np.asarray(result.obs, dtype=np.float64)
        agent.buffer.push(Transition(self._obs, action, result.reward, next_obs, result.terminated))
        self.total_steps += 1
        self._ep_return += result.reward
        self._ep_steps += 1
        info = StepInfo(self.total_steps, result.reward, result.terminated, result.truncated,
                        False, False, self._ep_return, self._ep_steps)
        self._obs = next_obs
        if (self.total_steps >= hp.start_steps and len(agent.buffer) >= hp.batch_size
                and self.total_steps % hp.update_every == 0):
            info.update = agent.update(agent.buffer.sample(hp.batch_size, agent.rng))
            info.updated = True
        if result.terminated or result.truncated:
            info.episode_end = True
            self.episode += 1
            self._obs = None
        return info


def train_step(trainer: SACTrainer) -> StepInfo:
    return trainer.train_step()


def evaluate(agent: SACAgent, env, episodes: int, seed: int, max_steps: int = 10_000) -> list[float]:
    """Deterministic-policy returns (action = tanh(mu)) over fresh seeded episodes."""
    seeds = np.random.default_rng([int(seed), 0xE1A1]).integers(2 ** 31, size=episodes)
    limit = env.spec.max_episode_steps or max_steps
    returns = []
    for s in seeds:
        obs = env.reset(seed=int(s))
        total = 0.0
        for _ in range(limit):
            r = env.step(agent.act(obs, deterministic=True))
            total += r.reward
            obs = r.obs
            if r.terminated or r.truncated:
                break
        returns.append(total)
    return returns
