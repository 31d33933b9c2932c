"""Clipped-surrogate PPO on a shared-encoder actor-critic."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .neural import (
    DenseNet,
    OptimizerState,
    clip_grad_norm,
    LOG_2PI,
    gaussian_logprob_and_entropy,
    load_arrays,
    net_arrays,
    net_from_arrays,
    optimizer_step,
    save_arrays,
)

log = logging.getLogger(__name__)

LR_SCHEDULES = ("adaptive", "const_1e-2", "const_1e-4", "decay_0.95")


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    epochs: int = 10
    minibatch_size: int = 64
    rollout_length: int = 2048
    n_envs: int = 8
    total_steps: int = 200_000
    lr_schedule: str = "adaptive"
    base_lr: float = 1e-4
    max_grad_norm: float = 0.5
    init_log_std: float = math.log(0.5)
    hidden: tuple[int, ...] = (64, 64)
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.gae_lambda <= 1.0):
            raise ValueError("gamma and lambda must lie in (0, 1]")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.rollout_length < 1 or self.minibatch_size < 1 or self.epochs < 0 or self.n_envs < 1:
            raise ValueError("rollout_length, minibatch_size and n_envs must be positive; epochs non-negative")


class ActorCritic:
    """Encoder ``F`` (tanh MLP) with a linear Gaussian policy head and a linear value head.

    The policy mean is exactly ``W' F(s) + b'``, which the prototype network
    relies on when it reuses ``F``.
    """

    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64), rng=None, init_log_std=math.log(0.5)):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.encoder = DenseNet((obs_dim, *hidden), rng, out_activation="tanh")
        self.pi_head = DenseNet((hidden[-1], act_dim), rng, out_gain=0.01)
        self.v_head = DenseNet((hidden[-1], 1), rng)
        self.log_std = np.full(act_dim, float(init_log_std))

    @property
    def latent_dim(self) -> int:
        return self.encoder.sizes[-1]

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.encoder.params, *self.pi_head.params, self.log_std, *self.v_head.params]

    def clone(self) -> "ActorCritic":
        other = ActorCritic.__new__(ActorCritic)
        other.obs_dim, other.act_dim = self.obs_dim, self.act_dim
        other.encoder = self.encoder.clone()
        other.pi_head = self.pi_head.clone()
        other.v_head = self.v_head.clone()
        other.log_std = self.log_std.copy()
        return other

    def encode(self, obs):
        return self.encoder(obs)

    def mean(self, obs):
        return self.pi_head(self.encoder(obs))

    def value(self, obs):
        return self.v_head(self.encoder(obs))[..., 0]

    def act(self, obs, rng):
        z = self.encoder(obs)
        mean = self.pi_head(z)
        action = mean + np.exp(self.log_std) * rng.standard_normal(mean.shape)
        logp, _ = gaussian_logprob_and_entropy(self.log_std, mean, action)
        return action, float(logp), float(self.v_head(z)[0])

    def to_arrays(self) -> dict:
        arrays = {}
        arrays.update(net_arrays("encoder", self.encoder))
        arrays.update(net_arrays("pi_head", self.pi_head))
        arrays.update(net_arrays("v_head", self.v_head))
        arrays["log_std"] = self.log_std
        return arrays

    @classmethod
    def from_arrays(cls, arrays: dict) -> "ActorCritic":
        n_enc = sum(1 for k in arrays if k.startswith("encoder."))
        enc_w = [arrays[f"encoder.{i}"] for i in range(0, n_enc, 2)]
        sizes = (enc_w[0].shape[0], *(w.shape[1] for w in enc_w))
        act_dim = arrays["log_std"].shape[0]
        net = cls.__new__(cls)
        net.obs_dim, net.act_dim = sizes[0], act_dim
        net.encoder = net_from_arrays("encoder", arrays, sizes, out_activation="tanh")
        net.pi_head = net_from_arrays("pi_head", arrays, (sizes[-1], act_dim))
        net.v_head = net_from_arrays("v_head", arrays, (sizes[-1], 1))
        net.log_std = arrays["log_std"].copy()
        return net

    def save(self, path, meta=None) -> None:
        save_arrays(path, self.to_arrays(), meta)

    @classmethod
    def load(cls, path) -> "ActorCritic":
        arrays, _ = load_arrays(path)
        return cls.from_arrays(arrays)


# -- advantage estimation and loss ------------------------------------------------


def gae_advantages(rewards, values, dones, gamma, lam, last_value=0.0):
    """Generalized advantage estimates and value targets.

    ``values[t]`` estimates ``V(s_t)``; ``dones[t]`` marks that ``s_{t+1}`` is
    terminal. ``last_value`` bootstraps a rollout cut mid-episode. Arrays may
    carry a trailing environment axis.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values and dones must have equal shape")
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    next_value = np.asarray(last_value, dtype=np.float64)
    for t in reversed(range(len(rewards))):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def clipped_surrogate(ratio, advantage, clip):
    ratio = np.asarray(ratio, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantage)


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray

    def __len__(self):
        return len(self.obs)

    def subset(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.logp_old[idx], self.advantages[idx], self.value_targets[idx])


def ppo_loss(batch: Batch, net: ActorCritic, config: PpoConfig):
    """Negated PPO objective and its gradient for every parameter of ``net``.

    Returns ``(loss, grads, info)`` with ``grads`` aligned to ``net.params``.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    z, enc_cache = net.encoder.forward(batch.obs)
    mean, pi_cache = net.pi_head.forward(z)
    v, v_cache = net.v_head.forward(z)
    v = v[:, 0]

    std = np.exp(net.log_std)
    diff = batch.actions - mean
    logp, entropy = gaussian_logprob_and_entropy(net.log_std, mean, batch.actions)
    ratio = np.exp(logp - batch.logp_old)
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip) * adv
    surrogate = np.minimum(unclipped, clipped)
    v_err = v - batch.value_targets

    loss = -surrogate.mean() + config.value_coef * np.mean(v_err**2) - config.entropy_coef * entropy
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite PPO loss")

    # d loss / d logp: only where the unclipped branch is the active minimum
    active = unclipped <= clipped
    g_logp = -(ratio * adv * active) / n
    g_mean = g_logp[:, None] * diff / std**2
    g_log_std = np.sum(g_logp[:, None] * ((diff / std) ** 2 - 1.0), axis=0) - config.entropy_coef
    g_v = (2.0 * config.value_coef / n) * v_err

    pi_grads, dz_pi = net.pi_head.backward(pi_cache, g_mean)
    v_grads, dz_v = net.v_head.backward(v_cache, g_v[:, None])
    enc_grads, _ = net.encoder.backward(enc_cache, dz_pi + dz_v)
    grads = [*enc_grads, *pi_grads, g_log_std, *v_grads]
    info = {
        "policy": float(-surrogate.mean()),
        "value": float(np.mean(v_err**2)),
        "entropy": entropy,
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > config.clip)),
    }
    return float(loss), grads, info


def lr_schedule(kind: str, step: int, total_steps: int, base: float = 1e-4, updates: int = 0) -> float:
    """Learning rate for the update starting at environment step ``step``."""
    if kind == "adaptive":
        if total_steps <= 0:
            return base
        if not 0 <= step <= total_steps:
            raise ValueError(f"step {step} outside [0, {total_steps}]")
        return base * (1.0 - step / total_steps)
    if kind == "const_1e-2":
        return 1e-2
    if kind == "const_1e-4":
        return 1e-4
    if kind == "decay_0.95":
        return base * 0.95**updates
    raise ValueError(f"unknown lr schedule {kind!r}")


# -- training ------------------------------------------------------------------------


@dataclass
class TrainingCurve:
    update: list = field(default_factory=list)
    mean_reward: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    env_digest: str = ""  # hash of every reset observation; policy-independent

    def rows(self):
        return list(zip(self.update, self.mean_reward, self.loss))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("update,mean_reward,loss\n")
            for u, r, l in self.rows():
                fh.write(f"{u},{r!r},{l!r}\n")


def collect_rollout(envs, net: ActorCritic, n_steps: int, rng_env, rng_act, obs, ep_returns, finished, resets=None):
    """Step every env ``n_steps`` times with the stochastic policy.

    Buffers are time-major ``(n_steps, n_envs, ...)``; episodes in progress
    carry over between calls through ``obs`` and ``ep_returns``.
    """
    n_envs = len(envs)
    obs_buf = np.zeros((n_steps, n_envs, net.obs_dim))
    act_buf = np.zeros((n_steps, n_envs, net.act_dim))
    rew = np.zeros((n_steps, n_envs))
    val = np.zeros((n_steps, n_envs))
    logp = np.zeros((n_steps, n_envs))
    done = np.zeros((n_steps, n_envs), dtype=bool)
    std = np.exp(net.log_std)
    for t in range(n_steps):
        z = net.encoder(obs)
        mean = net.pi_head(z)
        noise = rng_act.standard_normal(mean.shape)
        action = mean + std * noise
        obs_buf[t], act_buf[t] = obs, action
        logp[t] = -0.5 * np.sum(noise * noise, axis=1) - np.sum(net.log_std) - 0.5 * net.act_dim * LOG_2PI
        val[t] = net.v_head(z)[:, 0]
        obs = obs.copy()
        for i, env in enumerate(envs):
            o, r, d = env.step(action[i])
            rew[t, i], done[t, i] = r, d
            ep_returns[i] += r
            if d:
                finished.append(ep_returns[i])
                ep_returns[i] = 0.0
                o = env.reset(rng_env)
                if resets is not None:
                    resets.update(np.ascontiguousarray(o, dtype=np.float64).tobytes())
            obs[i] = o
    return (obs_buf, act_buf, rew, val, logp, done), obs


def train(env_factory, config: PpoConfig, seed: int = 0, net: ActorCritic | None = None):
    """Train an actor-critic; returns ``(net, TrainingCurve)``.

    Deterministic for a fixed seed: parameter init, environment sampling,
    exploration noise and minibatch shuffling draw from separate child streams.
    """
    init_ss, env_ss, act_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(4)
    envs = [env_factory() for _ in range(config.n_envs)]
    if net is None:
        net = ActorCritic(
            envs[0].obs_dim, envs[0].act_dim, config.hidden, np.random.default_rng(init_ss), config.init_log_std
        )
    curve = TrainingCurve()
    if config.total_steps <= 0:
        return net, curve

    rng_env = np.random.default_rng(env_ss)
    rng_act = np.random.default_rng(act_ss)
    rng_shuffle = np.random.default_rng(shuffle_ss)
    params = net.params
    opt = OptimizerState.for_params(params, lr=config.base_lr)

    obs = np.stack([env.reset(rng_env) for env in envs])
    resets = hashlib.sha256(obs.tobytes())
    ep_returns = [0.0] * len(envs)
    steps_per_env = max(config.rollout_length // len(envs), 1)
    steps = 0
    update = 0
    while steps < config.total_steps:
        opt.lr = lr_schedule(config.lr_schedule, steps, config.total_steps, config.base_lr, update)
        finished: list[float] = []
        (obs_b, act_b, rew_b, val_b, logp_b, done_b), obs = collect_rollout(
            envs, net, steps_per_env, rng_env, rng_act, obs, ep_returns, finished, resets
        )
        last_value = net.value(obs)
        adv, targets = gae_advantages(
            rew_b * config.reward_scale, val_b, done_b, config.gamma, config.gae_lambda, last_value
        )
        n = adv.size
        batch = Batch(
            obs_b.reshape(n, -1),
            act_b.reshape(n, -1),
            logp_b.reshape(n),
            normalize_advantages(adv.reshape(n)),
            targets.reshape(n),
        )

        epoch_losses = []
        for _ in range(config.epochs):
            order = rng_shuffle.permutation(n)
            epoch_losses = []
            for lo in range(0, n, config.minibatch_size):
                mb = batch.subset(order[lo : lo + config.minibatch_size])
                loss, grads, _ = ppo_loss(mb, net, config)
                clip_grad_norm(grads, config.max_grad_norm)
                optimizer_step(params, grads, opt)
                epoch_losses.append(loss)
        steps += n
        update += 1
        mean_reward = float(np.mean(finished)) if finished else float("nan")
        curve.update.append(update)
        curve.mean_reward.append(mean_reward)
        curve.loss.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        curve.lr.append(opt.lr)
        curve.env_digest = resets.hexdigest()
        log.debug("update %d steps %d reward %.3f lr %.2e", update, steps, mean_reward, opt.lr)
    return net, curve


def evaluate_policy(env, policy, episodes: int, rng) -> list[float]:
    """Undiscounted episode returns of a deterministic policy ``obs -> action``."""
    returns = []
    for _ in range(episodes):
        obs = env.reset(rng)
        total = 0.0
        done = False
        while not done:
            obs, r, done = env.step(policy(obs))
            total += r
        returns.append(total)
    return returns
