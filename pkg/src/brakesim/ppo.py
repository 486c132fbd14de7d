"""On-policy trainer: clipped-ratio policy gradient over a Gaussian brake policy.

The policy is a mean network plus one state-independent learnable log
standard deviation; actions are sampled in raw space and clamped to [0, 1]
on the way into the environment.  Rollouts fill a fixed-size buffer from
episodes over randomly drawn trials; advantages come from temporal-
difference residuals blended exponentially (lambda-weighted) with value
bootstrap at truncation; updates maximize the clipped surrogate plus an
entropy bonus minus a value-regression penalty, all through the dense-
network substrate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .env import BrakingEnv, EpisodeEvent
from .nn import (
    AdamState,
    Network,
    adam_step,
    adam_update_array,
    backward,
    forward,
    init_adam,
    init_network,
)
from .trials import Trial

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
# Numerical guard on exponent of the probability ratio inside updates.
_MAX_LOG_RATIO = 30.0

OBS_DIM = 7


@dataclass(frozen=True, eq=False)
class GaussianPolicy:
    """Mean network plus a single learnable log standard deviation."""

    mean_net: Network
    log_std: float

    def __post_init__(self) -> None:
        if not (LOG_STD_MIN <= self.log_std <= LOG_STD_MAX):
            raise ValueError(f"log_std must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]")


@dataclass(frozen=True)
class PpoConfig:
    """Trainer hyperparameters; defaults are the stock configuration."""

    batch_size: int = 64
    buffer_size: int = 10240
    time_horizon: int = 1024
    learning_rate: float = 1e-3
    gamma: float = 0.99
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    epochs_per_update: int = 3
    entropy_coeff: float = 1e-3
    value_coeff: float = 0.5
    init_log_std: float = -0.5
    hidden_sizes: tuple[int, ...] = (256, 256, 256)

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if not (0.0 < self.clip_epsilon < 1.0):
            raise ValueError("clip_epsilon must be in (0, 1)")
        if self.batch_size < 1 or self.batch_size > self.buffer_size:
            raise ValueError("need 1 <= batch_size <= buffer_size")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.time_horizon < 1 or self.epochs_per_update < 1:
            raise ValueError("time_horizon and epochs_per_update must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.entropy_coeff < 0.0 or self.value_coeff < 0.0:
            raise ValueError("entropy_coeff and value_coeff must be nonnegative")
        if not (LOG_STD_MIN <= self.init_log_std <= LOG_STD_MAX):
            raise ValueError("init_log_std out of the log_std clamp range")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be positive")


class RolloutBuffer:
    """Fixed-capacity parallel arrays for one on-policy collection phase."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float64)
        self.raw_actions = np.zeros(capacity, dtype=np.float64)
        self.log_probs = np.zeros(capacity, dtype=np.float64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=bool)
        self.values = np.zeros(capacity, dtype=np.float64)
        self.advantages = np.zeros(capacity, dtype=np.float64)
        self.returns = np.zeros(capacity, dtype=np.float64)
        self.size = 0

    @property
    def full(self) -> bool:
        return self.size >= self.capacity

    def add(
        self, obs_vec: np.ndarray, raw_action: float, log_prob: float, reward: float, done: bool
    ) -> None:
        if self.full:
            raise ValueError("rollout buffer is full")
        i = self.size
        self.obs[i] = obs_vec
        self.raw_actions[i] = raw_action
        self.log_probs[i] = log_prob
        self.rewards[i] = reward
        self.dones[i] = done
        self.size = i + 1

    def write_segment(
        self, start: int, values: np.ndarray, advantages: np.ndarray, returns: np.ndarray
    ) -> None:
        end = start + len(values)
        if not (0 <= start <= end <= self.size):
            raise ValueError("segment out of range")
        self.values[start:end] = values
        self.advantages[start:end] = advantages
        self.returns[start:end] = returns

    def clear(self) -> None:
        self.size = 0


def action_log_prob(
    policy: GaussianPolicy, obs: np.ndarray, raw_actions: np.ndarray
) -> np.ndarray:
    """Normal log-density of raw (pre-clamp) actions under the policy."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    means, _ = forward(policy.mean_net, obs)
    sigma = math.exp(policy.log_std)
    z = (np.asarray(raw_actions, dtype=np.float64) - means[:, 0]) / sigma
    return -0.5 * z * z - policy.log_std - _HALF_LOG_2PI


def sample_action(
    policy: GaussianPolicy, obs, rng: np.random.Generator
) -> tuple[float, float, float]:
    """Draw one action; returns (env_action in [0,1], raw_action, log_prob).

    The log-probability is the Normal density at the raw draw, before the
    clamp; the clamp only shapes what the environment sees.
    """
    vec = np.asarray(getattr(obs, "vector", obs), dtype=np.float64)
    mean_out, _ = forward(policy.mean_net, vec[None, :])
    mean = float(mean_out[0, 0])
    sigma = math.exp(policy.log_std)
    raw = mean + sigma * float(rng.standard_normal())
    z = (raw - mean) / sigma
    log_prob = -0.5 * z * z - policy.log_std - _HALF_LOG_2PI
    env_action = min(max(raw, 0.0), 1.0)
    return env_action, raw, log_prob


def probability_ratio(log_prob_new: float, log_prob_old: float) -> float:
    """exp(new - old), the per-sample policy likelihood ratio."""
    return math.exp(log_prob_new - log_prob_old)


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap_value: float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Lambda-blended advantage estimates and value targets, unnormalized.

    delta_t = r_t + gamma * v_{t+1} * (1 - done_t) - v_t, with
    ``bootstrap_value`` standing in for the value past the end of the
    array; advantages accumulate deltas backward, cut at done flags;
    returns are advantages plus values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError("rewards, values, dones must have equal lengths")
    n = len(rewards)
    advantages = np.zeros(n, dtype=np.float64)
    gae = 0.0
    next_value = float(bootstrap_value)
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        gae = delta + gamma * lam * live * gae
        advantages[t] = gae
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    """Shift/scale to zero mean, unit variance (stabilizes the surrogate)."""
    adv = np.asarray(advantages, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clipped_objective(
    ratios: np.ndarray, advantages: np.ndarray, clip_epsilon: float
) -> np.ndarray:
    """Per-sample min(ratio * adv, clip(ratio) * adv); a pessimistic bound."""
    ratios = np.asarray(ratios, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    clipped = np.clip(ratios, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return np.minimum(ratios * advantages, clipped * advantages)


@dataclass(frozen=True, eq=False)
class PpoOptState:
    """Optimizer state for the three parameter groups."""

    policy_state: AdamState
    value_state: AdamState
    std_m: np.ndarray
    std_v: np.ndarray
    std_t: int = 0


@dataclass(frozen=True)
class RolloutStats:
    """What one collection phase produced."""

    steps: int
    episode_rewards: tuple[float, ...]
    episode_lengths: tuple[int, ...]
    episode_events: tuple[EpisodeEvent, ...]
    truncated_episodes: int


def collect_rollout(
    env: BrakingEnv,
    trials: Sequence[Trial],
    policy: GaussianPolicy,
    value_net: Network,
    buffer: RolloutBuffer,
    config: PpoConfig,
    rng: np.random.Generator,
) -> RolloutStats:
    """Fill the buffer with on-policy experience.

    Trials are drawn uniformly at random per episode.  An episode segment
    ends at a terminal event (bootstrap 0), at ``time_horizon`` steps, or
    when the buffer fills; non-terminal cuts bootstrap with the value of
    the next observation.  Values for each segment are computed in one
    batched forward pass since the value net is frozen during collection.
    """
    if not trials:
        raise ValueError("training trial set is empty")
    ep_rewards: list[float] = []
    ep_lengths: list[int] = []
    ep_events: list[EpisodeEvent] = []
    truncated = 0
    while not buffer.full:
        trial = trials[int(rng.integers(len(trials)))]
        obs = env.reset(trial)
        seg_start = buffer.size
        ep_reward = 0.0
        ep_len = 0
        terminal: Optional[EpisodeEvent] = None
        while True:
            env_action, raw, lp = sample_action(policy, obs, rng)
            res = env.step(env_action)
            buffer.add(obs.vector, raw, lp, res.reward, res.event.is_terminal)
            ep_reward += res.reward
            ep_len += 1
            obs = res.observation
            if res.event.is_terminal:
                terminal = res.event
                break
            if ep_len >= config.time_horizon or buffer.full:
                break
        seg_obs = buffer.obs[seg_start : buffer.size]
        values = forward(value_net, seg_obs)[0][:, 0]
        if terminal is not None:
            bootstrap = 0.0
        else:
            bootstrap = float(forward(value_net, obs.vector[None, :])[0][0, 0])
        adv, ret = compute_gae(
            buffer.rewards[seg_start : buffer.size],
            values,
            buffer.dones[seg_start : buffer.size],
            bootstrap,
            config.gamma,
            config.gae_lambda,
        )
        buffer.write_segment(seg_start, values, adv, ret)
        if terminal is not None:
            ep_rewards.append(ep_reward)
            ep_lengths.append(ep_len)
            ep_events.append(terminal)
        else:
            truncated += 1
    return RolloutStats(
        steps=buffer.size,
        episode_rewards=tuple(ep_rewards),
        episode_lengths=tuple(ep_lengths),
        episode_events=tuple(ep_events),
        truncated_episodes=truncated,
    )


def ppo_update(
    policy: GaussianPolicy,
    value_net: Network,
    opt: PpoOptState,
    buffer: RolloutBuffer,
    config: PpoConfig,
    rng: np.random.Generator,
) -> tuple[GaussianPolicy, Network, PpoOptState, dict]:
    """Run the clipped-surrogate update over the buffer; clears it after.

    Per minibatch the policy ascends min(r*A, clip(r)*A) plus an entropy
    bonus on log_std, and the value net descends the squared error to the
    lambda returns.  Gradients flow only through unclipped samples, the
    textbook subgradient of the min.  Returns the new policy, value net,
    optimizer state, and aggregate statistics.
    """
    n = buffer.size
    if n == 0:
        raise ValueError("cannot update from an empty buffer")
    obs = buffer.obs[:n]
    raw = buffer.raw_actions[:n]
    lp_old = buffer.log_probs[:n]
    returns = buffer.returns[:n]
    adv = normalize_advantages(buffer.advantages[:n])
    eps = config.clip_epsilon

    policy_state = opt.policy_state
    value_state = opt.value_state
    std_m, std_v, std_t = opt.std_m, opt.std_v, opt.std_t
    mean_net = policy.mean_net
    log_std = policy.log_std

    sums = {"mean_ratio": 0.0, "clip_fraction": 0.0, "value_loss": 0.0, "policy_loss": 0.0}
    batches = 0
    for _ in range(config.epochs_per_update):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            b = len(idx)
            obs_b, raw_b, adv_b = obs[idx], raw[idx], adv[idx]

            mean_out, cache = forward(mean_net, obs_b)
            sigma = math.exp(log_std)
            z = (raw_b - mean_out[:, 0]) / sigma
            lp_new = -0.5 * z * z - log_std - _HALF_LOG_2PI
            log_ratio = np.clip(lp_new - lp_old[idx], -_MAX_LOG_RATIO, _MAX_LOG_RATIO)
            ratio = np.exp(log_ratio)
            objective = clipped_objective(ratio, adv_b, eps)
            unclipped = ~(
                ((adv_b > 0.0) & (ratio > 1.0 + eps))
                | ((adv_b < 0.0) & (ratio < 1.0 - eps))
            )
            # d(objective)/d(log prob) per sample, averaged over the batch.
            dobj_dlp = unclipped * ratio * adv_b / b
            mean_grad = (-(dobj_dlp * z / sigma))[:, None]
            grads = backward(mean_net, cache, mean_grad)
            mean_net, policy_state = adam_step(
                mean_net, grads, policy_state, config.learning_rate
            )

            dstd = float(np.sum(dobj_dlp * (z * z - 1.0))) + config.entropy_coeff
            std_t += 1
            new_std, std_m, std_v = adam_update_array(
                np.array([log_std]),
                np.array([-dstd]),
                std_m,
                std_v,
                std_t,
                config.learning_rate,
            )
            log_std = float(np.clip(new_std[0], LOG_STD_MIN, LOG_STD_MAX))

            v_out, v_cache = forward(value_net, obs_b)
            v_err = v_out[:, 0] - returns[idx]
            v_grad = (config.value_coeff * 2.0 * v_err / b)[:, None]
            value_net, value_state = adam_step(
                value_net, backward(value_net, v_cache, v_grad), value_state, config.learning_rate
            )

            sums["mean_ratio"] += float(ratio.mean())
            sums["clip_fraction"] += float(np.mean(np.abs(ratio - 1.0) > eps))
            sums["value_loss"] += float(np.mean(v_err * v_err))
            sums["policy_loss"] += float(-objective.mean())
            batches += 1

    buffer.clear()
    stats = {k: v / batches for k, v in sums.items()}
    stats["entropy"] = log_std + 0.5 * (1.0 + math.log(2.0 * math.pi))
    new_policy = GaussianPolicy(mean_net=mean_net, log_std=log_std)
    new_opt = PpoOptState(
        policy_state=policy_state,
        value_state=value_state,
        std_m=std_m,
        std_v=std_v,
        std_t=std_t,
    )
    return new_policy, value_net, new_opt, stats


class PpoTrainer:
    """Owns the policy, value net, optimizer state, and training loop."""

    def __init__(
        self,
        trials: Sequence[Trial],
        config: Optional[PpoConfig] = None,
        env_config=None,
        seed: int = 0,
    ):
        if not trials:
            raise ValueError("training trial set is empty")
        self.trials = list(trials)
        self.config = config if config is not None else PpoConfig()
        self.env = BrakingEnv(env_config)
        init_rng, self.rollout_rng, self.update_rng = [
            np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
        ]
        sizes = [OBS_DIM, *self.config.hidden_sizes, 1]
        self.policy = GaussianPolicy(
            mean_net=init_network(sizes, activation="tanh", rng=init_rng),
            log_std=self.config.init_log_std,
        )
        self.value_net = init_network(sizes, activation="tanh", rng=init_rng)
        self.opt = PpoOptState(
            policy_state=init_adam(self.policy.mean_net),
            value_state=init_adam(self.value_net),
            std_m=np.zeros(1),
            std_v=np.zeros(1),
        )
        self.buffer = RolloutBuffer(self.config.buffer_size)
        self.episode_rewards: list[float] = []
        self.episode_lengths: list[int] = []
        self.episode_events: list[EpisodeEvent] = []
        self.updates_done = 0

    def run_update(self) -> dict:
        """One collect-then-update cycle; returns a training-log row."""
        roll = collect_rollout(
            self.env,
            self.trials,
            self.policy,
            self.value_net,
            self.buffer,
            self.config,
            self.rollout_rng,
        )
        self.episode_rewards.extend(roll.episode_rewards)
        self.episode_lengths.extend(roll.episode_lengths)
        self.episode_events.extend(roll.episode_events)
        self.policy, self.value_net, self.opt, stats = ppo_update(
            self.policy, self.value_net, self.opt, self.buffer, self.config, self.update_rng
        )
        self.updates_done += 1
        mean_ep = (
            float(np.mean(roll.episode_rewards)) if roll.episode_rewards else float("nan")
        )
        return {
            "update": self.updates_done,
            "episodes": len(self.episode_rewards),
            "mean_episode_reward": mean_ep,
            "mean_ratio": stats["mean_ratio"],
            "clip_fraction": stats["clip_fraction"],
            "value_loss": stats["value_loss"],
            "policy_loss": stats["policy_loss"],
        }

    def train(self, episodes: int) -> list[dict]:
        """Run updates until at least ``episodes`` episodes completed."""
        rows = []
        while len(self.episode_rewards) < episodes:
            rows.append(self.run_update())
        return rows
