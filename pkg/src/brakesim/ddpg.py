"""Off-policy trainer: deterministic actor-critic with replay and targets.

The actor maps an observation to one brake action squashed into [0, 1] by
(tanh + 1) / 2; the critic scores (observation, action) pairs with the
action concatenated at the input.  Slowly tracking target copies of both
networks supply the bootstrap targets, transitions live in a uniform-
sampling ring buffer, and exploration adds temporally correlated
mean-reverting noise to the actor's output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .env import BrakingEnv, EpisodeEvent
from .nn import (
    AdamState,
    Layer,
    Network,
    adam_step,
    backward,
    forward,
    init_adam,
    init_network,
)
from .trials import Trial

OBS_DIM = 7


@dataclass(frozen=True)
class DdpgConfig:
    """Trainer hyperparameters; defaults are the stock configuration."""

    minibatch_size: int = 128
    buffer_capacity: int = 10240
    gamma: float = 0.99
    tau: float = 1e-3
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    warmup_steps: int = 1000
    updates_per_env_step: int = 1
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_dt: float = 0.1
    hidden_sizes: tuple[int, ...] = (256, 128)

    def __post_init__(self) -> None:
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if self.minibatch_size < 1 or self.buffer_capacity < self.minibatch_size:
            raise ValueError("need 1 <= minibatch_size <= buffer_capacity")
        if self.actor_lr <= 0.0 or self.critic_lr <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.warmup_steps < 0 or self.updates_per_env_step < 0:
            raise ValueError("warmup_steps and updates_per_env_step must be >= 0")
        if self.ou_theta <= 0.0 or self.ou_sigma < 0.0 or self.ou_dt <= 0.0:
            raise ValueError("bad noise parameters")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be positive")


@dataclass(frozen=True, eq=False)
class ActorCritic:
    """Live actor/critic plus their slowly tracking target copies."""

    actor: Network
    critic: Network
    target_actor: Network
    target_critic: Network

    def __post_init__(self) -> None:
        for live, tgt in ((self.actor, self.target_actor), (self.critic, self.target_critic)):
            if live.layer_sizes() != tgt.layer_sizes():
                raise ValueError("target network shape differs from live network")
        if self.critic.input_size != self.actor.input_size + self.actor.output_size:
            raise ValueError("critic input must be observation plus action")


class ReplayBuffer:
    """Ring of (s, a, r, s', done) transitions; oldest overwritten first."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim), dtype=np.float64)
        self.a = np.zeros(capacity, dtype=np.float64)
        self.r = np.zeros(capacity, dtype=np.float64)
        self.s2 = np.zeros((capacity, obs_dim), dtype=np.float64)
        self.done = np.zeros(capacity, dtype=np.float64)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True, eq=False)
class TransitionBatch:
    """Column arrays for one sampled minibatch."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray


class OUNoise:
    """Mean-reverting exploration noise, reset to zero each episode.

    x <- x + theta * (0 - x) * dt + sigma * sqrt(dt) * N(0, 1); the
    long-run standard deviation is about sigma / sqrt(2 * theta).
    """

    def __init__(
        self, theta: float = 0.15, sigma: float = 0.2, dt: float = 0.1,
        rng: Optional[np.random.Generator] = None,
    ):
        if theta <= 0.0 or sigma < 0.0 or dt <= 0.0:
            raise ValueError("bad noise parameters")
        self.theta = theta
        self.sigma = sigma
        self.dt = dt
        self.rng = rng if rng is not None else np.random.default_rng()
        self.x = 0.0

    def reset(self) -> None:
        self.x = 0.0

    def sample(self) -> float:
        self.x = (
            self.x
            + self.theta * (0.0 - self.x) * self.dt
            + self.sigma * math.sqrt(self.dt) * float(self.rng.standard_normal())
        )
        return self.x


def squash_action(raw: np.ndarray) -> np.ndarray:
    """Map unbounded actor output into [0, 1]."""
    return 0.5 * (np.tanh(raw) + 1.0)


def actor_action(nets: ActorCritic, obs) -> float:
    """Deterministic policy output for one observation (evaluation path)."""
    vec = np.asarray(getattr(obs, "vector", obs), dtype=np.float64)
    raw, _ = forward(nets.actor, vec[None, :])
    return float(squash_action(raw[0, 0]))


def act_with_noise(nets: ActorCritic, obs, noise: OUNoise) -> float:
    """Actor output plus one noise draw, clamped to [0, 1]."""
    a = actor_action(nets, obs) + noise.sample()
    return min(max(a, 0.0), 1.0)


def soft_update(target: Network, source: Network, tau: float) -> Network:
    """Blend every target parameter toward the source: tau*src + (1-tau)*tgt."""
    if target.layer_sizes() != source.layer_sizes():
        raise ValueError("soft_update shape mismatch")
    layers = []
    for tgt, src in zip(target.layers, source.layers):
        layers.append(
            Layer(
                w=tau * src.w + (1.0 - tau) * tgt.w,
                b=tau * src.b + (1.0 - tau) * tgt.b,
                activation=tgt.activation,
            )
        )
    return Network(layers=tuple(layers))


def store_transition(
    buffer: ReplayBuffer, s: np.ndarray, a: float, r: float, s2: np.ndarray, done: bool
) -> None:
    """Append one transition, overwriting the oldest once at capacity."""
    s = np.asarray(s, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if not (
        np.all(np.isfinite(s))
        and np.all(np.isfinite(s2))
        and math.isfinite(a)
        and math.isfinite(r)
    ):
        raise ValueError("non-finite transition")
    i = buffer._next
    buffer.s[i] = s
    buffer.a[i] = a
    buffer.r[i] = r
    buffer.s2[i] = s2
    buffer.done[i] = 1.0 if done else 0.0
    buffer._next = (i + 1) % buffer.capacity
    buffer.size = min(buffer.size + 1, buffer.capacity)


def sample_minibatch(
    buffer: ReplayBuffer, n: int, rng: np.random.Generator
) -> TransitionBatch:
    """Uniform-with-replacement draw of n stored transitions."""
    if buffer.size < n:
        raise ValueError(f"buffer holds {buffer.size} < {n} transitions")
    idx = rng.integers(0, buffer.size, size=n)
    return TransitionBatch(
        s=buffer.s[idx],
        a=buffer.a[idx],
        r=buffer.r[idx],
        s2=buffer.s2[idx],
        done=buffer.done[idx],
    )


def critic_targets(nets: ActorCritic, batch: TransitionBatch, gamma: float) -> np.ndarray:
    """Bootstrap targets y = r + gamma*(1-done)*Q'(s', mu'(s')).

    Deliberately touches only the target networks; the live networks never
    appear in the target path.
    """
    raw2, _ = forward(nets.target_actor, batch.s2)
    a2 = squash_action(raw2[:, 0])
    x2 = np.concatenate([batch.s2, a2[:, None]], axis=1)
    q2, _ = forward(nets.target_critic, x2)
    return batch.r + gamma * (1.0 - batch.done) * q2[:, 0]


@dataclass(frozen=True, eq=False)
class DdpgOptState:
    """Optimizer state for actor and critic."""

    actor_state: AdamState
    critic_state: AdamState


def ddpg_update(
    nets: ActorCritic, batch: TransitionBatch, opt: DdpgOptState, config: DdpgConfig
) -> tuple[ActorCritic, DdpgOptState, dict]:
    """One gradient step each for critic and actor, then soft target updates.

    The critic regresses onto target-network bootstrap values; the actor
    ascends the critic's score of its own actions, with the gradient routed
    through the critic's input-gradient action column and the squash
    derivative.  Returns (new nets, new optimizer state, statistics).
    """
    b = len(batch.a)
    if b == 0:
        raise ValueError("empty batch")
    y = critic_targets(nets, batch, config.gamma)

    x = np.concatenate([batch.s, batch.a[:, None]], axis=1)
    q, cache_q = forward(nets.critic, x)
    err = q[:, 0] - y
    critic_loss = float(np.mean(err * err))
    if not math.isfinite(critic_loss):
        raise ValueError("non-finite critic loss; aborting training")
    grad_q = (2.0 * err / b)[:, None]
    critic, critic_state = adam_step(
        nets.critic, backward(nets.critic, cache_q, grad_q), opt.critic_state, config.critic_lr
    )

    raw_pi, cache_pi = forward(nets.actor, batch.s)
    a_pi = squash_action(raw_pi[:, 0])
    x_pi = np.concatenate([batch.s, a_pi[:, None]], axis=1)
    q_pi, cache_qpi = forward(critic, x_pi)
    actor_objective = float(np.mean(q_pi[:, 0]))
    if not math.isfinite(actor_objective):
        raise ValueError("non-finite actor objective; aborting training")
    dq_dx = backward(critic, cache_qpi, np.full((b, 1), 1.0 / b)).x
    dq_da = dq_dx[:, OBS_DIM]
    tanh_raw = 2.0 * a_pi - 1.0
    dsquash = 0.5 * (1.0 - tanh_raw * tanh_raw)
    grad_raw = (-(dq_da * dsquash))[:, None]
    actor, actor_state = adam_step(
        nets.actor, backward(nets.actor, cache_pi, grad_raw), opt.actor_state, config.actor_lr
    )

    new_nets = ActorCritic(
        actor=actor,
        critic=critic,
        target_actor=soft_update(nets.target_actor, actor, config.tau),
        target_critic=soft_update(nets.target_critic, critic, config.tau),
    )
    stats = {
        "critic_loss": critic_loss,
        "actor_objective": actor_objective,
        "q_mean": float(np.mean(q[:, 0])),
    }
    return new_nets, DdpgOptState(actor_state=actor_state, critic_state=critic_state), stats


class DdpgTrainer:
    """Owns the networks, replay buffer, noise process, and training loop."""

    def __init__(
        self,
        trials: Sequence[Trial],
        config: Optional[DdpgConfig] = None,
        env_config=None,
        seed: int = 0,
    ):
        if not trials:
            raise ValueError("training trial set is empty")
        self.trials = list(trials)
        self.config = config if config is not None else DdpgConfig()
        self.env = BrakingEnv(env_config)
        init_rng, self.explore_rng, self.sample_rng = [
            np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
        ]
        cfg = self.config
        actor = init_network([OBS_DIM, *cfg.hidden_sizes, 1], activation="tanh", rng=init_rng)
        critic = init_network(
            [OBS_DIM + 1, *cfg.hidden_sizes, 1], activation="tanh", rng=init_rng
        )
        # Targets start as exact copies (parameters are immutable, so
        # sharing the arrays is safe).
        self.nets = ActorCritic(
            actor=actor, critic=critic, target_actor=actor, target_critic=critic
        )
        self.opt = DdpgOptState(actor_state=init_adam(actor), critic_state=init_adam(critic))
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.noise = OUNoise(
            theta=cfg.ou_theta, sigma=cfg.ou_sigma, dt=cfg.ou_dt, rng=self.explore_rng
        )
        self.total_steps = 0
        self.episode_rewards: list[float] = []
        self.episode_lengths: list[int] = []
        self.episode_events: list[EpisodeEvent] = []

    def run_episode(self) -> dict:
        """One full episode of interaction and (post-warmup) learning."""
        cfg = self.config
        trial = self.trials[int(self.explore_rng.integers(len(self.trials)))]
        obs = self.env.reset(trial)
        self.noise.reset()
        ep_reward = 0.0
        ep_len = 0
        critic_losses: list[float] = []
        actor_objs: list[float] = []
        while True:
            if self.total_steps < cfg.warmup_steps:
                action = float(self.explore_rng.uniform(0.0, 1.0))
            else:
                action = act_with_noise(self.nets, obs, self.noise)
            res = self.env.step(action)
            store_transition(
                self.buffer,
                obs.vector,
                action,
                res.reward,
                res.observation.vector,
                res.event.is_terminal,
            )
            obs = res.observation
            self.total_steps += 1
            ep_reward += res.reward
            ep_len += 1
            if self.total_steps >= cfg.warmup_steps and self.buffer.size >= cfg.minibatch_size:
                for _ in range(cfg.updates_per_env_step):
                    batch = sample_minibatch(self.buffer, cfg.minibatch_size, self.sample_rng)
                    self.nets, self.opt, stats = ddpg_update(self.nets, batch, self.opt, cfg)
                    critic_losses.append(stats["critic_loss"])
                    actor_objs.append(stats["actor_objective"])
            if res.event.is_terminal:
                self.episode_rewards.append(ep_reward)
                self.episode_lengths.append(ep_len)
                self.episode_events.append(res.event)
                break
        return {
            "update": len(self.episode_rewards),
            "episodes": len(self.episode_rewards),
            "mean_episode_reward": ep_reward,
            "mean_ratio": float("nan"),
            "clip_fraction": float("nan"),
            "value_loss": float(np.mean(critic_losses)) if critic_losses else float("nan"),
            "policy_loss": -float(np.mean(actor_objs)) if actor_objs else float("nan"),
        }

    def train(self, episodes: Optional[int] = None, steps: Optional[int] = None) -> list[dict]:
        """Run whole episodes until an episode or env-step budget is met."""
        if (episodes is None) == (steps is None):
            raise ValueError("give exactly one of episodes or steps")
        rows = []
        start_eps = len(self.episode_rewards)
        while True:
            if episodes is not None and len(self.episode_rewards) - start_eps >= episodes:
                break
            if steps is not None and self.total_steps >= steps:
                break
            rows.append(self.run_episode())
        return rows
