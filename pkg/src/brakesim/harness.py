"""Experiment orchestration: run configs, training, evaluation, comparison.

Ties the simulator, the two trainers, and the artifact formats together
behind four operations (generate trials, train, evaluate, compare) that
the command-line interface exposes one-to-one.  Every artifact a run
emits is a plain-text CSV, JSON, or key=value file, fully determined by
the run configuration and the global seed.
"""

from __future__ import annotations

import dataclasses
import json
import math
from configparser import ConfigParser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .ddpg import DdpgConfig, DdpgTrainer, squash_action
from .env import BrakingEnv, EnvConfig, EpisodeEvent, write_episode_csv
from .nn import BACKEND, forward, load_bundle, save_bundle
from .ppo import OBS_DIM, PpoConfig, PpoTrainer
from .trials import (
    SynthParams,
    Trial,
    derive_speeds,
    generate_synthetic_trial,
    load_trials,
    save_trial,
    split_trials,
)

ALGORITHMS = ("ppo", "ddpg")
COMFORT_MU = 0.01
DEFAULT_PPO_EPISODES = 3000
DEFAULT_DDPG_STEPS = 200000
CONVERGENCE_WINDOW = 100
CURVE_HEADER = "episode,reward,steps,event"
TRAINING_LOG_HEADER = (
    "update,episodes,mean_episode_reward,mean_ratio,clip_fraction,value_loss,policy_loss"
)
TERMINAL_EVENTS = ("accident", "pass", "cross", "stop", "timeout")


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs, resolved and validated.

    The comfort flag pins the jerk penalty weight: comfort on means
    mu = 0.01, comfort off means mu = 0.0, and an env section that says
    otherwise is rejected rather than silently overridden.
    """

    algorithm: str = "ppo"
    comfort_included: bool = True
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    trial_dir: Optional[str] = None
    synth_count: Optional[int] = None
    synth_seed: int = 0
    synth_params: SynthParams = field(default_factory=SynthParams)
    split_fraction: float = 0.8
    split_seed: int = 0
    episodes: Optional[int] = None
    steps: Optional[int] = None
    checkpoint_interval: int = 1000
    out_dir: str = "run"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if (self.trial_dir is None) == (self.synth_count is None):
            raise ValueError("exactly one trial source: trial_dir or synth_count")
        if self.synth_count is not None and self.synth_count < 0:
            raise ValueError("synth_count must be >= 0")
        expected_mu = COMFORT_MU if self.comfort_included else 0.0
        if self.env.mu != expected_mu:
            raise ValueError(
                f"env mu {self.env.mu} inconsistent with comfort_included="
                f"{self.comfort_included} (expected {expected_mu})"
            )
        if self.episodes is not None and self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.algorithm == "ppo" and self.steps is not None:
            raise ValueError("a steps budget applies to ddpg only; use episodes for ppo")
        if self.algorithm == "ddpg" and self.episodes is not None and self.steps is not None:
            raise ValueError("give episodes or steps for ddpg, not both")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    def budget(self) -> tuple[str, int]:
        """Effective training budget as (mode, limit)."""
        if self.algorithm == "ppo":
            return "episodes", self.episodes if self.episodes is not None else DEFAULT_PPO_EPISODES
        if self.episodes is not None:
            return "episodes", self.episodes
        return "steps", self.steps if self.steps is not None else DEFAULT_DDPG_STEPS


# ---------------------------------------------------------------------------
# Config file parsing

_BOOL_VALUES = {
    "1": True, "true": True, "yes": True, "on": True,
    "0": False, "false": False, "no": False, "off": False,
}

_RUN_FIELDS = {
    "algorithm": "str",
    "comfort_included": "bool",
    "trial_dir": "str",
    "synth_count": "int",
    "synth_seed": "int",
    "split_fraction": "float",
    "split_seed": "int",
    "episodes": "int",
    "steps": "int",
    "checkpoint_interval": "int",
    "out_dir": "str",
    "seed": "int",
}
_ENV_FIELDS = {
    "dt": "float",
    "d_init": "float",
    "v_init": "float",
    "safe_box_width": "float",
    "d_max": "float",
    "eta": "float",
    "beta": "float",
    "mu": "float",
    "max_steps": "int",
}
_PPO_FIELDS = {
    "batch_size": "int",
    "buffer_size": "int",
    "time_horizon": "int",
    "learning_rate": "float",
    "gamma": "float",
    "clip_epsilon": "float",
    "gae_lambda": "float",
    "epochs_per_update": "int",
    "entropy_coeff": "float",
    "value_coeff": "float",
    "init_log_std": "float",
    "hidden_sizes": "ints",
}
_DDPG_FIELDS = {
    "minibatch_size": "int",
    "buffer_capacity": "int",
    "gamma": "float",
    "tau": "float",
    "actor_lr": "float",
    "critic_lr": "float",
    "warmup_steps": "int",
    "updates_per_env_step": "int",
    "ou_theta": "float",
    "ou_sigma": "float",
    "ou_dt": "float",
    "hidden_sizes": "ints",
}
_TRIALS_FIELDS = {
    "wait_time_range": "floats",
    "walk_speed_range": "floats",
    "false_start_prob": "float",
    "head_scan_period_range": "floats",
    "road_width": "float",
    "frame_dt": "float",
    "duration_max": "float",
}
_SECTIONS = {
    "run": _RUN_FIELDS,
    "env": _ENV_FIELDS,
    "ppo": _PPO_FIELDS,
    "ddpg": _DDPG_FIELDS,
    "trials": _TRIALS_FIELDS,
}


def _convert(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "str":
            return raw
        if kind == "bool":
            if raw.lower() not in _BOOL_VALUES:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_VALUES[raw.lower()]
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "ints":
            return tuple(int(p.strip()) for p in raw.split(",") if p.strip())
        if kind == "floats":
            return tuple(float(p.strip()) for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None
    raise AssertionError(f"unknown kind {kind}")


def read_config_file(path: Path | str) -> dict[str, dict]:
    """Parse a key = value config file into typed per-section dicts."""
    path = Path(path)
    parser = ConfigParser(interpolation=None)
    with path.open(encoding="utf-8") as fh:
        parser.read_file(fh)
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"{path}: unknown section [{section}]")
        fields = _SECTIONS[section]
        out = {}
        for key, raw in parser.items(section):
            if key not in fields:
                raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
            out[key] = _convert(fields[key], raw, f"{path}: [{section}] {key}")
        values[section] = out
    return values


def load_run_config(
    path: Optional[Path | str] = None, overrides: Optional[dict] = None
) -> RunConfig:
    """Build a RunConfig from an optional file plus CLI-style overrides.

    Overrides use [run]-section keys and replace file values; supplying a
    trial_dir override drops any synthetic source from the file so the
    one-source invariant keeps holding.
    """
    values = read_config_file(path) if path is not None else {}
    run = dict(values.get("run", {}))
    overrides = dict(overrides or {})
    for key, val in overrides.items():
        if key not in _RUN_FIELDS:
            raise ValueError(f"unknown run option {key!r}")
        run[key] = val
    if overrides.get("trial_dir") is not None:
        run.pop("synth_count", None)

    env_kwargs = dict(values.get("env", {}))
    comfort = run.get("comfort_included", True)
    env_kwargs.setdefault("mu", COMFORT_MU if comfort else 0.0)

    return RunConfig(
        env=EnvConfig(**env_kwargs),
        ppo=PpoConfig(**values.get("ppo", {})),
        ddpg=DdpgConfig(**values.get("ddpg", {})),
        synth_params=SynthParams(**values.get("trials", {})),
        **run,
    )


# ---------------------------------------------------------------------------
# Manifest and artifact formatting


def _manifest_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_manifest_value(x) for x in v)
    return str(v)


def run_manifest(config: RunConfig) -> str:
    """Flat key = value dump of every effective hyperparameter."""
    entries: dict[str, object] = {
        "nn.backend": BACKEND,
        "run.algorithm": config.algorithm,
        "run.comfort_included": config.comfort_included,
        "run.split_fraction": config.split_fraction,
        "run.split_seed": config.split_seed,
        "run.checkpoint_interval": config.checkpoint_interval,
        "run.out_dir": config.out_dir,
        "run.seed": config.seed,
    }
    mode, limit = config.budget()
    entries[f"run.budget_{mode}"] = limit
    if config.trial_dir is not None:
        entries["run.trial_dir"] = config.trial_dir
    else:
        entries["run.synth_count"] = config.synth_count
        entries["run.synth_seed"] = config.synth_seed
        for f in dataclasses.fields(config.synth_params):
            entries[f"trials.{f.name}"] = getattr(config.synth_params, f.name)
    for f in dataclasses.fields(config.env):
        entries[f"env.{f.name}"] = getattr(config.env, f.name)
    agent = config.ppo if config.algorithm == "ppo" else config.ddpg
    for f in dataclasses.fields(agent):
        entries[f"{config.algorithm}.{f.name}"] = getattr(agent, f.name)
    lines = [f"{k} = {_manifest_value(entries[k])}" for k in sorted(entries)]
    return "\n".join(lines) + "\n"


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else format(v, ".12g")
    return str(v)


def _write_csv(path: Path, header: str, rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [header] + [",".join(_csv_cell(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Trial plumbing


def generate_trial_set(params: SynthParams, count: int, seed: int) -> list[Trial]:
    """Deterministically generate ``count`` synthetic trials."""
    if count < 0:
        raise ValueError("count must be >= 0")
    children = np.random.SeedSequence(seed).spawn(count) if count else []
    return [
        generate_synthetic_trial(np.random.default_rng(child), params, f"trial_{i:05d}")
        for i, child in enumerate(children)
    ]


def load_trial_set(path: Path | str) -> list[Trial]:
    """Load a trial directory and fill in pedestrian speeds."""
    return [derive_speeds(t) for t in load_trials(path)]


def resolve_trials(config: RunConfig) -> list[Trial]:
    """Materialize the configured trial source, observation-ready."""
    if config.trial_dir is not None:
        trials = load_trial_set(config.trial_dir)
        if not trials:
            raise ValueError(f"no trials found in {config.trial_dir}")
        return trials
    return [
        derive_speeds(t)
        for t in generate_trial_set(config.synth_params, config.synth_count, config.synth_seed)
    ]


def cmd_gen_trials(
    params: SynthParams, count: int, seed: int, out_dir: Path | str
) -> list[Path]:
    """Write ``count`` trial files plus a generation manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trials = generate_trial_set(params, count, seed)
    paths = [save_trial(t, out) for t in trials]
    entries: dict[str, object] = {"count": count, "seed": seed}
    for f in dataclasses.fields(params):
        entries[f"trials.{f.name}"] = getattr(params, f.name)
    lines = [f"{k} = {_manifest_value(entries[k])}" for k in sorted(entries)]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths


# ---------------------------------------------------------------------------
# Training


def convergence_report(rewards: Sequence[float], window: int = CONVERGENCE_WINDOW) -> dict:
    """Episode at which the trailing-window mean first nears its final value.

    The final level is the mean over the last ``window`` episodes; the
    threshold is that level minus 10% of its magnitude, which equals the
    plain "90% of final" reading for positive finals while staying
    well-defined on this environment's non-positive reward scale.
    """
    n = len(rewards)
    if n == 0:
        return {
            "episodes": 0,
            "window": window,
            "final_mean_reward": None,
            "threshold": None,
            "convergence_episode": None,
        }
    w = min(window, n)
    arr = np.asarray(rewards, dtype=np.float64)
    final = float(np.mean(arr[-w:]))
    threshold = final - 0.1 * abs(final)
    episode = None
    for i in range(n):
        lo = max(0, i - w + 1)
        if float(np.mean(arr[lo : i + 1])) >= threshold:
            episode = i + 1
            break
    return {
        "episodes": n,
        "window": w,
        "final_mean_reward": final,
        "threshold": threshold,
        "convergence_episode": episode,
    }


def _ppo_saver(trainer: PpoTrainer) -> Callable[[Path], None]:
    def save(path: Path) -> None:
        save_bundle(
            path,
            {"policy_mean": trainer.policy.mean_net, "value": trainer.value_net},
            scalars={"log_std": trainer.policy.log_std},
            strings={"algorithm": "ppo"},
        )

    return save


def _ddpg_saver(trainer: DdpgTrainer) -> Callable[[Path], None]:
    def save(path: Path) -> None:
        save_bundle(
            path,
            {
                "actor": trainer.nets.actor,
                "critic": trainer.nets.critic,
                "target_actor": trainer.nets.target_actor,
                "target_critic": trainer.nets.target_critic,
            },
            strings={"algorithm": "ddpg"},
        )

    return save


def cmd_train(config: RunConfig) -> Path:
    """Run one training job; returns the final checkpoint path.

    Emits manifest.txt, curve.csv (one row per completed episode),
    training_log.csv (one row per optimizer cycle), convergence.txt,
    periodic checkpoints every ``checkpoint_interval`` episodes, and
    checkpoint_final.bsnk.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(run_manifest(config), encoding="utf-8")

    all_trials = resolve_trials(config)
    train_set, _ = split_trials(all_trials, config.split_fraction, config.split_seed)
    if not train_set:
        raise ValueError("training split is empty")

    if config.algorithm == "ppo":
        trainer = PpoTrainer(train_set, config.ppo, config.env, config.seed)
        run_cycle = trainer.run_update
        save_checkpoint = _ppo_saver(trainer)
    else:
        trainer = DdpgTrainer(train_set, config.ddpg, config.env, config.seed)
        run_cycle = trainer.run_episode
        save_checkpoint = _ddpg_saver(trainer)

    mode, limit = config.budget()
    rows: list[dict] = []
    last_saved = 0
    while True:
        progress = len(trainer.episode_rewards) if mode == "episodes" else trainer.total_steps
        if progress >= limit:
            break
        rows.append(run_cycle())
        done = len(trainer.episode_rewards)
        if done - last_saved >= config.checkpoint_interval:
            save_checkpoint(out / f"checkpoint_{done:06d}.bsnk")
            last_saved = done

    _write_csv(
        out / "curve.csv",
        CURVE_HEADER,
        [
            (i + 1, r, s, e.value)
            for i, (r, s, e) in enumerate(
                zip(trainer.episode_rewards, trainer.episode_lengths, trainer.episode_events)
            )
        ],
    )
    _write_csv(
        out / "training_log.csv",
        TRAINING_LOG_HEADER,
        [
            (
                row["update"],
                row["episodes"],
                row["mean_episode_reward"],
                row["mean_ratio"],
                row["clip_fraction"],
                row["value_loss"],
                row["policy_loss"],
            )
            for row in rows
        ],
    )
    _write_json(out / "convergence.txt", convergence_report(trainer.episode_rewards))
    final = out / "checkpoint_final.bsnk"
    save_checkpoint(final)
    return final


# ---------------------------------------------------------------------------
# Evaluation


def load_policy(checkpoint_path: Path | str) -> tuple[str, Callable[[np.ndarray], float]]:
    """Rebuild the deterministic policy stored in a checkpoint.

    Returns (algorithm, act) where act maps an observation vector to a
    brake action: the Gaussian mean for ppo, the squashed actor output
    for ddpg.  No exploration noise in either case.
    """
    networks, _scalars, strings = load_bundle(checkpoint_path)
    algorithm = strings.get("algorithm", "")
    if algorithm == "ppo":
        net = networks.get("policy_mean")
        if net is None:
            raise ValueError(f"{checkpoint_path}: missing policy_mean network")
    elif algorithm == "ddpg":
        net = networks.get("actor")
        if net is None:
            raise ValueError(f"{checkpoint_path}: missing actor network")
    else:
        raise ValueError(f"{checkpoint_path}: not a trainer checkpoint (algorithm tag missing)")
    if net.input_size != OBS_DIM:
        raise ValueError(
            f"{checkpoint_path}: network expects {net.input_size} inputs, "
            f"observations have {OBS_DIM}"
        )

    if algorithm == "ppo":

        def act(vec: np.ndarray) -> float:
            return float(forward(net, np.asarray(vec)[None, :])[0][0, 0])

    else:

        def act(vec: np.ndarray) -> float:
            return float(squash_action(forward(net, np.asarray(vec)[None, :])[0][0, 0]))

    return algorithm, act


@dataclass(frozen=True)
class EvalReport:
    """Aggregate results of evaluating one checkpoint on a trial set."""

    algorithm: str
    checkpoint: str
    n_episodes: int
    accident_count: int
    event_counts: dict
    mean_abs_jerk: float
    max_abs_jerk: float
    mean_episode_reward: float
    stop_distance_mean: Optional[float]
    stop_distance_min: Optional[float]
    stop_distance_max: Optional[float]
    trial_ids: list
    per_trial: dict

    def __post_init__(self) -> None:
        if sum(self.event_counts.values()) != self.n_episodes:
            raise ValueError("event counts do not sum to the episode count")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def cmd_eval(
    checkpoint_path: Path | str,
    trials: Sequence[Trial],
    env_config: Optional[EnvConfig],
    out_dir: Path | str,
) -> EvalReport:
    """Deterministically roll out a checkpoint on every trial.

    Writes one EpisodeRecord CSV per trial under ``episodes/`` and the
    aggregate report to ``report.json``; returns the report.
    """
    if not trials:
        raise ValueError("evaluation trial set is empty")
    algorithm, act = load_policy(checkpoint_path)
    env = BrakingEnv(env_config)
    out = Path(out_dir)

    ordered = sorted(trials, key=lambda t: t.id)
    event_counts = {name: 0 for name in TERMINAL_EVENTS}
    per_trial: dict[str, dict] = {}
    jerk_sum = 0.0
    jerk_count = 0
    jerk_max = 0.0
    reward_total = 0.0
    stop_distances = []

    for trial in ordered:
        obs = env.reset(trial)
        start_x = env.vehicle.pos_x
        steps = []
        while not env.done:
            result = env.step(act(obs.vector))
            steps.append(result)
            obs = result.observation
        write_episode_csv(steps, out / "episodes" / f"{trial.id}.csv")

        jerks = np.array([abs(s.info["jerk"]) for s in steps])
        ep_reward = float(sum(s.reward for s in steps))
        event = steps[-1].event
        event_counts[event.value] += 1
        jerk_sum += float(jerks.sum())
        jerk_count += len(jerks)
        jerk_max = max(jerk_max, float(jerks.max()))
        reward_total += ep_reward
        stop_distance = None
        if event is EpisodeEvent.STOP:
            stop_distance = float(steps[-1].info["pos_x"] - start_x)
            stop_distances.append(stop_distance)
        per_trial[trial.id] = {
            "event": event.value,
            "reward": ep_reward,
            "steps": len(steps),
            "mean_abs_jerk": float(jerks.mean()),
            "stop_distance": stop_distance,
        }

    report = EvalReport(
        algorithm=algorithm,
        checkpoint=str(checkpoint_path),
        n_episodes=len(ordered),
        accident_count=event_counts["accident"],
        event_counts=event_counts,
        mean_abs_jerk=jerk_sum / jerk_count,
        max_abs_jerk=jerk_max,
        mean_episode_reward=reward_total / len(ordered),
        stop_distance_mean=float(np.mean(stop_distances)) if stop_distances else None,
        stop_distance_min=min(stop_distances) if stop_distances else None,
        stop_distance_max=max(stop_distances) if stop_distances else None,
        trial_ids=[t.id for t in ordered],
        per_trial=per_trial,
    )
    _write_json(out / "report.json", report.to_dict())
    return report


# ---------------------------------------------------------------------------
# Comparison


def compare_reports(report_a: dict, report_b: dict) -> dict:
    """Head-to-head summary of two EvalReports over the same trial set."""
    ids_a = list(report_a["trial_ids"])
    ids_b = list(report_b["trial_ids"])
    if ids_a != ids_b:
        raise ValueError("reports cover different trial sets")
    ja = float(report_a["mean_abs_jerk"])
    jb = float(report_b["mean_abs_jerk"])
    if ja == jb:
        ratio = 1.0
    elif jb == 0.0:
        ratio = math.inf
    else:
        ratio = ja / jb
    per_trial_diff = {
        tid: report_a["per_trial"][tid]["mean_abs_jerk"]
        - report_b["per_trial"][tid]["mean_abs_jerk"]
        for tid in ids_a
    }
    return {
        "n_episodes": len(ids_a),
        "jerk_ratio": ratio,
        "mean_abs_jerk_a": ja,
        "mean_abs_jerk_b": jb,
        "accident_count_a": int(report_a["accident_count"]),
        "accident_count_b": int(report_b["accident_count"]),
        "event_counts_a": dict(report_a["event_counts"]),
        "event_counts_b": dict(report_b["event_counts"]),
        "per_trial_jerk_diff": per_trial_diff,
    }
