"""Braking environment: vehicle approach, trial playback, events, reward.

One episode replays a single pedestrian trial while the agent controls the
vehicle's brake with a continuous action in [0, 1].  The vehicle starts a
fixed distance short of the pedestrian at a fixed speed and can only slow
down.  The episode ends with exactly one of five terminal events:

* ``ACCIDENT``: the vehicle is inside the safe box around the pedestrian's
  crossing point while the crossing is in progress.
* ``PASS``: the vehicle clears the safe box before the crossing begins.
* ``CROSS``: the pedestrian finishes crossing.
* ``STOP``: the vehicle comes to a complete stop.
* ``TIMEOUT``: a guard for degenerate trials (no crossing, vehicle crawling).

Rewards are penalties only: a per-step speed cost, a jerk-times-brake
comfort cost, and a speed-proportional collision cost on an accident step.
Identical (trial, config, action sequence) inputs produce bit-identical
step sequences.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .trials import Trial

# Fixed normalization scale for the cross-road observation component.
REL_Y_SCALE = 10.0


@dataclass(frozen=True)
class EnvConfig:
    """Scenario geometry, vehicle limits, and reward weights.

    ``mu = 0`` disables the comfort term (the accident-avoidance-only
    configuration); ``v_init = 0`` is allowed and yields an immediate stop,
    which is occasionally useful in tests.
    """

    dt: float = 0.1
    d_init: float = 160.0
    v_init: float = 11.11
    safe_box_width: float = 3.0
    d_max: float = 8.0
    eta: float = 0.1
    beta: float = 0.01
    mu: float = 0.01
    max_steps: int = 600

    def __post_init__(self) -> None:
        for name in ("dt", "d_init", "safe_box_width", "d_max", "eta", "beta"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.v_init < 0.0:
            raise ValueError("v_init must be nonnegative")
        if self.mu < 0.0:
            raise ValueError("mu must be nonnegative")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass(frozen=True)
class VehicleState:
    """Vehicle kinematics plus the velocity history the jerk term needs.

    ``v_prev``/``v_prev2`` are the velocities one and two steps back; the
    jerk of the step that produced this state is
    ``(v - 2 v_prev + v_prev2) / dt**2``.
    """

    pos_x: float
    v: float
    v_prev: float
    v_prev2: float
    last_action: float = 0.0

    def __post_init__(self) -> None:
        if self.v < 0.0 or self.v_prev < 0.0 or self.v_prev2 < 0.0:
            raise ValueError("velocities must be nonnegative")
        if not (0.0 <= self.last_action <= 1.0):
            raise ValueError("last_action must be in [0, 1]")


class EpisodeEvent(enum.Enum):
    """Episode status; everything except ONGOING terminates the episode."""

    ONGOING = "ongoing"
    ACCIDENT = "accident"
    PASS = "pass"
    CROSS = "cross"
    STOP = "stop"
    TIMEOUT = "timeout"

    @property
    def is_terminal(self) -> bool:
        return self is not EpisodeEvent.ONGOING


@dataclass(frozen=True, eq=False)
class Observation:
    """What the agent sees: 7 raw quantities plus their normalized vector.

    ``rel_x``/``rel_y`` are pedestrian position minus vehicle position in
    meters; ``vector`` divides each component by its fixed scale (``rel_x``
    by ``d_init``, ``rel_y`` by 10, both speeds by ``v_init``, the head
    direction is already unit) in the order
    (rel_x, rel_y, head_x, head_y, head_z, v_ped, v_veh).
    """

    rel_x: float
    rel_y: float
    head_x: float
    head_y: float
    head_z: float
    v_ped: float
    v_veh: float
    vector: np.ndarray = field(repr=False)

    @staticmethod
    def build(
        rel_x: float,
        rel_y: float,
        head_x: float,
        head_y: float,
        head_z: float,
        v_ped: float,
        v_veh: float,
        config: EnvConfig,
    ) -> "Observation":
        v_scale = config.v_init if config.v_init > 0.0 else 1.0
        vec = np.array(
            [
                rel_x / config.d_init,
                rel_y / REL_Y_SCALE,
                head_x,
                head_y,
                head_z,
                v_ped / v_scale,
                v_veh / v_scale,
            ],
            dtype=np.float64,
        )
        return Observation(rel_x, rel_y, head_x, head_y, head_z, v_ped, v_veh, vec)


@dataclass(frozen=True, eq=False)
class StepResult:
    """One transition: next observation, reward, event, and diagnostics."""

    observation: Observation
    reward: float
    event: EpisodeEvent
    info: dict


def compute_jerk(v_next: float, v: float, v_prev: float, dt: float) -> float:
    """Second difference of velocity: (v_next - 2 v + v_prev) / dt**2."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return (v_next - 2.0 * v + v_prev) / (dt * dt)


def compute_reward(
    v_veh: float, action: float, jerk: float, event: EpisodeEvent, config: EnvConfig
) -> float:
    """Three penalty terms; never positive.

    -eta * v on an accident step (severity scales with impact speed),
    -beta * v every step (discourages approaching fast), and
    -mu * action * |jerk| (braking is only penalized while it shakes the
    passengers).
    """
    accident = 1.0 if event is EpisodeEvent.ACCIDENT else 0.0
    return (
        -config.eta * v_veh * accident
        - config.beta * v_veh
        - config.mu * action * abs(jerk)
    )


def detect_event(
    vehicle: VehicleState,
    trial: Trial,
    cursor: int,
    step_count: int,
    config: EnvConfig,
) -> EpisodeEvent:
    """Classify the current state, checking conditions in priority order.

    Accident beats Pass beats Cross beats Stop beats Timeout.  The accident
    test is 1-D along the road axis: the vehicle is inside the safe box when
    within half its width of the pedestrian's road-axis position, and the
    crossing is in progress when the playback cursor lies inside the
    annotated crossing window.
    """
    if not (0 <= cursor < len(trial.frames)):
        raise ValueError(f"cursor {cursor} out of range")
    frame = trial.frames[cursor]
    half = config.safe_box_width / 2.0
    start, end = trial.crossing_start_idx, trial.crossing_end_idx
    if start is not None and start <= cursor <= end:
        if abs(vehicle.pos_x - frame.ped_x) <= half:
            return EpisodeEvent.ACCIDENT
    if vehicle.pos_x > frame.ped_x + half and (start is None or cursor < start):
        return EpisodeEvent.PASS
    if end is not None and cursor >= end:
        return EpisodeEvent.CROSS
    if vehicle.v == 0.0:
        return EpisodeEvent.STOP
    if step_count >= config.max_steps:
        return EpisodeEvent.TIMEOUT
    return EpisodeEvent.ONGOING


class BrakingEnv:
    """Episodic single-vehicle braking simulator.

    A fresh episode starts with :meth:`reset`; :meth:`step` advances one
    control interval and raises if called after the episode ended.  The
    instance owns mutable episode state, so share one per thread; Trial
    values are immutable and safe to share.
    """

    def __init__(self, config: Optional[EnvConfig] = None):
        self.config = config if config is not None else EnvConfig()
        self._trial: Optional[Trial] = None
        self._vehicle: Optional[VehicleState] = None
        self._veh_y = 0.0
        self._cursor = 0
        self._steps = 0
        self._event = EpisodeEvent.ONGOING

    @property
    def trial(self) -> Optional[Trial]:
        return self._trial

    @property
    def vehicle(self) -> VehicleState:
        if self._vehicle is None:
            raise RuntimeError("reset() has not been called")
        return self._vehicle

    @property
    def cursor(self) -> int:
        return self._cursor

    @property
    def steps(self) -> int:
        return self._steps

    @property
    def event(self) -> EpisodeEvent:
        return self._event

    @property
    def done(self) -> bool:
        return self._event.is_terminal

    def reset(self, trial: Trial) -> Observation:
        """Start an episode on a trial; returns the initial observation.

        The vehicle is placed ``d_init`` meters short of the pedestrian's
        first-frame road-axis position at ``v_init``, with the velocity
        history pre-filled so the first step's jerk is a true second
        difference (zero under no braking).  Playback expects the trial to
        carry derived speeds; crossing annotations drive the event machine.
        """
        if trial.frame_count() < 2:
            raise ValueError("trial must have at least 2 frames")
        cfg = self.config
        self._trial = trial
        first = trial.frames[0]
        self._vehicle = VehicleState(
            pos_x=first.ped_x - cfg.d_init,
            v=cfg.v_init,
            v_prev=cfg.v_init,
            v_prev2=cfg.v_init,
            last_action=0.0,
        )
        # The vehicle drives the center of the near lane.
        self._veh_y = trial.curb_y + 0.25 * (trial.far_y - trial.curb_y)
        self._cursor = 0
        self._steps = 0
        self._event = EpisodeEvent.ONGOING
        return self._observe()

    def step(self, action: float) -> StepResult:
        """Apply one brake command and advance the world by dt.

        Non-finite actions are rejected; out-of-range values are clamped and
        the clamped value is what the reward sees.  Deceleration is
        ``action * d_max``; the position update uses the post-brake velocity
        so a vehicle that reaches v = 0 does not creep.
        """
        if self._trial is None or self._vehicle is None:
            raise RuntimeError("reset() has not been called")
        if self._event.is_terminal:
            raise RuntimeError(f"step() after terminal event {self._event.value}")
        a = float(action)
        if not math.isfinite(a):
            raise ValueError("action must be finite")
        a = min(max(a, 0.0), 1.0)

        cfg = self.config
        old = self._vehicle
        v_new = max(0.0, old.v - a * cfg.d_max * cfg.dt)
        pos_new = old.pos_x + v_new * cfg.dt
        jerk = compute_jerk(v_new, old.v, old.v_prev, cfg.dt)
        self._vehicle = VehicleState(
            pos_x=pos_new, v=v_new, v_prev=old.v, v_prev2=old.v_prev, last_action=a
        )
        self._steps += 1
        self._cursor = min(self._cursor + 1, self._trial.frame_count() - 1)

        event = detect_event(self._vehicle, self._trial, self._cursor, self._steps, cfg)
        reward = compute_reward(v_new, a, jerk, event, cfg)
        self._event = event

        frame = self._trial.frames[self._cursor]
        info = {
            "step": self._steps,
            "t": self._steps * cfg.dt,
            "pos_x": pos_new,
            "v": v_new,
            "action": a,
            "jerk": jerk,
            "dist": abs(pos_new - frame.ped_x),
        }
        return StepResult(self._observe(), reward, event, info)

    def _observe(self) -> Observation:
        assert self._trial is not None and self._vehicle is not None
        frame = self._trial.frames[self._cursor]
        return Observation.build(
            rel_x=frame.ped_x - self._vehicle.pos_x,
            rel_y=frame.ped_y - self._veh_y,
            head_x=frame.head_x,
            head_y=frame.head_y,
            head_z=frame.head_z,
            v_ped=frame.ped_speed,
            v_veh=self._vehicle.v,
            config=self.config,
        )


def write_episode_csv(steps: Sequence[StepResult], path: Path | str) -> None:
    """Write one episode's per-step log; format is stable and deterministic."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["step,t,pos_x,v,action,jerk,reward,event"]
    for s in steps:
        i = s.info
        lines.append(
            ",".join(
                [
                    str(int(i["step"])),
                    format(i["t"], ".12g"),
                    format(i["pos_x"], ".12g"),
                    format(i["v"], ".12g"),
                    format(i["action"], ".12g"),
                    format(i["jerk"], ".12g"),
                    format(s.reward, ".12g"),
                    s.event.value,
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
