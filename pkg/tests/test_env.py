"""Environment: kinematics, jerk, reward, event machine, episode logs."""

import math

import numpy as np
import pytest

from brakesim.env import (
    BrakingEnv,
    EnvConfig,
    EpisodeEvent,
    Observation,
    VehicleState,
    compute_jerk,
    compute_reward,
    detect_event,
    write_episode_csv,
)
from brakesim.trials import Trial, TrialFrame, annotate_crossing


def waiting_trial(n_frames=2):
    """Pedestrian stands at the curb forever; never crosses."""
    frames = tuple(
        TrialFrame(t=0.1 * i, ped_x=0.0, ped_y=0.0, head_x=0.0, head_y=1.0, head_z=0.0)
        for i in range(n_frames)
    )
    return Trial(
        id="wait", frames=frames, curb_y=0.0, far_y=7.0, wait_time=0.1 * (n_frames - 1)
    )


def crossing_trial(onset_frame, frames_to_cross, n_frames):
    """Pedestrian waits, then walks 0 -> 7 m linearly, then stands."""
    ys = []
    for i in range(n_frames):
        if i < onset_frame:
            ys.append(0.0)
        else:
            ys.append(min(7.0, 7.0 * (i - onset_frame) / frames_to_cross))
    frames = tuple(
        TrialFrame(t=0.1 * i, ped_x=0.0, ped_y=y, head_x=0.0, head_y=1.0, head_z=0.0)
        for i, y in enumerate(ys)
    )
    tr = Trial(
        id="cross", frames=frames, curb_y=0.0, far_y=7.0, wait_time=0.1 * (n_frames - 1)
    )
    return annotate_crossing(tr)


def run(env, trial, actions):
    env.reset(trial)
    results = []
    for a in actions:
        results.append(env.step(a))
        if results[-1].event.is_terminal:
            break
    return results


# ---------------------------------------------------------------------------
# Config and state validation


def test_config_defaults():
    cfg = EnvConfig()
    assert cfg.dt == 0.1 and cfg.d_init == 160.0 and cfg.v_init == 11.11
    assert cfg.safe_box_width == 3.0 and cfg.d_max == 8.0
    assert (cfg.eta, cfg.beta, cfg.mu) == (0.1, 0.01, 0.01)
    assert cfg.max_steps == 600


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(dt=0.0)
    with pytest.raises(ValueError):
        EnvConfig(eta=-0.1)
    with pytest.raises(ValueError):
        EnvConfig(v_init=-1.0)
    with pytest.raises(ValueError):
        EnvConfig(max_steps=0)
    # mu = 0 is the comfort-off configuration; v_init = 0 is legal.
    EnvConfig(mu=0.0)
    EnvConfig(v_init=0.0)


def test_vehicle_state_validation():
    with pytest.raises(ValueError):
        VehicleState(pos_x=0.0, v=-0.1, v_prev=0.0, v_prev2=0.0)
    with pytest.raises(ValueError):
        VehicleState(pos_x=0.0, v=1.0, v_prev=1.0, v_prev2=1.0, last_action=1.5)


# ---------------------------------------------------------------------------
# Jerk


def test_jerk_constant_velocity_is_zero():
    assert compute_jerk(10.0, 10.0, 10.0, 0.1) == 0.0


def test_jerk_hand_value():
    # (7 - 2*9 + 10) / 0.01 = -100
    assert compute_jerk(7.0, 9.0, 10.0, 0.1) == pytest.approx(-100.0)


def test_jerk_linear_ramp_is_zero():
    assert compute_jerk(9.8, 9.9, 10.0, 0.1) == pytest.approx(0.0, abs=1e-9)


def test_jerk_rejects_bad_dt():
    with pytest.raises(ValueError):
        compute_jerk(1.0, 1.0, 1.0, 0.0)


# ---------------------------------------------------------------------------
# Reward


def test_reward_accident_hand_value():
    # -(0.1*10) - (0.01*10) - 0 = -1.1
    cfg = EnvConfig()
    r = compute_reward(10.0, 0.0, 0.0, EpisodeEvent.ACCIDENT, cfg)
    assert r == pytest.approx(-1.1)


def test_reward_stopped_is_zero():
    cfg = EnvConfig()
    assert compute_reward(0.0, 0.0, 0.0, EpisodeEvent.STOP, cfg) == 0.0


def test_reward_ongoing_hand_value():
    # -0.01*11.11 - 0.01*0.5*40 = -0.1111 - 0.2
    cfg = EnvConfig()
    r = compute_reward(11.11, 0.5, 40.0, EpisodeEvent.ONGOING, cfg)
    assert r == pytest.approx(-0.3111, abs=1e-12)


def test_reward_never_positive():
    cfg = EnvConfig()
    rng = np.random.default_rng(0)
    for _ in range(500):
        v = rng.uniform(0.0, 12.0)
        a = rng.uniform(0.0, 1.0)
        jerk = rng.uniform(-120.0, 120.0)
        ev = rng.choice(list(EpisodeEvent))
        assert compute_reward(v, a, jerk, ev, cfg) <= 0.0


def test_reward_mu_zero_drops_comfort_term():
    cfg = EnvConfig(mu=0.0)
    r = compute_reward(10.0, 1.0, 100.0, EpisodeEvent.ONGOING, cfg)
    assert r == pytest.approx(-0.1)


# ---------------------------------------------------------------------------
# Event detection


def vehicle_at(pos_x, v=5.0):
    return VehicleState(pos_x=pos_x, v=v, v_prev=v, v_prev2=v)


def test_event_accident_inside_box_mid_crossing():
    tr = crossing_trial(onset_frame=10, frames_to_cross=40, n_frames=60)
    cursor = (tr.crossing_start_idx + tr.crossing_end_idx) // 2
    ev = detect_event(vehicle_at(-0.5), tr, cursor, cursor, EnvConfig())
    assert ev is EpisodeEvent.ACCIDENT


def test_event_pass_before_crossing():
    tr = waiting_trial()
    ev = detect_event(vehicle_at(2.0), tr, 1, 1, EnvConfig())
    assert ev is EpisodeEvent.PASS


def test_event_accident_beats_pass_at_crossing_onset():
    # Inside the box at the exact frame the crossing starts.
    tr = crossing_trial(onset_frame=10, frames_to_cross=40, n_frames=60)
    cursor = tr.crossing_start_idx
    ev = detect_event(vehicle_at(1.0), tr, cursor, cursor, EnvConfig())
    assert ev is EpisodeEvent.ACCIDENT


def test_event_cross_when_crossing_done():
    tr = crossing_trial(onset_frame=10, frames_to_cross=40, n_frames=60)
    ev = detect_event(vehicle_at(-120.0), tr, tr.crossing_end_idx, 55, EnvConfig())
    assert ev is EpisodeEvent.CROSS


def test_event_stop():
    tr = waiting_trial()
    ev = detect_event(vehicle_at(-100.0, v=0.0), tr, 1, 5, EnvConfig())
    assert ev is EpisodeEvent.STOP


def test_event_timeout():
    tr = waiting_trial()
    ev = detect_event(vehicle_at(-100.0, v=1.0), tr, 1, 600, EnvConfig())
    assert ev is EpisodeEvent.TIMEOUT


def test_event_ongoing():
    tr = waiting_trial()
    ev = detect_event(vehicle_at(-100.0, v=1.0), tr, 1, 5, EnvConfig())
    assert ev is EpisodeEvent.ONGOING


def test_event_priority_order_exhaustive():
    """Compare against an independent priority walk over condition combos."""
    cfg = EnvConfig(max_steps=50)
    tr = crossing_trial(onset_frame=10, frames_to_cross=40, n_frames=60)
    start, end = tr.crossing_start_idx, tr.crossing_end_idx
    cursors = [0, start, (start + end) // 2, end, len(tr.frames) - 1]
    positions = [-100.0, -1.0, 0.5, 1.4, 1.6, 5.0]
    speeds = [0.0, 4.0]
    counts = [1, 50]
    for cursor in cursors:
        frame = tr.frames[cursor]
        for pos in positions:
            for v in speeds:
                for steps in counts:
                    got = detect_event(vehicle_at(pos, v=v), tr, cursor, steps, cfg)
                    in_box = abs(pos - frame.ped_x) <= 1.5
                    crossing = start <= cursor <= end
                    if in_box and crossing:
                        want = EpisodeEvent.ACCIDENT
                    elif pos > frame.ped_x + 1.5 and cursor < start:
                        want = EpisodeEvent.PASS
                    elif cursor >= end:
                        want = EpisodeEvent.CROSS
                    elif v == 0.0:
                        want = EpisodeEvent.STOP
                    elif steps >= cfg.max_steps:
                        want = EpisodeEvent.TIMEOUT
                    else:
                        want = EpisodeEvent.ONGOING
                    assert got is want, (cursor, pos, v, steps)


def test_event_no_crossing_never_cross():
    tr = waiting_trial(n_frames=5)
    for cursor in range(5):
        ev = detect_event(vehicle_at(-10.0, v=3.0), tr, cursor, cursor + 1, EnvConfig())
        assert ev is EpisodeEvent.ONGOING


# ---------------------------------------------------------------------------
# Reset and observations


def test_reset_initial_observation():
    env = BrakingEnv()
    obs = env.reset(waiting_trial())
    assert obs.vector[0] == pytest.approx(1.0)  # rel_x / d_init
    assert obs.vector[6] == pytest.approx(1.0)  # v_veh / v_init
    assert obs.rel_x == pytest.approx(160.0)
    assert obs.v_veh == pytest.approx(11.11)
    # Vehicle drives the near-lane center: curb + 0.25 * road width = 1.75.
    assert obs.rel_y == pytest.approx(-1.75)
    assert obs.vector[1] == pytest.approx(-0.175)
    assert env.vehicle.pos_x == pytest.approx(-160.0)


def test_reset_twice_identical():
    env = BrakingEnv()
    tr = waiting_trial()
    a = env.reset(tr)
    b = env.reset(tr)
    assert np.array_equal(a.vector, b.vector)


def test_reset_rejects_short_trial():
    frames = (TrialFrame(0.0, 0.0, 0.0, 0.0, 1.0, 0.0),)
    tr = Trial(id="one", frames=frames, curb_y=0.0, far_y=7.0)
    with pytest.raises(ValueError):
        BrakingEnv().reset(tr)


def test_zero_v_init_stops_immediately():
    env = BrakingEnv(EnvConfig(v_init=0.0))
    env.reset(waiting_trial())
    res = env.step(0.0)
    assert res.event is EpisodeEvent.STOP


# ---------------------------------------------------------------------------
# Step dynamics


def test_step_full_brake_hand_value():
    env = BrakingEnv()
    env.reset(waiting_trial())
    res = env.step(1.0)
    # 11.11 - 1.0*8*0.1 = 10.31; position advances with the new velocity.
    assert res.info["v"] == pytest.approx(10.31)
    assert env.vehicle.pos_x == pytest.approx(-160.0 + 1.031)


def test_step_clamps_velocity_at_zero():
    env = BrakingEnv(EnvConfig(v_init=0.05))
    env.reset(waiting_trial())
    res = env.step(1.0)
    assert res.info["v"] == 0.0
    assert res.event is EpisodeEvent.STOP


def test_step_clamps_action():
    env = BrakingEnv()
    env.reset(waiting_trial())
    r1 = env.step(2.5)
    env.reset(waiting_trial())
    r2 = env.step(1.0)
    assert r1.info["v"] == r2.info["v"]
    assert r1.info["action"] == 1.0
    env.reset(waiting_trial())
    r3 = env.step(-0.7)
    assert r3.info["action"] == 0.0
    assert r3.info["v"] == pytest.approx(11.11)


def test_step_rejects_nan_action():
    env = BrakingEnv()
    env.reset(waiting_trial())
    with pytest.raises(ValueError):
        env.step(float("nan"))


def test_step_after_terminal_raises():
    env = BrakingEnv(EnvConfig(v_init=0.05))
    env.reset(waiting_trial())
    assert env.step(1.0).event is EpisodeEvent.STOP
    with pytest.raises(RuntimeError):
        env.step(0.0)


def test_step_before_reset_raises():
    with pytest.raises(RuntimeError):
        BrakingEnv().step(0.0)


def test_no_brake_pass_step_index():
    # At 11.11 m/s the vehicle travels 1.111 m per step; it clears
    # ped_x + 1.5 m (161.5 m total) at step ceil(161.5/1.111) = 146.
    env = BrakingEnv()
    results = run(env, waiting_trial(), [0.0] * 200)
    assert results[-1].event is EpisodeEvent.PASS
    assert results[-1].info["step"] == 146
    assert env.vehicle.pos_x > 1.5


def test_full_brake_stop_distance_and_step():
    # v_k = 11.11 - 0.8k reaches 0 at step 14; distance is the sum of the
    # post-brake velocities times dt: 0.1*(13*11.11 - 0.8*91) = 7.163 m.
    env = BrakingEnv()
    results = run(env, waiting_trial(), [1.0] * 20)
    assert results[-1].event is EpisodeEvent.STOP
    assert results[-1].info["step"] == 14
    assert env.vehicle.pos_x == pytest.approx(-160.0 + 7.163)


def test_stopping_distance_close_to_analytic():
    # Constant brake a from speed v stops within one step's travel of the
    # continuous-time v^2 / (2 a d_max).
    rng = np.random.default_rng(1)
    for _ in range(30):
        v0 = rng.uniform(1.0, 11.11)
        a = rng.uniform(0.2, 1.0)
        cfg = EnvConfig(v_init=v0)
        env = BrakingEnv(cfg)
        env.reset(waiting_trial())
        while not env.done:
            env.step(a)
        travelled = env.vehicle.pos_x + 160.0
        analytic = v0 * v0 / (2.0 * a * cfg.d_max)
        assert abs(travelled - analytic) <= v0 * cfg.dt + 1e-12


def test_monotone_kinematics():
    env = BrakingEnv()
    env.reset(waiting_trial())
    rng = np.random.default_rng(2)
    last_pos, last_v = env.vehicle.pos_x, env.vehicle.v
    while not env.done:
        env.step(rng.uniform(0.0, 1.0))
        assert env.vehicle.pos_x >= last_pos
        assert env.vehicle.v <= last_v + 1e-15
        last_pos, last_v = env.vehicle.pos_x, env.vehicle.v


def test_jerk_profile_constant_action():
    # Constant 0.5 brake: jerk -40 at onset, 0 while ramping, +9 at the
    # clamp-to-zero step (v goes 0.71, 0.31, 0 instead of continuing -0.4).
    env = BrakingEnv()
    results = run(env, waiting_trial(), [0.5] * 40)
    jerks = [r.info["jerk"] for r in results]
    assert jerks[0] == pytest.approx(-40.0)
    assert jerks[1:-1] == pytest.approx([0.0] * (len(jerks) - 2), abs=1e-9)
    assert jerks[-1] == pytest.approx(9.0, abs=1e-6)
    assert results[-1].event is EpisodeEvent.STOP
    assert results[-1].info["step"] == 28


def test_accident_scenario():
    # Crossing spans frames 108..200; an unbraked vehicle enters the box
    # (158.5 m travelled) at step ceil(158.5/1.111) = 143, mid-crossing.
    tr = crossing_trial(onset_frame=100, frames_to_cross=100, n_frames=210)
    assert tr.crossing_start_idx == 108
    assert tr.crossing_end_idx == 200
    env = BrakingEnv()
    results = run(env, tr, [0.0] * 300)
    assert results[-1].event is EpisodeEvent.ACCIDENT
    assert results[-1].info["step"] == 143
    # Impact at full speed: -(eta + beta) * 11.11.
    assert results[-1].reward == pytest.approx(-(0.1 + 0.01) * 11.11)


def test_cross_scenario():
    # Pedestrian finishes crossing at frame 60 while the vehicle is still
    # 93 m short of the box.
    tr = crossing_trial(onset_frame=20, frames_to_cross=40, n_frames=80)
    env = BrakingEnv()
    results = run(env, tr, [0.0] * 300)
    assert results[-1].event is EpisodeEvent.CROSS
    assert results[-1].info["step"] == tr.crossing_end_idx


def test_timeout_scenario():
    # Brake to a crawl, then coast: never passes, never stops, pedestrian
    # never crosses; the 600-step guard fires.
    env = BrakingEnv()
    actions = [1.0] * 13 + [0.0] * 600
    results = run(env, waiting_trial(), actions)
    assert results[-1].event is EpisodeEvent.TIMEOUT
    assert results[-1].info["step"] == 600
    assert env.vehicle.v > 0.0


def test_determinism_bitwise():
    tr = crossing_trial(onset_frame=50, frames_to_cross=50, n_frames=120)
    actions = list(np.random.default_rng(3).uniform(0.0, 1.0, size=200))
    a = run(BrakingEnv(), tr, actions)
    b = run(BrakingEnv(), tr, actions)
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        assert ra.reward == rb.reward
        assert ra.event is rb.event
        assert ra.info == rb.info
        assert np.array_equal(ra.observation.vector, rb.observation.vector)


def test_observation_vector_matches_fields():
    env = BrakingEnv()
    env.reset(waiting_trial())
    res = env.step(0.3)
    obs = res.observation
    cfg = env.config
    expect = [
        obs.rel_x / cfg.d_init,
        obs.rel_y / 10.0,
        obs.head_x,
        obs.head_y,
        obs.head_z,
        obs.v_ped / cfg.v_init,
        obs.v_veh / cfg.v_init,
    ]
    assert obs.vector == pytest.approx(expect)
    assert np.all(np.isfinite(obs.vector))


# ---------------------------------------------------------------------------
# Episode log


def test_episode_csv_format(tmp_path):
    env = BrakingEnv()
    results = run(env, waiting_trial(), [1.0] * 20)
    path = tmp_path / "ep.csv"
    write_episode_csv(results, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,t,pos_x,v,action,jerk,reward,event"
    assert len(lines) == len(results) + 1
    first = lines[1].split(",")
    assert first[0] == "1" and first[7] == "ongoing"
    assert float(first[3]) == pytest.approx(10.31)
    assert lines[-1].split(",")[7] == "stop"


def test_episode_csv_deterministic(tmp_path):
    results = run(BrakingEnv(), waiting_trial(), [0.7] * 40)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_episode_csv(results, p1)
    write_episode_csv(results, p2)
    assert p1.read_bytes() == p2.read_bytes()
