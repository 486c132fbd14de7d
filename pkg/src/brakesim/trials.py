"""Pedestrian road-crossing trials.

A trial is a short time-stamped trajectory of one pedestrian who waits at
a curb and usually crosses a two-lane road: position, looking direction,
and a derived walking speed at roughly 0.1 s intervals.  The braking
environment replays trials open loop, so every value here is immutable
after construction and safe to share across environment instances.

On disk a trial is a CSV file (header ``t,ped_x,ped_y,head_x,head_y,head_z``,
one frame per row) plus a ``<id>.meta`` sidecar of ``key=value`` lines
carrying the road geometry and, when known, crossing annotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

# Respondents walked, never ran.
MAX_PED_SPEED = 3.0
# Accepted recording scales for the head vector; renormalized on load.
HEAD_NORM_MIN, HEAD_NORM_MAX = 0.5, 1.5
# Accepted inter-frame spacing; recordings are nominally on a 0.1 s grid.
# The slack absorbs float drift in accumulated timestamps at the bounds.
FRAME_DT_MIN, FRAME_DT_MAX = 0.05, 0.2
FRAME_DT_EPS = 1e-9
GRID_DT = 0.1
# A pedestrian is "back at the curb" within this margin (false starts).
CURB_RETURN_MARGIN = 0.1
DEFAULT_ENTRY_THRESHOLD = 0.5

CSV_HEADER = "t,ped_x,ped_y,head_x,head_y,head_z"


class TrialParseError(ValueError):
    """Malformed trial file; the message names the file and line."""


class GenerationError(ValueError):
    """Synthesis parameters cannot yield a complete crossing."""


def _fmt(x: float) -> str:
    """Fixed 12-significant-digit float formatting for all trial text files."""
    return format(float(x), ".12g")


@dataclass(frozen=True)
class TrialFrame:
    """One recorded frame: time, pedestrian position, looking direction.

    ``head_*`` is a world-frame unit vector after loading; ``ped_speed`` is
    filled in by :func:`derive_speeds` and is zero until then.
    """

    t: float
    ped_x: float
    ped_y: float
    head_x: float
    head_y: float
    head_z: float
    ped_speed: float = 0.0


@dataclass(frozen=True)
class Trial:
    """An annotated pedestrian trajectory.

    ``curb_y`` is the waiting side of the road, ``far_y`` the opposite side.
    ``crossing_start_idx``/``crossing_end_idx`` bound the committed crossing
    (false starts excluded) and are ``None`` when the pedestrian never
    completes a crossing.  ``wait_time`` is the time from the first frame to
    crossing onset, or the full trial duration when there is no crossing.
    """

    id: str
    frames: tuple[TrialFrame, ...]
    curb_y: float
    far_y: float
    crossing_start_idx: Optional[int] = None
    crossing_end_idx: Optional[int] = None
    wait_time: float = 0.0

    def __post_init__(self) -> None:
        validate_trial(self)

    @property
    def duration(self) -> float:
        return self.frames[-1].t - self.frames[0].t

    def frame_count(self) -> int:
        return len(self.frames)


def validate_trial(trial: Trial) -> None:
    """Raise ValueError if any Trial invariant is violated."""
    frames = trial.frames
    if not frames:
        raise ValueError(f"trial {trial.id}: no frames")
    if trial.far_y == trial.curb_y:
        raise ValueError(f"trial {trial.id}: curb_y equals far_y")
    prev_t = frames[0].t
    for i, f in enumerate(frames[1:], start=1):
        dt = f.t - prev_t
        if dt <= 0.0:
            raise ValueError(f"trial {trial.id}: non-increasing t at frame {i}")
        if not (FRAME_DT_MIN - FRAME_DT_EPS <= dt <= FRAME_DT_MAX + FRAME_DT_EPS):
            raise ValueError(
                f"trial {trial.id}: frame spacing {dt:.4f} s at frame {i} "
                f"outside [{FRAME_DT_MIN}, {FRAME_DT_MAX}]"
            )
        prev_t = f.t
    for i, f in enumerate(frames):
        if not (0.0 <= f.ped_speed <= MAX_PED_SPEED):
            raise ValueError(f"trial {trial.id}: ped_speed out of range at frame {i}")
        norm = math.sqrt(f.head_x**2 + f.head_y**2 + f.head_z**2)
        if not (HEAD_NORM_MIN <= norm <= HEAD_NORM_MAX):
            raise ValueError(f"trial {trial.id}: head norm {norm:.3f} at frame {i}")
    if abs(frames[0].ped_y - trial.curb_y) >= 1.0:
        raise ValueError(f"trial {trial.id}: first frame not on the waiting side")
    start, end = trial.crossing_start_idx, trial.crossing_end_idx
    if (start is None) != (end is None):
        raise ValueError(f"trial {trial.id}: crossing indices must be set together")
    if start is not None:
        if not (0 <= start < end < len(frames)):
            raise ValueError(f"trial {trial.id}: bad crossing indices ({start}, {end})")
        onset = frames[start].t - frames[0].t
        if abs(trial.wait_time - onset) > FRAME_DT_MAX:
            raise ValueError(
                f"trial {trial.id}: wait_time {trial.wait_time:.3f} disagrees with "
                f"crossing onset {onset:.3f}"
            )


@dataclass(frozen=True)
class SynthParams:
    """Parameters of the synthetic trial generator.

    Defaults model a two-lane (7 m) road, naturalistic waiting times, and
    occasional false starts where the pedestrian steps out, changes their
    mind, and returns to the curb before crossing for real.
    """

    wait_time_range: tuple[float, float] = (2.0, 20.0)
    walk_speed_range: tuple[float, float] = (1.0, 1.7)
    false_start_prob: float = 0.15
    head_scan_period_range: tuple[float, float] = (1.5, 4.0)
    road_width: float = 7.0
    frame_dt: float = GRID_DT
    duration_max: float = 60.0

    def __post_init__(self) -> None:
        for name in ("wait_time_range", "walk_speed_range", "head_scan_period_range"):
            lo, hi = getattr(self, name)
            if not (0.0 <= lo <= hi):
                raise ValueError(f"{name} must be a nonempty nonnegative range")
        if not (0.0 <= self.false_start_prob <= 1.0):
            raise ValueError("false_start_prob must be in [0, 1]")
        if self.walk_speed_range[0] <= 0.0:
            raise ValueError("walk speeds must be positive")
        if self.walk_speed_range[1] > MAX_PED_SPEED:
            raise ValueError(f"walk speeds above {MAX_PED_SPEED} m/s are not allowed")
        if self.road_width <= 0.0 or self.frame_dt <= 0.0 or self.duration_max <= 0.0:
            raise ValueError("road_width, frame_dt, duration_max must be positive")


# ---------------------------------------------------------------------------
# Loading and saving


def _parse_meta(path: Path) -> dict[str, str]:
    meta: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise TrialParseError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def load_trial_file(csv_path: Path | str) -> Trial:
    """Load one trial from ``<id>.csv`` and its ``<id>.meta`` sidecar.

    Head directions are renormalized to unit norm.  Frames recorded off the
    nominal 0.1 s grid are resampled onto it by linear interpolation, in
    which case any sidecar crossing annotations are discarded and the trial
    is re-annotated from geometry.
    """
    csv_path = Path(csv_path)
    meta_path = csv_path.with_suffix(".meta")
    if not csv_path.is_file():
        raise FileNotFoundError(f"trial file not found: {csv_path}")
    if not meta_path.is_file():
        raise TrialParseError(f"{csv_path}: missing sidecar {meta_path.name}")

    lines = csv_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise TrialParseError(f"{csv_path}:1: expected header '{CSV_HEADER}'")

    rows: list[tuple[float, ...]] = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise TrialParseError(f"{csv_path}:{lineno}: expected 6 columns, got {len(parts)}")
        try:
            vals = tuple(float(p) for p in parts)
        except ValueError as exc:
            raise TrialParseError(f"{csv_path}:{lineno}: {exc}") from None
        if rows and vals[0] <= rows[-1][0]:
            raise TrialParseError(f"{csv_path}:{lineno}: non-monotone timestamp {vals[0]}")
        if rows:
            dt = vals[0] - rows[-1][0]
            if not (FRAME_DT_MIN - FRAME_DT_EPS <= dt <= FRAME_DT_MAX + FRAME_DT_EPS):
                raise TrialParseError(
                    f"{csv_path}:{lineno}: frame spacing {dt:.4f} s outside "
                    f"[{FRAME_DT_MIN}, {FRAME_DT_MAX}]"
                )
        norm = math.sqrt(vals[3] ** 2 + vals[4] ** 2 + vals[5] ** 2)
        if not (HEAD_NORM_MIN <= norm <= HEAD_NORM_MAX):
            raise TrialParseError(f"{csv_path}:{lineno}: head norm {norm:.3f} out of range")
        rows.append(vals)
    if len(rows) < 2:
        raise TrialParseError(f"{csv_path}: fewer than 2 frames")

    meta = _parse_meta(meta_path)
    try:
        curb_y = float(meta["curb_y"])
        far_y = float(meta["far_y"])
    except KeyError as exc:
        raise TrialParseError(f"{meta_path}: missing key {exc}") from None

    arr = np.asarray(rows, dtype=np.float64)
    t = arr[:, 0]
    resampled = bool(np.max(np.abs(np.diff(t) - GRID_DT)) > 1e-9)
    if resampled:
        grid = t[0] + GRID_DT * np.arange(int(math.floor((t[-1] - t[0]) / GRID_DT)) + 1)
        cols = [np.interp(grid, t, arr[:, j]) for j in range(1, 6)]
        arr = np.column_stack([grid] + cols)

    frames = []
    for row in arr:
        hx, hy, hz = row[3], row[4], row[5]
        norm = math.sqrt(hx * hx + hy * hy + hz * hz)
        frames.append(
            TrialFrame(
                t=float(row[0]),
                ped_x=float(row[1]),
                ped_y=float(row[2]),
                head_x=float(hx / norm),
                head_y=float(hy / norm),
                head_z=float(hz / norm),
            )
        )

    start = end = None
    if not resampled and "crossing_start_idx" in meta and "crossing_end_idx" in meta:
        start = int(meta["crossing_start_idx"])
        end = int(meta["crossing_end_idx"])
    wait = (frames[start].t - frames[0].t) if start is not None else frames[-1].t - frames[0].t
    try:
        trial = Trial(
            id=csv_path.stem,
            frames=tuple(frames),
            curb_y=curb_y,
            far_y=far_y,
            crossing_start_idx=start,
            crossing_end_idx=end,
            wait_time=wait,
        )
    except TrialParseError:
        raise
    except ValueError as exc:
        raise TrialParseError(f"{csv_path}: {exc}") from None
    if resampled:
        trial = annotate_crossing(trial, DEFAULT_ENTRY_THRESHOLD)
    return trial


def load_trials(path: Path | str) -> list[Trial]:
    """Load every ``*.csv`` trial in a directory, sorted by filename."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"trial directory not found: {path}")
    return [load_trial_file(p) for p in sorted(path.glob("*.csv"))]


def save_trial(trial: Trial, out_dir: Path | str) -> Path:
    """Write ``<id>.csv`` and ``<id>.meta``; returns the CSV path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{trial.id}.csv"
    lines = [CSV_HEADER]
    for f in trial.frames:
        lines.append(
            ",".join(_fmt(v) for v in (f.t, f.ped_x, f.ped_y, f.head_x, f.head_y, f.head_z))
        )
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    meta = [f"curb_y={_fmt(trial.curb_y)}", f"far_y={_fmt(trial.far_y)}"]
    if trial.crossing_start_idx is not None:
        meta.append(f"crossing_start_idx={trial.crossing_start_idx}")
        meta.append(f"crossing_end_idx={trial.crossing_end_idx}")
    csv_path.with_suffix(".meta").write_text("\n".join(meta) + "\n", encoding="utf-8")
    return csv_path


# ---------------------------------------------------------------------------
# Synthesis


def _head_vector(angle: float, tilt: float = -0.1) -> tuple[float, float, float]:
    # angle is measured from the crossing direction (+y); tilt looks
    # slightly down, as recorded head vectors do.
    hx, hy, hz = math.sin(angle), math.cos(angle), tilt
    norm = math.sqrt(hx * hx + hy * hy + hz * hz)
    return hx / norm, hy / norm, hz / norm


def generate_synthetic_trial(
    rng: np.random.Generator, params: SynthParams, trial_id: str = "synth"
) -> Trial:
    """Generate one annotated trial; identical seeds give identical trials.

    The pedestrian waits at the curb with positional dither, scanning left
    and right, for a drawn wait time; with probability ``false_start_prob``
    one false start occurs (at most 1 m into the road, then back to the
    curb); the committed crossing proceeds at a drawn walking speed with
    +/-10% per-frame variation.  Crossing annotations are recorded from the
    construction itself, not re-detected, so they serve as ground truth for
    :func:`annotate_crossing`.
    """
    wait = rng.uniform(*params.wait_time_range)
    speed = rng.uniform(*params.walk_speed_range)
    scan_period = rng.uniform(*params.head_scan_period_range)
    scan_phase = rng.uniform(0.0, 2.0 * math.pi)
    false_start = rng.random() < params.false_start_prob
    if false_start:
        fs_at = wait * rng.uniform(0.25, 0.65)
        fs_depth = rng.uniform(0.3, 0.9)
    x0 = rng.uniform(-0.5, 0.5)

    curb_y, far_y = 0.0, params.road_width
    dt = params.frame_dt
    tail = 0.5

    # Worst case for this draw: wait plus the false-start excursion plus the
    # crossing itself (slowest per-frame factor 0.9) plus the tail.
    cross_time = params.road_width / (0.9 * speed)
    fs_time = (2.0 * fs_depth / speed) if false_start else 0.0
    if wait + fs_time + cross_time + tail > params.duration_max:
        raise GenerationError(
            f"duration_max={params.duration_max}s cannot fit wait {wait:.1f}s "
            f"plus a {cross_time:.1f}s crossing"
        )

    frames: list[TrialFrame] = []
    start_idx: Optional[int] = None
    end_idx: Optional[int] = None

    mode = "wait"
    y = 0.0
    waited = 0.0  # waiting time consumed, excluding the excursion
    fs_done = not false_start
    t = 0.0
    k = 0
    tail_until = math.inf
    while True:
        if t > params.duration_max:
            raise GenerationError("trial exceeded duration_max during synthesis")
        if mode == "wait":
            px = x0 + rng.normal(0.0, 0.02)
            py = rng.normal(0.0, 0.02)
            angle = 1.2 * math.sin(2.0 * math.pi * t / scan_period + scan_phase)
        else:
            px = x0
            py = y
            angle = rng.normal(0.0, 0.05)
        hx, hy, hz = _head_vector(angle)
        frames.append(TrialFrame(t=t, ped_x=px, ped_y=py, head_x=hx, head_y=hy, head_z=hz))

        if mode == "cross":
            if start_idx is None and y >= DEFAULT_ENTRY_THRESHOLD:
                start_idx = k
            if end_idx is None and y >= far_y:
                end_idx = k
                mode = "tail"
                tail_until = t + tail
        elif mode == "tail" and t >= tail_until:
            break

        # Advance to the next frame.
        if mode == "wait":
            waited += dt
            if not fs_done and waited >= fs_at:
                mode = "fs_out"
            elif waited >= wait:
                mode = "cross"
        elif mode == "fs_out":
            y += speed * dt
            if y >= fs_depth:
                mode = "fs_back"
        elif mode == "fs_back":
            y -= speed * dt
            if y <= 0.05:
                y = max(y, 0.0)
                fs_done = True
                mode = "wait"
        elif mode in ("cross", "tail"):
            y += speed * rng.uniform(0.9, 1.1) * dt
        t += dt
        k += 1

    # The entry threshold is always hit strictly after onset, so indices are
    # guaranteed; the duration guard above makes non-completion impossible.
    assert start_idx is not None and end_idx is not None
    return Trial(
        id=trial_id,
        frames=tuple(frames),
        curb_y=curb_y,
        far_y=far_y,
        crossing_start_idx=start_idx,
        crossing_end_idx=end_idx,
        wait_time=frames[start_idx].t - frames[0].t,
    )


# ---------------------------------------------------------------------------
# Annotation and derived quantities


def annotate_crossing(trial: Trial, entry_threshold: float = DEFAULT_ENTRY_THRESHOLD) -> Trial:
    """Locate the committed crossing from geometry alone.

    The crossing starts at the first frame at least ``entry_threshold``
    meters past the curb from which the pedestrian reaches the far side
    without first returning to the curb (within ``CURB_RETURN_MARGIN``);
    false starts are thereby excluded.  It ends at the first frame at or
    beyond ``far_y``.  Both indices are absent when no crossing completes.
    """
    if not trial.frames:
        raise ValueError("annotate_crossing: trial has no frames")
    if entry_threshold <= 0.0:
        raise ValueError("entry_threshold must be positive")
    sign = 1.0 if trial.far_y > trial.curb_y else -1.0
    progress = [(f.ped_y - trial.curb_y) * sign for f in trial.frames]
    width = (trial.far_y - trial.curb_y) * sign

    start = end = None
    n = len(progress)
    for i in range(n):
        if progress[i] < entry_threshold:
            continue
        for j in range(i, n):
            if progress[j] >= width:
                start, end = i, j
                break
            if progress[j] <= CURB_RETURN_MARGIN:
                break  # returned to the curb: a false start, try later frames
        if start is not None:
            break

    wait = (
        trial.frames[start].t - trial.frames[0].t
        if start is not None
        else trial.frames[-1].t - trial.frames[0].t
    )
    return replace(
        trial, crossing_start_idx=start, crossing_end_idx=end, wait_time=wait
    )


def derive_speeds(trial: Trial) -> Trial:
    """Fill ``ped_speed`` from consecutive positions, clamped to [0, 3] m/s."""
    if len(trial.frames) < 2:
        raise ValueError("derive_speeds: need at least 2 frames")
    speeds = [0.0]
    prev = trial.frames[0]
    for f in trial.frames[1:]:
        d = math.hypot(f.ped_x - prev.ped_x, f.ped_y - prev.ped_y)
        s = d / (f.t - prev.t)
        speeds.append(min(max(s, 0.0), MAX_PED_SPEED))
        prev = f
    speeds[0] = speeds[1]
    frames = tuple(replace(f, ped_speed=s) for f, s in zip(trial.frames, speeds))
    return replace(trial, frames=frames)


def split_trials(
    trials: Sequence[Trial], train_fraction: float, seed: int
) -> tuple[list[Trial], list[Trial]]:
    """Disjoint seeded shuffle-split with |train| = round(fraction * N)."""
    if not trials:
        raise ValueError("split_trials: empty trial list")
    if not (0.0 < train_fraction < 1.0):
        raise ValueError("train_fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(trials))
    n_train = int(round(train_fraction * len(trials)))
    train = [trials[i] for i in order[:n_train]]
    test = [trials[i] for i in order[n_train:]]
    return train, test
