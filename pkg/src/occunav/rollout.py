"""Flexible-forcing noise, auto-regressive window planning and the closed loop.

Corruption adds independent multi-level noise to a (frames, views, ...) stack:
``x[i, j] + alpha[i] * eps_frame[i] + beta[j] * eps_view[j]``. ``eps_frame`` is
drawn once per frame and shared by its views, ``eps_view`` once per view and
shared across frames, so each cell's residual has variance
``alpha[i]**2 + beta[j]**2``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np

from .geometry import Trajectory
from .occupancy import OccupancySequence, SemanticOccupancyGrid
from .raymap import NormalizationConfig, RayMap, normalized_raymap
from .reward import RewardBreakdown, waypoint_reward

FRAME_MODE = "frame"
CLIP_MODE = "clip"

TERM_HORIZON = "horizon"
TERM_COLLISION = "collision"
TERM_OFF_DRIVABLE = "off_drivable"


class GeneratorError(RuntimeError):
    """A world generator could not produce the requested frames."""


class ScenarioExhausted(GeneratorError):
    """Playback ran out of stored frames before the horizon."""


# -- noise ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    frame_levels: np.ndarray
    view_levels: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        a = np.asarray(self.frame_levels, dtype=np.float64).ravel()
        b = np.asarray(self.view_levels, dtype=np.float64).ravel()
        for name, v in (("frame", a), ("view", b)):
            if v.size < 1:
                raise ValueError(f"{name} levels must be non-empty")
            if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} levels must lie in [0, 1]")
        object.__setattr__(self, "frame_levels", a)
        object.__setattr__(self, "view_levels", b)

    @property
    def n_frames(self) -> int:
        return self.frame_levels.size

    @property
    def n_views(self) -> int:
        return self.view_levels.size

    @classmethod
    def constant(cls, n_frames: int, n_views: int, alpha: float, beta: float) -> "NoiseSchedule":
        return cls(np.full(n_frames, alpha), np.full(n_views, beta))


def _draw_levels(rng: np.random.Generator, n: int, distribution) -> np.ndarray:
    if callable(distribution):
        return np.clip(np.asarray(distribution(rng, n), dtype=np.float64), 0.0, 1.0)
    if isinstance(distribution, (int, float)):
        return np.full(n, float(distribution))
    if distribution == "uniform":
        return rng.uniform(0.0, 1.0, size=n)
    if isinstance(distribution, tuple) and distribution[0] == "uniform":
        _, lo, hi = distribution
        return rng.uniform(lo, hi, size=n)
    raise ValueError(f"unknown level distribution {distribution!r}")


def sample_noise_schedule(n_frames: int, n_views: int, seed: int = 0, level_distribution="uniform") -> NoiseSchedule:
    """Independent per-frame and per-view noise levels.

    ``level_distribution`` is ``"uniform"`` (on [0, 1]), ``("uniform", lo, hi)``,
    a constant number, or ``callable(rng, n) -> levels``.
    """
    if n_frames < 1 or n_views < 1:
        raise ValueError("schedule extents must be >= 1")
    rng = np.random.default_rng(seed)
    alpha = _draw_levels(rng, n_frames, level_distribution)
    beta = _draw_levels(rng, n_views, level_distribution)
    return NoiseSchedule(alpha, beta, seed)


def corrupt(states: np.ndarray, schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Return a noised copy of a ``(frames, views, ...)`` stack.

    Cells whose frame and view levels are both zero are copied unchanged.
    """
    x = np.asarray(states)
    if x.ndim < 2 or x.shape[:2] != (schedule.n_frames, schedule.n_views):
        raise ValueError(
            f"stack leading shape {x.shape[:2]} does not match schedule ({schedule.n_frames}, {schedule.n_views})"
        )
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    cell = x.shape[2:]
    eps_frame = rng.standard_normal((schedule.n_frames, *cell))
    eps_view = rng.standard_normal((schedule.n_views, *cell))
    out = x.astype(dtype, copy=True)
    for i, a in enumerate(schedule.frame_levels):
        for j, b in enumerate(schedule.view_levels):
            if a == 0.0 and b == 0.0:
                continue
            out[i, j] = x[i, j] + a * eps_frame[i] + b * eps_view[j]
    return out


# -- window planning --------------------------------------------------------------


@dataclass(frozen=True)
class RolloutPlan:
    """Auto-regressive schedule.

    Frame mode emits one frame from up to ``context`` previous frames; clip
    mode emits up to ``horizon`` frames from up to ``context`` frames.
    """

    mode: str = FRAME_MODE
    context: int = 4
    horizon: int = 1
    total_frames: int = 2

    def __post_init__(self):
        if self.mode not in (FRAME_MODE, CLIP_MODE):
            raise ValueError(f"mode must be {FRAME_MODE!r} or {CLIP_MODE!r}, got {self.mode!r}")
        if self.context < 1 or self.horizon < 1 or self.total_frames < 1:
            raise ValueError("context, horizon and total_frames must be >= 1")

    def window(self, t: int):
        if self.mode == FRAME_MODE:
            ctx, out = plan_frame_ar(t, self.context, self.total_frames)
            return ctx, [out]
        return plan_clip_ar(t, self.context, self.horizon, self.total_frames)

    def windows(self) -> Iterator[tuple]:
        """All ``(context, outputs)`` windows from frame 0 to the end."""
        t = 0
        while t < self.total_frames - 1:
            ctx, outs = self.window(t)
            yield ctx, outs
            t = outs[-1]


def plan_frame_ar(t: int, K: int, total: int):
    """Context ``[max(0, t-K+1) .. t]`` and the single output ``t+1``."""
    if t < 0 or K < 1:
        raise ValueError("need t >= 0 and K >= 1")
    if t + 1 >= total:
        raise ValueError(f"no frame left to generate after t={t} (total={total})")
    return list(range(max(0, t - K + 1), t + 1)), t + 1


def plan_clip_ar(t: int, M: int, L: int, total: int):
    """Context of the last ``min(M, t+1)`` frames and outputs ``t+1 .. min(t+L, total-1)``."""
    if t < 0 or M < 1 or L < 1:
        raise ValueError("need t >= 0, M >= 1 and L >= 1")
    if t + 1 > total - 1:
        raise ValueError(f"no frame left to generate after t={t} (total={total})")
    return list(range(max(0, t - M + 1), t + 1)), list(range(t + 1, min(t + L, total - 1) + 1))


# -- generators --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WorldState:
    grid: SemanticOccupancyGrid
    depth_maps: tuple | None = None
    semantic_maps: tuple | None = None


class WorldGenerator(Protocol):
    def reset(self) -> WorldState: ...

    def step(self, context: Sequence[WorldState], conditioning: RayMap, context_noise: float = 0.0) -> list: ...


class PlaybackGenerator:
    """Replays a stored occupancy sequence, one frame per conditioning frame.

    Stored depth maps, when present, can be perturbed with :func:`corrupt`
    at a fixed level (``depth_noise``) to exercise noisy-history paths.
    ``context_noise`` is accepted for interface compatibility; playback
    output does not depend on the context.
    """

    def __init__(
        self,
        sequence: OccupancySequence,
        depth_maps: Sequence | None = None,
        semantic_maps: Sequence | None = None,
        depth_noise: float = 0.0,
        seed: int = 0,
    ):
        self.sequence = sequence
        self.depth_maps = depth_maps
        self.semantic_maps = semantic_maps
        self.depth_noise = depth_noise
        self.seed = seed
        self.reset()

    def _state(self, i: int) -> WorldState:
        depth = sem = None
        if self.depth_maps is not None:
            depth = np.asarray(self.depth_maps[i], dtype=np.float64)
            if self.depth_noise > 0:
                sched = NoiseSchedule.constant(1, depth.shape[0], self.depth_noise, 0.0)
                depth = corrupt(depth[None], sched, self._rng)[0]
            depth = tuple(depth)
        if self.semantic_maps is not None:
            sem = tuple(np.asarray(self.semantic_maps[i]))
        return WorldState(self.sequence.grids[i], depth, sem)

    def reset(self) -> WorldState:
        self._rng = np.random.default_rng(self.seed)
        self.cursor = 0
        return self._state(0)

    def step(self, context: Sequence[WorldState], conditioning: RayMap, context_noise: float = 0.0) -> list:
        n = conditioning.n_frames
        if self.cursor + n >= len(self.sequence):
            raise ScenarioExhausted(
                f"playback has {len(self.sequence) - 1 - self.cursor} frames left, {n} requested"
            )
        out = [self._state(self.cursor + k) for k in range(1, n + 1)]
        self.cursor += n
        return out


# -- closed loop ---------------------------------------------------------------------


@dataclass(frozen=True)
class TerminationPolicy:
    on_collision: bool = True
    on_off_drivable: bool = True


@dataclass(frozen=True)
class PassCriterion:
    allow_collision: bool = False
    allow_off_drivable: bool = False


@dataclass
class EpisodeLog:
    scenario_id: str
    planner: str
    poses: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    latencies: list = field(default_factory=list)
    termination: str = TERM_HORIZON
    horizon: int = 0
    seed: int = 0

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def average_reward(self) -> float:
        return float(np.mean([b.total for b in self.rewards])) if self.rewards else float("nan")

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(tuple(self.poses))

    def passed(self, criterion: PassCriterion | None = None) -> bool:
        criterion = criterion or PassCriterion()
        if self.termination != TERM_HORIZON:
            return False
        if not criterion.allow_collision and any(b.collided for b in self.rewards):
            return False
        if not criterion.allow_off_drivable and any(b.off_drivable for b in self.rewards):
            return False
        return True

    def to_dict(self, include_timing: bool = False, criterion: PassCriterion | None = None) -> dict:
        steps = []
        for p, b in zip(self.poses, self.rewards):
            steps.append(
                {
                    "t": p.t, "x": p.x, "y": p.y, "yaw": p.yaw, "speed": p.speed, "reverse": p.reverse,
                    **b.as_dict(),
                }
            )
        doc = {
            "scenario": self.scenario_id,
            "planner": self.planner,
            "seed": self.seed,
            "horizon": self.horizon,
            "termination": self.termination,
            "length": len(self),
            "average_reward": self.average_reward,
            "passed": self.passed(criterion),
            "steps": steps,
        }
        if include_timing:
            doc["latency_s"] = list(self.latencies)
        return doc

    def to_json(self, include_timing: bool = False, criterion: PassCriterion | None = None) -> str:
        return json.dumps(self.to_dict(include_timing, criterion), sort_keys=True, indent=1) + "\n"


def run_closed_loop(
    generator: WorldGenerator,
    planner,
    scenario,
    horizon: int | None = None,
    plan: RolloutPlan | None = None,
    reward_fn: Callable[..., RewardBreakdown] = waypoint_reward,
) -> EpisodeLog:
    """Plan, generate and score until the horizon or a terminating event.

    Each cycle the planner proposes a segment from the current pose and the
    context states; the first ``len(outputs)`` waypoints are encoded as a
    normalized ray-map window and handed to the generator, and each executed
    waypoint is scored against the state generated for its frame.
    """
    horizon = scenario.horizon if horizon is None else horizon
    plan = plan or scenario.plan
    plan = replace(plan, total_frames=horizon + 1)
    times = scenario.timestamps(horizon + 1)
    log = EpisodeLog(scenario.scenario_id, getattr(planner, "name", type(planner).__name__),
                     horizon=horizon, seed=scenario.seed)
    history = [generator.reset()]
    ego = replace(scenario.initial_ego, t=times[0])
    if hasattr(planner, "reset"):
        planner.reset(scenario)
    norm = NormalizationConfig(anchor="frame")
    for ctx, outs in plan.windows():
        segment = planner.plan(ego, [history[i] for i in ctx], scenario)
        if len(segment) < len(outs):
            raise ValueError(f"planner returned {len(segment)} waypoints, window needs {len(outs)}")
        executed = [replace(segment[k], t=times[o]) for k, o in enumerate(outs)]
        window = normalized_raymap(scenario.rig, Trajectory(tuple(executed)), *scenario.raymap_hw, norm)
        start = time.perf_counter()
        try:
            states = generator.step([history[i] for i in ctx], window, scenario.context_noise)
        except GeneratorError:
            raise
        except Exception as exc:  # surface arbitrary generator faults uniformly
            raise GeneratorError(f"generator failed at frame {outs[0]}: {exc}") from exc
        log.latencies.append(time.perf_counter() - start)
        if len(states) != len(outs):
            raise GeneratorError(f"generator returned {len(states)} frames, plan expects {len(outs)}")
        stop = None
        for wp, state in zip(executed, states):
            b = reward_fn(state.grid, wp, scenario.footprint, scenario.reward)
            log.poses.append(wp)
            log.rewards.append(b)
            if b.collided and scenario.termination.on_collision:
                stop = TERM_COLLISION
            elif b.off_drivable and scenario.termination.on_off_drivable:
                stop = TERM_OFF_DRIVABLE
            if stop:
                break
        history.extend(states)
        ego = executed[-1]
        if stop:
            log.termination = stop
            break
    return log
