"""Sampling planners for closed-loop runs.

Candidates are constant-curvature arcs, optionally blended with a smooth
lateral shift, scored with the occupancy reward and picked greedily.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import DEFAULT_RATE_HZ, EgoPose, Trajectory, wrap_angle
from .occupancy import OccupancySequence, SemanticOccupancyGrid
from .reward import EgoFootprint, RewardParams, waypoint_reward


@dataclass(frozen=True)
class PlannerConfig:
    n_candidates: int = 64
    horizon_steps: int = 24
    speeds: tuple = (8.0, 5.0)
    max_curvature: float = 0.04
    n_curvatures: int = 3
    lateral_offsets: tuple = (-3.5, -1.75, 0.0, 1.75, 3.5)
    lane_change_s: float = 1.5
    rate_hz: float = DEFAULT_RATE_HZ
    seed: int = 0

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.horizon_steps < 1 or self.n_curvatures < 1:
            raise ValueError("horizon_steps and n_curvatures must be >= 1")
        if self.max_curvature < 0:
            raise ValueError("curvature bounds are symmetric: max_curvature must be >= 0")
        if any(s < 0 for s in self.speeds) or not self.speeds:
            raise ValueError("speed set must be non-empty and non-negative")
        object.__setattr__(self, "speeds", tuple(float(s) for s in self.speeds))
        object.__setattr__(self, "lateral_offsets", tuple(float(o) for o in self.lateral_offsets) or (0.0,))

    @property
    def curvatures(self) -> tuple:
        if self.n_curvatures == 1:
            return (0.0,)
        return tuple(float(k) for k in np.linspace(-self.max_curvature, self.max_curvature, self.n_curvatures))

    @classmethod
    def from_mapping(cls, doc: dict) -> "PlannerConfig":
        doc = dict(doc)
        for key in ("speeds", "lateral_offsets"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def static_trajectory(start: EgoPose, horizon_steps: int, rate_hz: float = DEFAULT_RATE_HZ) -> Trajectory:
    """``horizon_steps`` future waypoints that stay at ``start`` with zero speed."""
    if horizon_steps < 1:
        raise ValueError("horizon must be >= 1")
    poses = tuple(
        EgoPose(start.t + k / rate_hz, start.x, start.y, start.yaw, 0.0) for k in range(1, horizon_steps + 1)
    )
    return Trajectory(poses, rate_hz)


def arc_trajectory(
    start: EgoPose,
    speed: float,
    curvature: float,
    horizon_steps: int,
    rate_hz: float = DEFAULT_RATE_HZ,
    lateral_offset: float = 0.0,
    lane_change_s: float = 1.5,
) -> Trajectory:
    """Constant-speed, constant-curvature arc from ``start`` plus a smoothstep
    lateral shift (perpendicular to the start heading) completed after
    ``lane_change_s`` seconds. Yaw follows the path tangent; speed is nominal."""
    tau = np.arange(1, horizon_steps + 1) / rate_hz
    s = speed * tau
    if curvature == 0.0:
        fx, fy, heading = s, np.zeros_like(s), np.zeros_like(s)
    else:
        heading = curvature * s
        fx, fy = np.sin(heading) / curvature, (1.0 - np.cos(heading)) / curvature
    vx, vy = speed * np.cos(heading), speed * np.sin(heading)
    if lateral_offset != 0.0:
        T = max(lane_change_s, 1e-9)
        x = np.clip(tau / T, 0.0, 1.0)
        fy = fy + lateral_offset * (3 * x**2 - 2 * x**3)
        vy = vy + np.where(tau < T, lateral_offset * (6 * x - 6 * x**2) / T, 0.0)
    yaw_local = np.arctan2(vy, vx) if speed > 0 or lateral_offset != 0.0 else np.zeros_like(s)
    c, sn = math.cos(start.yaw), math.sin(start.yaw)
    wx = start.x + c * fx - sn * fy
    wy = start.y + sn * fx + c * fy
    yaw = wrap_angle(start.yaw + yaw_local)
    poses = tuple(
        EgoPose(start.t + float(t), float(x), float(y), float(a), float(speed))
        for t, x, y, a in zip(tau, wx, wy, yaw)
    )
    return Trajectory(poses, rate_hz)


def sample_candidates(start: EgoPose, cfg: PlannerConfig) -> list:
    """Arcs over speeds x curvatures x lateral offsets.

    Arcs that would turn through more than a full circle are dropped. When
    more than ``n_candidates`` remain, a seeded subset is kept; the first
    (lowest-curvature, zero-offset) candidate is always retained.
    """
    horizon_s = cfg.horizon_steps / cfg.rate_hz
    specs = []
    curvs = sorted(cfg.curvatures, key=lambda k: (abs(k), k))
    offsets = sorted(cfg.lateral_offsets, key=lambda o: (abs(o), o))
    for off in offsets:
        for k in curvs:
            for v in cfg.speeds:
                if abs(v * horizon_s * k) > 2.0 * math.pi:
                    continue
                specs.append((v, k, off))
    if len(specs) > cfg.n_candidates:
        rng = np.random.default_rng(cfg.seed)
        keep = np.sort(rng.choice(np.arange(1, len(specs)), size=cfg.n_candidates - 1, replace=False))
        specs = [specs[0]] + [specs[i] for i in keep]
    return [
        arc_trajectory(start, v, k, cfg.horizon_steps, cfg.rate_hz, off, cfg.lane_change_s) for v, k, off in specs
    ]


def path_curvature(traj: Trajectory) -> float:
    """Total absolute heading change per meter travelled (0 for a stationary path)."""
    if len(traj) < 2:
        return 0.0
    yaw = np.array([p.yaw for p in traj])
    turn = float(np.abs(wrap_angle(np.diff(yaw))).sum())
    length = traj.length()
    return turn / length if length > 0 else 0.0


def score_trajectory(world, traj: Trajectory, footprint=None, params=None) -> tuple:
    """Breakdowns and mean total of ``traj`` against a sequence or a static grid."""
    if isinstance(world, SemanticOccupancyGrid):
        out = [waypoint_reward(world, p, footprint, params) for p in traj]
    else:
        out = [waypoint_reward(world.nearest(p.t), p, footprint, params) for p in traj]
    return out, float(np.mean([b.total for b in out]))


def select_best(
    candidates: Sequence[Trajectory],
    world: OccupancySequence | SemanticOccupancyGrid,
    footprint: EgoFootprint | None = None,
    params: RewardParams | None = None,
):
    """Candidate with the highest mean reward; ties go to lower path curvature,
    then to the earlier candidate. ``world`` may be a single grid, treated as
    static over the candidate horizon."""
    if not candidates:
        raise ValueError("no candidates to select from")
    best_key, best = None, None
    for i, traj in enumerate(candidates):
        _, avg = score_trajectory(world, traj, footprint, params)
        key = (-avg, path_curvature(traj), i)
        if best_key is None or key < best_key:
            best_key, best = key, (traj, avg)
    return best


# -- planners used by the closed loop ----------------------------------------------


class ArcGreedyPlanner:
    name = "arc-greedy"

    def __init__(self, cfg: PlannerConfig | None = None):
        self.cfg = cfg or PlannerConfig()

    def reset(self, scenario) -> None:
        pass

    def plan(self, ego: EgoPose, context: Sequence, scenario) -> Trajectory:
        candidates = sample_candidates(ego, self.cfg)
        traj, _ = select_best(candidates, context[-1].grid, scenario.footprint, scenario.reward)
        return traj


class StraightPlanner:
    """Keeps the current heading and the scenario's initial speed."""

    name = "straight"

    def __init__(self, cfg: PlannerConfig | None = None):
        self.cfg = cfg or PlannerConfig()
        self.speed = None

    def reset(self, scenario) -> None:
        self.speed = scenario.initial_ego.speed

    def plan(self, ego: EgoPose, context: Sequence, scenario) -> Trajectory:
        speed = ego.speed if self.speed is None else self.speed
        return arc_trajectory(ego, speed, 0.0, self.cfg.horizon_steps, self.cfg.rate_hz)


class StaticPlanner:
    name = "static"

    def __init__(self, cfg: PlannerConfig | None = None):
        self.cfg = cfg or PlannerConfig()

    def plan(self, ego: EgoPose, context: Sequence, scenario) -> Trajectory:
        return static_trajectory(ego, self.cfg.horizon_steps, self.cfg.rate_hz)


class ReplayPlanner:
    """Plays back the recorded waypoints that lie after the current time."""

    name = "replay"

    def __init__(self, recorded: Trajectory, tol: float = 1e-6):
        self.recorded = recorded
        self.tol = tol

    def plan(self, ego: EgoPose, context: Sequence, scenario) -> Trajectory:
        rest = tuple(p for p in self.recorded if p.t > ego.t + self.tol)
        if not rest:
            raise ValueError(f"recorded trajectory has no waypoints after t={ego.t}")
        return Trajectory(rest, self.recorded.rate_hz)


PLANNERS = {
    "arc-greedy": ArcGreedyPlanner,
    "straight": StraightPlanner,
    "static": StaticPlanner,
}


def make_planner(name: str, cfg: PlannerConfig | None = None):
    try:
        return PLANNERS[name](cfg)
    except KeyError:
        raise ValueError(f"unknown planner {name!r}; choose from {sorted(PLANNERS)}") from None
