"""Occupancy-grounded dense driving rewards.

Each waypoint is scored by three penalties that are all <= 0:

* collision: ``-alpha_col * I_col * |v|``, where ``I_col`` flags any obstacle
  voxel inside the ego footprint box;
* boundary: ``-alpha_bd * I_offroad``, where ``I_offroad`` flags any probe
  (footprint corners and center, just below ground level) that is not on a
  drivable-surface voxel;
* velocity: ``-alpha_vel * tanh(|v - v_target|) * I_v``, where ``I_v`` flags
  speeds outside ``[v_min, v_max]``.

The combined score is ``1 + (r_col + r_bd + r_vel) / n_reward``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .geometry import EgoPose, Trajectory
from .occupancy import (
    OccupancySequence,
    OrientedBox,
    SemanticOccupancyGrid,
    labels_at,
    query_box,
)

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class RewardParams:
    alpha_col: float = 1.0
    alpha_bd: float = 0.5
    alpha_vel: float = 0.2
    v_target: float = 8.0
    v_min: float = 2.0
    v_max: float = 15.0
    n_reward: float = 3.0

    def __post_init__(self):
        if min(self.alpha_col, self.alpha_bd, self.alpha_vel) < 0:
            raise ValueError("reward coefficients must be non-negative")
        if not self.v_min <= self.v_target <= self.v_max:
            raise ValueError(f"need v_min <= v_target <= v_max, got {self.v_min}, {self.v_target}, {self.v_max}")
        if self.n_reward < 1:
            raise ValueError(f"n_reward must be >= 1, got {self.n_reward}")

    def scaled(self, factor: float) -> "RewardParams":
        """Same parameters with all three coefficients multiplied by ``factor``."""
        return RewardParams(
            self.alpha_col * factor, self.alpha_bd * factor, self.alpha_vel * factor,
            self.v_target, self.v_min, self.v_max, self.n_reward,
        )

    @classmethod
    def from_mapping(cls, doc: dict) -> "RewardParams":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown reward parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in doc.items()})


def load_reward_params(path) -> RewardParams:
    """Read the ``reward`` section of a TOML or JSON config file.

    A file without a ``reward`` table is taken to be the section itself.
    """
    path = Path(path)
    if path.suffix == ".toml":
        doc = tomllib.loads(path.read_text())
    else:
        doc = json.loads(path.read_text())
    return RewardParams.from_mapping(doc.get("reward", doc))


@dataclass(frozen=True)
class EgoFootprint:
    """Ego bounding box centered on the pose; bottom face ``z_offset`` above ground."""

    length: float = 4.6
    width: float = 1.9
    height: float = 1.7
    z_offset: float = 0.1

    def __post_init__(self):
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError("footprint extents must be positive")

    def box(self, ego: EgoPose) -> OrientedBox:
        return OrientedBox.from_yaw(
            (ego.x, ego.y, self.z_offset + 0.5 * self.height), (self.length, self.width, self.height), ego.yaw
        )

    def ground_probes(self, ego: EgoPose, z: float) -> np.ndarray:
        """Center and four ground corners of the footprint at height ``z``."""
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[0.0, 0.0], [hl, hw], [hl, -hw], [-hl, hw], [-hl, -hw]])
        c, s = math.cos(ego.yaw), math.sin(ego.yaw)
        xy = local @ np.array([[c, s], [-s, c]]) + (ego.x, ego.y)
        return np.column_stack([xy, np.full(len(xy), z)])


@dataclass(frozen=True)
class RewardBreakdown:
    r_col: float
    r_bd: float
    r_vel: float
    total: float
    collided: bool
    off_drivable: bool
    out_of_band: bool
    reverse: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def collision_reward(grid: SemanticOccupancyGrid, box: OrientedBox, speed: float, params: RewardParams):
    """Return ``(r_col, collided)``."""
    collided = query_box(grid, box, grid.taxonomy.obstacle_indices) > 0
    return -params.alpha_col * float(collided) * abs(speed), collided


def boundary_reward(
    grid: SemanticOccupancyGrid,
    ego: EgoPose,
    footprint: EgoFootprint,
    params: RewardParams,
    probe_z: float | None = None,
):
    """Return ``(r_bd, off_drivable)``.

    Probes sit half a voxel below z = 0 unless ``probe_z`` is given, i.e. in
    the voxel layer holding the road surface.
    """
    z = -0.5 * grid.voxel_size if probe_z is None else probe_z
    labels = labels_at(grid, footprint.ground_probes(ego, z))
    off = bool(np.any(labels != grid.taxonomy.drivable))
    return -params.alpha_bd * float(off), off


def velocity_reward(speed: float, params: RewardParams):
    """Return ``(r_vel, out_of_band)``; reverse speeds are scored by magnitude."""
    v = abs(speed)
    out = not (params.v_min <= v <= params.v_max)
    return -params.alpha_vel * math.tanh(abs(v - params.v_target)) * float(out), out


def combine(r_col: float, r_bd: float, r_vel: float, params: RewardParams) -> float:
    return 1.0 + (r_col + r_bd + r_vel) / params.n_reward


def waypoint_reward(
    grid: SemanticOccupancyGrid,
    ego: EgoPose,
    footprint: EgoFootprint | None = None,
    params: RewardParams | None = None,
) -> RewardBreakdown:
    footprint = footprint or EgoFootprint()
    params = params or RewardParams()
    r_col, collided = collision_reward(grid, footprint.box(ego), ego.speed, params)
    r_bd, off = boundary_reward(grid, ego, footprint, params)
    r_vel, oob = velocity_reward(ego.speed, params)
    return RewardBreakdown(r_col, r_bd, r_vel, combine(r_col, r_bd, r_vel, params), collided, off, oob, ego.reverse)


def trajectory_rewards(
    seq: OccupancySequence,
    traj: Trajectory,
    footprint: EgoFootprint | None = None,
    params: RewardParams | None = None,
):
    """Score every waypoint against the grid nearest in time.

    Returns ``(breakdowns, average_total)``.
    """
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    out = [waypoint_reward(seq.nearest(p.t), p, footprint, params) for p in traj]
    return out, float(np.mean([b.total for b in out]))


def breakdown_csv_rows(traj: Trajectory, breakdowns) -> list:
    rows = [("t", "r_col", "r_bd", "r_vel", "total")]
    for p, b in zip(traj, breakdowns):
        rows.append((repr(p.t), repr(b.r_col), repr(b.r_bd), repr(b.r_vel), repr(b.total)))
    return rows
