from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from occunav.geometry import (
    Camera,
    CameraRig,
    EgoPose,
    Intrinsics,
    Pose,
    Trajectory,
    body_camera_pose,
)
from occunav.occupancy import GridGeometry


def random_pose(rng: np.random.Generator, scale: float = 10.0) -> Pose:
    R = Rotation.random(random_state=rng).as_matrix()
    return Pose(R, rng.uniform(-scale, scale, 3))


def random_intrinsics(rng: np.random.Generator) -> Intrinsics:
    w, h = int(rng.integers(8, 64)), int(rng.integers(8, 64))
    return Intrinsics(
        rng.uniform(5, 80), rng.uniform(5, 80), rng.uniform(0.2, 0.8) * w, rng.uniform(0.2, 0.8) * h, w, h
    )


def random_rig(rng: np.random.Generator, n_views: int | None = None) -> CameraRig:
    n = int(n_views or rng.integers(1, 7))
    cams = []
    for k in range(n):
        yaw = rng.uniform(-math.pi, math.pi)
        pos = (rng.uniform(-2, 2), rng.uniform(-1, 1), rng.uniform(0.5, 2.0))
        cams.append(Camera(random_intrinsics(rng), body_camera_pose(yaw, pos, rng.uniform(-0.3, 0.3)), f"c{k}"))
    return CameraRig(tuple(cams), int(rng.integers(0, n)))


def random_trajectory(rng: np.random.Generator, n: int = 4, rate_hz: float = 12.0) -> Trajectory:
    poses = []
    for i in range(n):
        poses.append(
            EgoPose(i / rate_hz, rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-math.pi, math.pi),
                    rng.uniform(0, 15))
        )
    return Trajectory(tuple(poses), rate_hz)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_geometry():
    return GridGeometry((-10.0, -10.0, -1.0), 0.5, (40, 40, 8))


def random_scene(rng: np.random.Generator):
    """Ground plane (road band plus sidewalk) with 1-5 random box obstacles.

    Returns ``(grid, ego)``; obstacles keep clear of the ego position.
    """
    from occunav.occupancy import DEFAULT_TAXONOMY, OrientedBox, SemanticOccupancyGrid

    tax = DEFAULT_TAXONOMY
    geo = GridGeometry((-24.0, -24.0, -0.8), 0.4, (120, 120, 12))
    labels = np.full(geo.dims, tax.free, dtype=np.uint16)
    centers = geo.all_centers()
    half = rng.uniform(3.0, 8.0)
    ground = labels[:, :, 1]
    ground[:] = np.where(np.abs(centers[:, :, 1, 1]) <= half, tax.drivable, tax.index("sidewalk"))
    obstacles = sorted(tax.obstacle_indices)
    for _ in range(int(rng.integers(1, 6))):
        r, a = rng.uniform(6.0, 18.0), rng.uniform(-math.pi, math.pi)
        size = (rng.uniform(1.0, 5.0), rng.uniform(0.8, 2.5), rng.uniform(1.0, 3.0))
        box = OrientedBox.from_yaw((r * math.cos(a), r * math.sin(a), 0.5 * size[2]), size, rng.uniform(-math.pi, math.pi))
        inside = box.contains(centers)
        labels[inside] = obstacles[int(rng.integers(len(obstacles)))]
    ego = EgoPose(0.0, 0.0, 0.0, rng.uniform(-math.pi, math.pi))
    return SemanticOccupancyGrid(geo, labels, tax), ego


def reward_oracle(grid, ego, footprint, params):
    """Direct re-evaluation of the three penalties by exhaustive voxel scan."""
    geo, tax = grid.geometry, grid.taxonomy
    vs = geo.voxel_size
    origin = np.array(geo.origin)
    nx, ny, nz = geo.dims
    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    zc = footprint.z_offset + footprint.height / 2
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    px, py, pz = (origin[0] + (ix + 0.5) * vs, origin[1] + (iy + 0.5) * vs, origin[2] + (iz + 0.5) * vs)
    dx, dy = px - ego.x, py - ego.y
    lx, ly = c * dx + s * dy, -s * dx + c * dy
    inside = (np.abs(lx) <= footprint.length / 2) & (np.abs(ly) <= footprint.width / 2)
    inside &= np.abs(pz - zc) <= footprint.height / 2
    obst = [tax.labels.index(n) for n in tax.obstacle_set]
    hit = bool(np.any(inside & np.isin(grid.labels, obst)))
    r_col = -params.alpha_col * abs(ego.speed) if hit else 0.0
    off = False
    for fx, fy in [(0, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)]:
        lx, ly = fx * footprint.length / 2, fy * footprint.width / 2
        p = (ego.x + c * lx - s * ly, ego.y + s * lx + c * ly, -vs / 2)
        idx = [math.floor((p[k] - origin[k]) / vs) for k in range(3)]
        inside = all(0 <= idx[k] < (nx, ny, nz)[k] for k in range(3))
        label = int(grid.labels[tuple(idx)]) if inside else tax.labels.index(tax.free_label)
        if label != tax.labels.index(tax.drivable_label):
            off = True
    r_bd = -params.alpha_bd if off else 0.0
    v = abs(ego.speed)
    r_vel = 0.0 if params.v_min <= v <= params.v_max else -params.alpha_vel * math.tanh(abs(v - params.v_target))
    return r_col, r_bd, r_vel, 1.0 + (r_col + r_bd + r_vel) / params.n_reward


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
