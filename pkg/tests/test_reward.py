import json
import math

import numpy as np
import pytest
from conftest import reward_oracle
from hypothesis import given, settings
from hypothesis import strategies as st

from occunav.geometry import EgoPose, Trajectory
from occunav.occupancy import (
    DEFAULT_TAXONOMY,
    GridGeometry,
    OccupancySequence,
    OrientedBox,
    SemanticOccupancyGrid,
)
from occunav.reward import (
    EgoFootprint,
    RewardParams,
    boundary_reward,
    collision_reward,
    load_reward_params,
    trajectory_rewards,
    velocity_reward,
    waypoint_reward,
)

TAX = DEFAULT_TAXONOMY
GEO = GridGeometry((-20.0, -10.0, -0.4), 0.4, (100, 50, 8))
FP = EgoFootprint()


def _road(car_at=None, sidewalk_y=None):
    lab = np.full(GEO.dims, TAX.free, dtype=np.uint16)
    lab[:, :, 0] = TAX.drivable
    g = SemanticOccupancyGrid(GEO, lab)
    if sidewalk_y is not None:
        ys = GEO.all_centers()[:, :, 0, 1]
        lab[:, :, 0][ys > sidewalk_y] = TAX.index("sidewalk")
    if car_at is not None:
        box = OrientedBox(car_at, (1.0, 1.0, 1.0))
        lab[box.contains(GEO.all_centers())] = TAX.index("car")
    return g.with_labels(lab)


def test_params_validation():
    with pytest.raises(ValueError):
        RewardParams(alpha_col=-1)
    with pytest.raises(ValueError):
        RewardParams(v_target=20)
    with pytest.raises(ValueError):
        RewardParams(n_reward=0.5)
    with pytest.raises(ValueError):
        RewardParams.from_mapping({"alpha": 1})


def test_collision_examples():
    clean, hit = _road(), _road(car_at=(0.0, 0.0, 0.8))
    box = FP.box(EgoPose(0, 0, 0, 0))
    assert collision_reward(clean, box, 9.0, RewardParams()) == (0.0, False)
    assert collision_reward(hit, box, 0.0, RewardParams()) == (0.0, True)
    assert collision_reward(hit, box, 5.0, RewardParams(alpha_col=1.0)) == (-5.0, True)


def test_boundary_examples():
    p = RewardParams(alpha_bd=0.5)
    assert boundary_reward(_road(), EgoPose(0, 0, 0, 0), FP, p) == (0.0, False)
    assert boundary_reward(_road(), EgoPose(0, 100, 100, 0), FP, p) == (-0.5, True)
    # only the +y corners reach the sidewalk strip
    assert boundary_reward(_road(sidewalk_y=0.8), EgoPose(0, 0, 0, 0), FP, p) == (-0.5, True)
    assert boundary_reward(_road(sidewalk_y=1.2), EgoPose(0, 0, 0, 0), FP, p) == (0.0, False)


def test_velocity_examples():
    p = RewardParams(alpha_vel=1.0, v_target=8, v_min=2, v_max=15)
    assert velocity_reward(8.0, p) == (0.0, False)
    assert velocity_reward(14.9, p) == (0.0, False)
    r, out = velocity_reward(20.0, p)
    assert out and r == -math.tanh(12.0)
    assert r == pytest.approx(-0.99999, abs=1e-5)
    assert velocity_reward(-20.0, p) == (r, True)


def test_waypoint_totals():
    assert waypoint_reward(_road(), EgoPose(0, 0, 0, 0, 8.0)).total == 1.0
    p = RewardParams(alpha_col=1.0, alpha_bd=0.0, alpha_vel=0.0, v_min=0, v_target=5, v_max=20)
    b = waypoint_reward(_road(car_at=(0.0, 0.0, 0.8)), EgoPose(0, 0, 0, 0, 5.0), FP, p)
    assert b.total == pytest.approx(1 - 5 / 3, abs=1e-12) and b.collided
    # off-drivable (0.5) plus a velocity penalty of exactly 0.2
    dv = math.atanh(0.2)
    p = RewardParams(alpha_col=0.0, alpha_bd=0.5, alpha_vel=1.0, v_target=8, v_min=2, v_max=8 + dv / 2)
    b = waypoint_reward(_road(), EgoPose(0, 100, 100, 0, 8 + dv), FP, p)
    assert b.r_vel == pytest.approx(-0.2, abs=1e-12)
    assert b.total == pytest.approx(1 - 0.7 / 3, abs=1e-12)


def test_trajectory_average():
    seq = OccupancySequence((_road(), _road()), (0.0, 1.0))
    traj = Trajectory(tuple(EgoPose(i / 12, i * 0.5, 0, 0, 6.0) for i in range(10)))
    _, avg = trajectory_rewards(seq, Trajectory(tuple(p for p in traj if p.t == 0.0)))
    assert avg == 1.0
    bd, avg = trajectory_rewards(seq, traj)
    assert avg == 1.0 and len(bd) == 10
    single = Trajectory((EgoPose(0, 0, 0, 0, 30.0),))
    bd, avg = trajectory_rewards(seq, single)
    assert avg == bd[0].total


@st.composite
def _cases(draw):
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    lab = rng.choice(len(TAX.labels), size=GEO.dims, p=[0.6, 0.25, 0.05, 0.04, 0.02, 0.02, 0.02])
    grid = SemanticOccupancyGrid(GEO, lab)
    ego = EgoPose(0.0, rng.uniform(-22, 22), rng.uniform(-12, 12), rng.uniform(-4, 4), rng.uniform(0, 25),
                  bool(rng.random() < 0.2))
    vmin, vmax = sorted(rng.uniform(0, 20, 2))
    params = RewardParams(*rng.uniform(0, 2, 3), rng.uniform(vmin, vmax), vmin, vmax, rng.uniform(1, 5))
    return grid, ego, params


@settings(max_examples=60, deadline=None)
@given(_cases())
def test_matches_oracle_and_bounds(case):
    grid, ego, params = case
    b = waypoint_reward(grid, ego, FP, params)
    r_col, r_bd, r_vel, total = reward_oracle(grid, ego, FP, params)
    assert (b.r_col, b.r_bd, b.r_vel) == (r_col, r_bd, r_vel)
    assert abs(b.total - total) <= 1e-12
    assert max(b.r_col, b.r_bd, b.r_vel) <= 0.0
    assert b.total <= 1.0
    assert b.total >= 1.0 - (params.alpha_col * ego.speed + params.alpha_bd + params.alpha_vel) / params.n_reward


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 40), st.floats(0, 40))
def test_velocity_penalty_monotone_outside_band(a, b):
    p = RewardParams()
    lo, hi = sorted((a, b))
    if lo > p.v_max:
        assert velocity_reward(hi, p)[0] <= velocity_reward(lo, p)[0]
    if hi < p.v_min:
        assert velocity_reward(lo, p)[0] <= velocity_reward(hi, p)[0]


def test_collision_penalty_monotone_in_speed():
    hit = _road(car_at=(0.0, 0.0, 0.8))
    vals = [waypoint_reward(hit, EgoPose(0, 0, 0, 0, v)).r_col for v in (0, 1, 4, 9, 20)]
    assert vals == sorted(vals, reverse=True)


def test_scaling_coefficients_scales_penalties():
    rng = np.random.default_rng(0)
    lab = rng.choice(len(TAX.labels), size=GEO.dims, p=[0.6, 0.25, 0.05, 0.04, 0.02, 0.02, 0.02])
    grid = SemanticOccupancyGrid(GEO, lab)
    for _ in range(20):
        ego = EgoPose(0.0, *rng.uniform(-10, 10, 2), rng.uniform(-3, 3), rng.uniform(0, 20))
        a = waypoint_reward(grid, ego)
        b = waypoint_reward(grid, ego, params=RewardParams().scaled(3.0))
        assert b.total - 1 == pytest.approx(3.0 * (a.total - 1), abs=1e-12)


def test_load_params_toml_and_json(tmp_path):
    (tmp_path / "r.toml").write_text("[reward]\nalpha_col = 2.0\nv_target = 10\n")
    p = load_reward_params(tmp_path / "r.toml")
    assert p.alpha_col == 2.0 and p.v_target == 10.0 and p.alpha_bd == 0.5
    (tmp_path / "r.json").write_text(json.dumps({"alpha_vel": 0.1, "n_reward": 4}))
    p = load_reward_params(tmp_path / "r.json")
    assert p.alpha_vel == 0.1 and p.n_reward == 4.0
    (tmp_path / "bad.json").write_text(json.dumps({"reward": {"v_min": 20}}))
    with pytest.raises(ValueError):
        load_reward_params(tmp_path / "bad.json")
