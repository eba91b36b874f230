"""Scenario manifests and synthetic driving scenes.

Synthetic scenes are straight two-lane roads along +x: drivable surface for
``|y| <= road_half_width`` in the ground voxel layer (just below z = 0),
sidewalk beyond, with box obstacles standing on the road. The ego drives in
the right lane (``y = -lane_width / 2``) towards +x.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    DEFAULT_RATE_HZ,
    CameraRig,
    EgoPose,
    load_rig,
    panoramic_rig,
    rig_from_dict,
    rig_to_dict,
)
from .occupancy import (
    DEFAULT_TAXONOMY,
    GridGeometry,
    OccupancySequence,
    OrientedBox,
    SemanticOccupancyGrid,
    SemanticTaxonomy,
    read_sequence,
    write_sequence,
)
from .planner import PlannerConfig, arc_trajectory
from .reward import EgoFootprint, RewardParams
from .rollout import CLIP_MODE, PassCriterion, RolloutPlan, TerminationPolicy

LANE_WIDTH = 3.5
SCENE_GEOMETRY = GridGeometry((-8.0, -12.0, -0.4), 0.4, (200, 60, 8))


@dataclass(frozen=True, eq=False)
class Scenario:
    scenario_id: str
    sequence: OccupancySequence
    initial_ego: EgoPose
    horizon: int = 48
    plan: RolloutPlan = field(default_factory=lambda: RolloutPlan(CLIP_MODE, 1, 6))
    termination: TerminationPolicy = field(default_factory=TerminationPolicy)
    pass_criterion: PassCriterion = field(default_factory=PassCriterion)
    footprint: EgoFootprint = field(default_factory=EgoFootprint)
    reward: RewardParams = field(default_factory=RewardParams)
    planner_cfg: PlannerConfig = field(default_factory=PlannerConfig)
    rig: CameraRig = field(default_factory=panoramic_rig)
    raymap_hw: tuple = (4, 8)
    rate_hz: float = DEFAULT_RATE_HZ
    seed: int = 0
    context_noise: float = 0.0

    def timestamps(self, n: int) -> list:
        """Frame times: stored sequence times, extended on the rate grid."""
        ts = list(self.sequence.timestamps[:n])
        while len(ts) < n:
            ts.append(self.sequence.timestamps[0] + len(ts) / self.rate_hz)
        return ts


# -- scene construction ------------------------------------------------------------


def road_labels(
    geometry: GridGeometry = SCENE_GEOMETRY,
    taxonomy: SemanticTaxonomy = DEFAULT_TAXONOMY,
    road_half_width: float = LANE_WIDTH,
) -> np.ndarray:
    """Ground layer: drivable for |y| <= road_half_width, sidewalk elsewhere."""
    labels = np.full(geometry.dims, taxonomy.free, dtype=np.uint16)
    centers = geometry.all_centers()
    ground = (centers[..., 2] < 0) & (centers[..., 2] > -geometry.voxel_size)
    road = np.abs(centers[..., 1]) <= road_half_width
    labels[ground & road] = taxonomy.drivable
    labels[ground & ~road] = taxonomy.index("sidewalk")
    return labels


def stamp_box(labels: np.ndarray, geometry: GridGeometry, box: OrientedBox, label: int) -> np.ndarray:
    """Set every voxel whose center lies in ``box`` to ``label`` (in place)."""
    inside = box.contains(geometry.all_centers())
    labels[inside] = label
    return labels


@dataclass(frozen=True)
class Obstacle:
    label: str
    center: tuple  # (x, y) at t = 0
    size: tuple  # (length, width, height)
    yaw: float = 0.0
    velocity: tuple = (0.0, 0.0)

    def box_at(self, t: float) -> OrientedBox:
        x = self.center[0] + self.velocity[0] * t
        y = self.center[1] + self.velocity[1] * t
        return OrientedBox.from_yaw((x, y, 0.5 * self.size[2]), self.size, self.yaw)


def scene_sequence(
    obstacles,
    n_frames: int,
    rate_hz: float = DEFAULT_RATE_HZ,
    geometry: GridGeometry = SCENE_GEOMETRY,
    taxonomy: SemanticTaxonomy = DEFAULT_TAXONOMY,
    road_half_width: float = LANE_WIDTH,
) -> OccupancySequence:
    base = road_labels(geometry, taxonomy, road_half_width)
    static = [o for o in obstacles if o.velocity == (0.0, 0.0)]
    moving = [o for o in obstacles if o.velocity != (0.0, 0.0)]
    for o in static:
        stamp_box(base, geometry, o.box_at(0.0), taxonomy.index(o.label))
    base_grid = SemanticOccupancyGrid(geometry, base, taxonomy)
    grids, times = [], []
    for i in range(n_frames):
        t = i / rate_hz
        if moving:
            lab = base.copy()
            for o in moving:
                stamp_box(lab, geometry, o.box_at(t), taxonomy.index(o.label))
            grids.append(SemanticOccupancyGrid(geometry, lab, taxonomy))
        else:
            grids.append(base_grid)
        times.append(t)
    return OccupancySequence(tuple(grids), tuple(times))


TRUCK = (8.0, 2.5, 2.4)
CAR = (4.5, 1.9, 1.6)
PEDESTRIAN = (0.6, 0.6, 1.8)
BARRIER = (0.8, 2.4, 1.0)

EGO_LANE = -0.5 * LANE_WIDTH
OTHER_LANE = 0.5 * LANE_WIDTH


def _suite_specs() -> list:
    return [
        ("clear_road", []),
        ("barrier_in_lane", [Obstacle("barrier", (26.0, EGO_LANE), BARRIER)]),
        ("stalled_car", [Obstacle("car", (22.0, EGO_LANE), CAR)]),
        ("oncoming_truck", [Obstacle("truck", (52.0, EGO_LANE), TRUCK, math.pi, (-6.0, 0.0))]),
        ("pedestrian_in_lane", [Obstacle("pedestrian", (24.0, EGO_LANE + 0.4), PEDESTRIAN)]),
        ("oncoming_traffic", [Obstacle("truck", (55.0, OTHER_LANE), TRUCK, math.pi, (-6.0, 0.0))]),
        ("barrier_other_lane", [Obstacle("barrier", (24.0, OTHER_LANE), BARRIER)]),
        ("slow_lead_car", [Obstacle("car", (18.0, EGO_LANE), CAR, 0.0, (2.0, 0.0))]),
        ("parked_car_shoulder", [Obstacle("car", (30.0, -4.6), CAR)]),
        ("lane_blocked_late", [Obstacle("barrier", (34.0, EGO_LANE), BARRIER),
                               Obstacle("car", (58.0, OTHER_LANE), CAR)]),
    ]


def standard_suite(horizon: int = 48, seed: int = 0) -> list:
    """The shipped ten-scenario closed-loop suite.

    Half the scenarios place an avoidable obstacle in the ego lane; the rest
    are clear or only have traffic elsewhere.
    """
    out = []
    for k, (sid, obstacles) in enumerate(_suite_specs()):
        seq = scene_sequence(obstacles, horizon + 1)
        ego = EgoPose(0.0, 0.0, EGO_LANE, 0.0, 8.0)
        out.append(Scenario(f"{k:02d}_{sid}", seq, ego, horizon=horizon, seed=seed + k))
    return out


def oncoming_truck_scene(n_frames: int = 49, truck_speed: float = 6.0, truck_x0: float = 50.0):
    """Oncoming truck in the ego lane, as a playback sequence."""
    truck = Obstacle("truck", (truck_x0, EGO_LANE), TRUCK, math.pi, (-truck_speed, 0.0))
    return scene_sequence([truck], n_frames)


def scripted_truck_trajectories(n_steps: int = 48, rate_hz: float = DEFAULT_RATE_HZ) -> dict:
    """Collide / partial / evade trajectories for :func:`oncoming_truck_scene`.

    * collide: straight ahead at 12 m/s;
    * partial: brakes to 1.5 m/s and pulls onto the right shoulder, clipping
      the sidewalk edge;
    * evade: changes into the free lane at target speed.
    """
    start = EgoPose(0.0, 0.0, EGO_LANE, 0.0, 0.0)
    collide = arc_trajectory(start, 12.0, 0.0, n_steps, rate_hz)
    partial = arc_trajectory(start, 1.5, 0.0, n_steps, rate_hz, lateral_offset=-2.2, lane_change_s=1.5)
    evade = arc_trajectory(start, 8.0, 0.0, n_steps, rate_hz, lateral_offset=LANE_WIDTH, lane_change_s=1.5)
    return {"collide": collide, "partial": partial, "evade": evade}


# -- manifests -------------------------------------------------------------------------


def scenario_to_manifest(sc: Scenario, occupancy_dir: str = "occupancy") -> dict:
    e = sc.initial_ego
    return {
        "id": sc.scenario_id,
        "initial_ego": {"x": e.x, "y": e.y, "yaw": e.yaw, "speed": e.speed},
        "occupancy": occupancy_dir,
        "horizon": sc.horizon,
        "rate_hz": sc.rate_hz,
        "termination": {"collision": sc.termination.on_collision, "off_drivable": sc.termination.on_off_drivable},
        "pass": {
            "allow_collision": sc.pass_criterion.allow_collision,
            "allow_off_drivable": sc.pass_criterion.allow_off_drivable,
        },
        "plan": {"mode": sc.plan.mode, "context": sc.plan.context, "horizon": sc.plan.horizon},
        "seed": sc.seed,
        "context_noise": sc.context_noise,
        "raymap": list(sc.raymap_hw),
        "reward": asdict(sc.reward),
        "footprint": asdict(sc.footprint),
        "planner": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(sc.planner_cfg).items()},
        "rig": rig_to_dict(sc.rig),
    }


def write_scenario(sc: Scenario, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_sequence(sc.sequence, d / "occupancy")
    path = d / "scenario.json"
    path.write_text(json.dumps(scenario_to_manifest(sc), indent=1, sort_keys=True) + "\n")
    return path


def load_scenario(path) -> Scenario:
    """Load a scenario manifest; relative paths resolve against its directory."""

    path = Path(path)
    doc = json.loads(path.read_text())
    base = path.parent
    seq = read_sequence(base / doc["occupancy"])
    e = doc.get("initial_ego", {})
    ego = EgoPose(seq.timestamps[0], float(e.get("x", 0.0)), float(e.get("y", 0.0)),
                  float(e.get("yaw", 0.0)), float(e.get("speed", 0.0)))
    rig_doc = doc.get("rig")
    if rig_doc is None:
        rig = panoramic_rig()
    elif isinstance(rig_doc, str):
        rig = load_rig(base / rig_doc)
    else:
        rig = rig_from_dict(rig_doc)
    term = doc.get("termination", {})
    crit = doc.get("pass", {})
    plan = doc.get("plan", {})
    horizon = int(doc.get("horizon", len(seq) - 1))
    return Scenario(
        scenario_id=str(doc.get("id", path.parent.name)),
        sequence=seq,
        initial_ego=ego,
        horizon=horizon,
        plan=RolloutPlan(plan.get("mode", CLIP_MODE), int(plan.get("context", 1)), int(plan.get("horizon", 6)),
                         horizon + 1),
        termination=TerminationPolicy(bool(term.get("collision", True)), bool(term.get("off_drivable", True))),
        pass_criterion=PassCriterion(bool(crit.get("allow_collision", False)),
                                     bool(crit.get("allow_off_drivable", False))),
        footprint=EgoFootprint(**doc.get("footprint", {})),
        reward=RewardParams.from_mapping(doc.get("reward", {})),
        planner_cfg=PlannerConfig.from_mapping(doc.get("planner", {})),
        rig=rig,
        raymap_hw=tuple(doc.get("raymap", (4, 8))),
        rate_hz=float(doc.get("rate_hz", DEFAULT_RATE_HZ)),
        seed=int(doc.get("seed", 0)),
        context_noise=float(doc.get("context_noise", 0.0)),
    )


def write_suite(scenarios, directory) -> list:
    return [write_scenario(sc, Path(directory) / sc.scenario_id) for sc in scenarios]
