"""Rigid poses, pinhole cameras, panoramic rigs and planar ego trajectories.

Conventions
-----------
* ``Pose`` is camera-to-world (or body-to-world): ``x_world = R @ x_local + t``.
  ``translation`` is therefore the camera center in the parent frame.
* Camera frame: +z along the optical axis, +x right, +y down (pixel ``u``
  grows with x, ``v`` with y).
* Ego body frame: +x forward, +y left, +z up. The ego moves in the world
  ground plane (z = 0); camera mounting height lives in each camera's
  rig-local translation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ORTHO_TOL = 1e-9
DEFAULT_RATE_HZ = 12.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_angle(angle):
    """Wrap radians into [-pi, pi)."""
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True, eq=False)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def __eq__(self, other):
        if not isinstance(other, Intrinsics):
            return NotImplemented
        return (self.fx, self.fy, self.cx, self.cy, self.width, self.height) == (
            other.fx, other.fy, other.cx, other.cy, other.width, other.height
        )

    def scaled(self, width: int, height: int) -> "Intrinsics":
        """Rescale to a new image size, keeping the field of view."""
        sx, sy = width / self.width, height / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)

    @classmethod
    def from_fov(cls, hfov: float, width: int, height: int) -> "Intrinsics":
        """Square-pixel camera with horizontal field of view ``hfov`` (radians)."""
        f = 0.5 * width / math.tan(0.5 * hfov)
        return cls(f, f, 0.5 * width, 0.5 * height, width, height)


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"expected (3,3) rotation and (3,) translation, got {R.shape}, {t.shape}")
        if self.check:
            if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
                raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "Pose":
        return cls(np.eye(3), np.array([x, y, z], dtype=np.float64))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (..., 3) from the local frame to the parent frame."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def compose(a: Pose, b: Pose) -> Pose:
    """Pose that applies ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation, check=False)


def invert(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation, check=False)


def pixel_direction(
    intr: Intrinsics, pose: Pose, u: float, v: float, *, printed_form: bool = False
) -> np.ndarray:
    """Unit world-frame direction of the ray through pixel coordinate ``(u, v)``.

    ``printed_form`` adds the camera translation before normalizing
    (``R K^-1 [u, v, 1] + t``); it is kept only for comparison and is not a
    geometric direction.
    """
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError(f"pixel ({u}, {v}) outside image {intr.width}x{intr.height}")
    d = pose.rotation @ (intr.inverse @ np.array([u, v, 1.0]))
    if printed_form:
        d = d + pose.translation
    return d / np.linalg.norm(d)


# -- rigs ---------------------------------------------------------------------

# Camera-from-body alignment for a camera looking along body +x:
# camera x (right) = body -y, camera y (down) = body -z, camera z = body +x.
_FORWARD_CAM_AXES = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def body_camera_pose(yaw: float, position: Sequence[float], pitch: float = 0.0) -> Pose:
    """Rig-local pose of a camera mounted at ``position`` looking along ``yaw``.

    Positive pitch tilts the optical axis down.
    """
    R = rot_z(yaw) @ rot_y(pitch) @ _FORWARD_CAM_AXES
    return Pose(R, np.asarray(position, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Camera:
    intrinsics: Intrinsics
    pose: Pose
    name: str


@dataclass(frozen=True, eq=False)
class CameraRig:
    cameras: tuple
    reference_index: int = 0

    def __post_init__(self):
        cams = tuple(self.cameras)
        if not cams:
            raise ValueError("rig needs at least one camera")
        if not 0 <= self.reference_index < len(cams):
            raise ValueError(f"reference_index {self.reference_index} out of range for {len(cams)} cameras")
        names = [c.name for c in cams]
        if len(set(names)) != len(names):
            raise ValueError(f"camera names must be unique: {names}")
        object.__setattr__(self, "cameras", cams)

    def __len__(self) -> int:
        return len(self.cameras)

    @property
    def reference(self) -> Camera:
        return self.cameras[self.reference_index]

    def with_intrinsics(self, index: int, intr: Intrinsics) -> "CameraRig":
        cams = list(self.cameras)
        cams[index] = replace(cams[index], intrinsics=intr)
        return CameraRig(tuple(cams), self.reference_index)


NUSCENES_LIKE_YAWS = (
    ("front", 0.0),
    ("front_left", math.radians(55.0)),
    ("back_left", math.radians(110.0)),
    ("back", math.pi),
    ("back_right", math.radians(-110.0)),
    ("front_right", math.radians(-55.0)),
)


def panoramic_rig(
    width: int = 64,
    height: int = 36,
    hfov: float = math.radians(70.0),
    mount_height: float = 1.5,
    mount_radius: float = 1.0,
    n_views: int = 6,
) -> CameraRig:
    """Surround rig of ``n_views`` cameras with the front camera as reference.

    Six views use nuScenes-like headings; other counts spread evenly.
    """
    if n_views == 6:
        layout = NUSCENES_LIKE_YAWS
    else:
        layout = tuple((f"cam{i}", 2.0 * math.pi * i / n_views) for i in range(n_views))
    intr = Intrinsics.from_fov(hfov, width, height)
    cams = []
    for name, yaw in layout:
        pos = (mount_radius * math.cos(yaw), mount_radius * math.sin(yaw), mount_height)
        cams.append(Camera(intr, body_camera_pose(yaw, pos), name))
    return CameraRig(tuple(cams), 0)


# -- ego poses and trajectories ---------------------------------------------


@dataclass(frozen=True)
class EgoPose:
    t: float
    x: float
    y: float
    yaw: float
    speed: float = 0.0
    reverse: bool = False

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"speed must be >= 0 (use reverse=True), got {self.speed}")

    @property
    def signed_speed(self) -> float:
        return -self.speed if self.reverse else self.speed

    def body_pose(self) -> Pose:
        """Body-to-world SE(3) pose on the ground plane."""
        return Pose(rot_z(self.yaw), np.array([self.x, self.y, 0.0]), check=False)


@dataclass(frozen=True, eq=False)
class Trajectory:
    poses: tuple
    rate_hz: float = DEFAULT_RATE_HZ

    def __post_init__(self):
        poses = tuple(self.poses)
        ts = [p.t for p in poses]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory timestamps must be strictly increasing")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.poses == other.poses and self.rate_hz == other.rate_hz

    @property
    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.poses])

    @property
    def xy(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.poses]).reshape(-1, 2)

    def length(self) -> float:
        xy = self.xy
        return float(np.linalg.norm(np.diff(xy, axis=0), axis=1).sum()) if len(xy) > 1 else 0.0


def rig_world_cameras(rig: CameraRig, ego: EgoPose) -> list:
    """World-frame ``(Intrinsics, Pose)`` for every camera of ``rig`` at ``ego``."""
    body = ego.body_pose()
    return [(cam.intrinsics, compose(body, cam.pose)) for cam in rig.cameras]


def resample(traj: Trajectory, rate_hz: float) -> Trajectory:
    """Resample onto a uniform ``1/rate_hz`` grid starting at the first timestamp.

    Position and speed are interpolated linearly, yaw along the shortest arc.
    The reverse flag is taken from the earlier bracketing pose.
    """
    if len(traj) < 2:
        raise ValueError("resample needs at least two poses")
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    ts = traj.times
    t0, t1 = ts[0], ts[-1]
    n = int(math.floor((t1 - t0) * rate_hz + 1e-6)) + 1
    grid = t0 + np.arange(n) / rate_hz
    # land exactly on the end point when the span is a whole number of steps
    if abs(grid[-1] - t1) <= 1e-6:
        grid[-1] = t1
    xs = np.array([p.x for p in traj])
    ys = np.array([p.y for p in traj])
    sp = np.array([p.speed for p in traj])
    yaw = np.array([p.yaw for p in traj])
    # unwrap relative to the previous sample so interpolation follows the short arc
    yaw_u = yaw[0] + np.concatenate([[0.0], np.cumsum(wrap_angle(np.diff(yaw)))])
    idx = np.clip(np.searchsorted(ts, grid, side="right") - 1, 0, len(ts) - 2)
    frac = (grid - ts[idx]) / (ts[idx + 1] - ts[idx])

    def lerp(a):
        return a[idx] + frac * (a[idx + 1] - a[idx])

    gx, gy, gs, gyaw = lerp(xs), lerp(ys), lerp(sp), wrap_angle(lerp(yaw_u))
    rev = [traj[i].reverse if f < 1.0 else traj[i + 1].reverse for i, f in zip(idx, frac)]
    poses = tuple(
        EgoPose(float(t), float(x), float(y), float(a), max(float(s), 0.0), bool(r))
        for t, x, y, a, s, r in zip(grid, gx, gy, gyaw, gs, rev)
    )
    return Trajectory(poses, float(rate_hz))


# -- file formats --------------------------------------------------------------

TRAJ_FIELDS = ("t", "x", "y", "yaw", "speed", "reverse")


def rig_to_dict(rig: CameraRig) -> dict:
    cams = []
    for cam in rig.cameras:
        k = cam.intrinsics
        cams.append(
            {
                "name": cam.name,
                "intrinsics": {
                    "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                    "width": k.width, "height": k.height,
                },
                "rotation": [float(x) for x in cam.pose.rotation.ravel()],
                "translation": [float(x) for x in cam.pose.translation],
            }
        )
    return {"convention": "camera-to-body", "reference_index": rig.reference_index, "cameras": cams}


def rig_from_dict(doc: dict) -> CameraRig:
    conv = doc.get("convention", "camera-to-body")
    if conv != "camera-to-body":
        raise ValueError(f"unsupported extrinsics convention {conv!r}; expected 'camera-to-body'")
    cams = []
    for c in doc["cameras"]:
        k = c["intrinsics"]
        intr = Intrinsics(
            float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]),
            int(k["width"]), int(k["height"]),
        )
        R = np.asarray(c["rotation"], dtype=np.float64).reshape(3, 3)
        cams.append(Camera(intr, Pose(R, np.asarray(c["translation"], dtype=np.float64)), str(c["name"])))
    return CameraRig(tuple(cams), int(doc.get("reference_index", 0)))


def save_rig(rig: CameraRig, path) -> None:
    Path(path).write_text(json.dumps(rig_to_dict(rig), indent=2))


def load_rig(path) -> CameraRig:
    return rig_from_dict(json.loads(Path(path).read_text()))


def _parse_bool(s) -> bool:
    if isinstance(s, bool):
        return s
    return str(s).strip().lower() in ("1", "true", "yes", "y", "t")


def _pose_from_record(rec: dict) -> EgoPose:
    speed = float(rec.get("speed", 0.0))
    reverse = _parse_bool(rec.get("reverse", False))
    if speed < 0:
        speed, reverse = -speed, True
    return EgoPose(float(rec["t"]), float(rec["x"]), float(rec["y"]), float(rec["yaw"]), speed, reverse)


def trajectory_from_records(records: Iterable[dict], rate_hz: float = DEFAULT_RATE_HZ) -> Trajectory:
    return Trajectory(tuple(_pose_from_record(r) for r in records), rate_hz)


def load_trajectory(path, rate_hz: float | None = None) -> Trajectory:
    """Read a trajectory from CSV (``t,x,y,yaw,speed,reverse``) or JSON lines."""
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".jsonl", ".ndjson") or text.lstrip().startswith("{"):
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
    else:
        reader = csv.DictReader(text.splitlines())
        missing = {"t", "x", "y", "yaw"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: trajectory CSV missing columns {sorted(missing)}")
        records = list(reader)
    if rate_hz is None:
        ts = [float(r["t"]) for r in records]
        rate_hz = 1.0 / float(np.median(np.diff(ts))) if len(ts) > 1 else DEFAULT_RATE_HZ
    return trajectory_from_records(records, rate_hz)


def save_trajectory(traj: Trajectory, path) -> None:
    path = Path(path)
    if path.suffix in (".jsonl", ".ndjson"):
        lines = [
            json.dumps({"t": p.t, "x": p.x, "y": p.y, "yaw": p.yaw, "speed": p.speed, "reverse": p.reverse})
            for p in traj
        ]
        path.write_text("\n".join(lines) + "\n")
        return
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJ_FIELDS)
        for p in traj:
            w.writerow([repr(p.t), repr(p.x), repr(p.y), repr(p.yaw), repr(p.speed), int(p.reverse)])
