"""Trajectory alignment and closed-loop evaluation metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import ORTHO_TOL, Pose, Trajectory, load_trajectory, rot_z


class DegenerateAlignment(ValueError):
    """Point sets too degenerate (collinear or coincident) to fix a similarity."""


@dataclass(frozen=True, eq=False)
class Sim3:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Sim3":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation

    def apply_pose(self, pose: Pose) -> Pose:
        return Pose(self.rotation @ pose.rotation, self.apply(pose.translation), check=False)

    def inverse(self) -> "Sim3":
        Rt = self.rotation.T
        return Sim3(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)


def _positions(seq) -> np.ndarray:
    if isinstance(seq, np.ndarray):
        return np.asarray(seq, dtype=np.float64).reshape(-1, 3)
    return np.array([p.translation for p in seq], dtype=np.float64).reshape(-1, 3)


def sim3_align(est, gt) -> Sim3:
    """Least-squares similarity mapping ``est`` positions onto ``gt`` (Umeyama).

    Accepts (N, 3) arrays or sequences of :class:`Pose`.
    """
    src, dst = _positions(est), _positions(gt)
    if src.shape != dst.shape:
        raise ValueError(f"length mismatch: {len(src)} estimated vs {len(dst)} reference positions")
    n = len(src)
    if n < 3:
        raise DegenerateAlignment("need at least three positions")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    for name, x in (("estimated", xs), ("reference", xd)):
        sv = np.linalg.svd(x, compute_uv=False)
        if sv[0] == 0 or sv[1] <= 1e-10 * sv[0]:
            raise DegenerateAlignment(f"{name} positions are collinear or coincident")
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_s = (xs**2).sum() / n
    scale = float(np.trace(np.diag(D) @ S) / var_s)
    t = mu_d - scale * R @ mu_s
    return Sim3(scale, R, t)


def alignment_residual(sim: Sim3, est, gt) -> float:
    """RMS distance between aligned ``est`` and ``gt`` positions."""
    d = sim.apply(_positions(est)) - _positions(gt)
    return float(np.sqrt((d**2).sum(axis=1).mean()))


def rotation_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, stable near zero."""
    R = Ra.T @ Rb
    sin = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    cos = 0.5 * (np.trace(R) - 1.0)
    return float(math.atan2(sin, cos))


def path_length(points: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def pose_errors(est: Sequence[Pose], gt: Sequence[Pose], sim: Sim3 | None = None):
    """``(RotErr, TransErr)`` after applying ``sim`` to ``est``.

    RotErr is the mean per-frame geodesic angle in radians. TransErr is the
    mean position error divided by the reference path length.
    """
    if len(est) != len(gt):
        raise ValueError(f"length mismatch: {len(est)} vs {len(gt)}")
    sim = sim or Sim3.identity()
    aligned = [sim.apply_pose(p) for p in est]
    rot = float(np.mean([rotation_angle(a.rotation, g.rotation) for a, g in zip(aligned, gt)]))
    gpos = _positions(gt)
    length = path_length(gpos)
    if length <= 0:
        raise ValueError("reference trajectory has zero length")
    dist = np.linalg.norm(_positions(aligned) - gpos, axis=1)
    return rot, float(dist.mean() / length)


def trajectory_poses(traj: Trajectory) -> list:
    """Planar ego trajectory as SE(3) poses on z = 0."""
    return [Pose(rot_z(p.yaw), np.array([p.x, p.y, 0.0]), check=False) for p in traj]


def load_pose_sequence(path) -> list:
    """Poses from CSV: either ``t,x,y,z,qw,qx,qy,qz`` or a planar trajectory."""
    path = Path(path)
    text = path.read_text()
    header = next(csv.reader(io.StringIO(text)), [])
    if {"qw", "qx", "qy", "qz", "z"} <= set(header):
        from scipy.spatial.transform import Rotation

        out = []
        for row in csv.DictReader(io.StringIO(text)):
            q = [float(row[k]) for k in ("qx", "qy", "qz", "qw")]
            R = Rotation.from_quat(q).as_matrix()
            out.append(Pose(R, np.array([float(row["x"]), float(row["y"]), float(row["z"])]), check=False))
        return out
    return trajectory_poses(load_trajectory(path))


# -- closed-loop suite metrics ---------------------------------------------------------


@dataclass(frozen=True)
class ScenarioResult:
    scenario_id: str
    passed: bool
    average_reward: float
    termination: str
    episode_length: int

    def __post_init__(self):
        if self.passed and self.termination != "horizon":
            raise ValueError("a passed scenario must have reached the horizon")

    @classmethod
    def from_log(cls, log, criterion=None) -> "ScenarioResult":
        return cls(log.scenario_id, log.passed(criterion), log.average_reward, log.termination, len(log))

    def as_dict(self) -> dict:
        return asdict(self)


def scenario_pass_rate(results: Sequence[ScenarioResult]) -> float:
    if not results:
        raise ValueError("no scenario results")
    return sum(1 for r in results if r.passed) / len(results)


def reward_histogram(results: Sequence[ScenarioResult], n_bins: int = 10) -> list:
    """``(bin_lo, bin_hi, count)`` over uniform bins spanning the observed averages."""
    if not results:
        raise ValueError("no scenario results")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    values = np.array([r.average_reward for r in results], dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        edges = np.linspace(lo, lo, n_bins + 1)
        counts = np.zeros(n_bins, dtype=np.int64)
        counts[0] = len(values)
    else:
        counts, edges = np.histogram(values, bins=n_bins, range=(lo, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(n_bins)]


def histogram_csv(bins) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("bin_lo", "bin_hi", "count"))
    for lo, hi, c in bins:
        w.writerow((repr(lo), repr(hi), c))
    return buf.getvalue()


def batch_report(results: Sequence[ScenarioResult]) -> dict:
    ordered = sorted(results, key=lambda r: r.scenario_id)
    return {
        "results": [r.as_dict() for r in ordered],
        "summary": {
            "spr": scenario_pass_rate(ordered),
            "mean_reward": float(np.mean([r.average_reward for r in ordered])),
        },
    }
