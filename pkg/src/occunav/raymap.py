"""Plücker ray-maps: per-pixel (moment, direction) encodings of camera rays.

A ray through camera center ``o`` with unit direction ``d`` is stored as the
6-vector ``(o x d, d)``. Normalized panoramic ray-maps express every view
with the reference camera's intrinsics and in the reference camera's frame,
so they do not change when the whole trajectory is moved rigidly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import (
    CameraRig,
    Intrinsics,
    Pose,
    Trajectory,
    pixel_direction,
    rig_world_cameras,
)

RAYMAP_MAGIC = b"ONWM-RM1"
_HEADER = struct.Struct("<8s4I")


class RayMapFormatError(ValueError):
    """Raised for malformed or truncated ray-map files."""


class PluckerRay(NamedTuple):
    moment: np.ndarray
    direction: np.ndarray


@dataclass(frozen=True)
class NormalizationConfig:
    """Options for :func:`normalized_raymap`.

    ``anchor="frame"`` normalizes every frame against that frame's own
    reference camera. ``anchor="sequence"`` uses the reference camera of the
    first frame for all frames, so ego motion shows up in the moments.
    """

    reference_index: int | None = None
    printed_transform: bool = False
    anchor: str = "frame"

    def __post_init__(self):
        if self.anchor not in ("frame", "sequence"):
            raise ValueError(f"anchor must be 'frame' or 'sequence', got {self.anchor!r}")


@dataclass(frozen=True, eq=False)
class RayMap:
    data: np.ndarray  # (n_frames, n_views, height, width, 6)

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 5 or a.shape[-1] != 6:
            raise ValueError(f"ray-map data must have shape (F, V, H, W, 6), got {a.shape}")
        if not np.issubdtype(a.dtype, np.floating):
            a = a.astype(np.float64)
        object.__setattr__(self, "data", a)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_views(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def moments(self) -> np.ndarray:
        return self.data[..., :3]

    @property
    def directions(self) -> np.ndarray:
        return self.data[..., 3:]

    def max_orthogonality_error(self) -> float:
        d = self.data.astype(np.float64)
        return float(np.abs(np.einsum("...i,...i->...", d[..., :3], d[..., 3:])).max())

    def __eq__(self, other):
        if not isinstance(other, RayMap):
            return NotImplemented
        return self.data.dtype == other.data.dtype and np.array_equal(self.data, other.data)


def plucker_embed(intr: Intrinsics, pose: Pose, u: float, v: float, *, printed_form: bool = False) -> PluckerRay:
    d = pixel_direction(intr, pose, u, v, printed_form=printed_form)
    return PluckerRay(np.cross(pose.translation, d), d)


def _pixel_rays_cam(intr: Intrinsics, h: int, w: int) -> np.ndarray:
    """Homogeneous K^-1 [u+0.5, v+0.5, 1] for an h x w grid, shape (h, w, 3).

    ``intr`` is rescaled to ``(w, h)`` when the requested grid differs from
    the calibrated image size.
    """
    if (intr.width, intr.height) != (w, h):
        intr = intr.scaled(w, h)
    us = np.arange(w, dtype=np.float64) + 0.5
    vs = np.arange(h, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(us, vs)
    pix = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    return pix @ intr.inverse.T


def _assemble(center: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    moments = np.cross(np.broadcast_to(center, dirs.shape), dirs)
    return np.concatenate([moments, dirs], axis=-1)


def view_raymap(intr: Intrinsics, pose: Pose, h: int, w: int) -> np.ndarray:
    """(h, w, 6) Plücker grid sampled at pixel centers."""
    if h < 1 or w < 1:
        raise ValueError("ray-map extents must be >= 1")
    dirs = _pixel_rays_cam(intr, h, w) @ pose.rotation.T
    return _assemble(pose.translation, dirs)


def normalized_raymap(
    rig: CameraRig,
    traj: Trajectory,
    h: int,
    w: int,
    cfg: NormalizationConfig | None = None,
) -> RayMap:
    """Scale- and pose-normalized panoramic ray-map for every pose of ``traj``.

    All views share the reference camera's intrinsics. In the default mode a
    view ``k`` with world pose ``(R_k, t_k)`` becomes ``o = R0^T (t_k - t0)``,
    ``d = R0^T R_k K0^-1 [u, v, 1]``. With ``printed_transform`` the
    printed form ``o = R0 R_k^T (t_k - t0)``, ``d = R0 R_k^T R_k K0^-1 [u, v, 1]``
    is used instead; it is not invariant to a global rotation.
    """
    cfg = cfg or NormalizationConfig()
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    ref = rig.reference_index if cfg.reference_index is None else cfg.reference_index
    if not 0 <= ref < len(rig):
        raise ValueError(f"reference index {ref} does not match a rig with {len(rig)} cameras")
    frames = [[pose for _, pose in rig_world_cameras(rig, ego)] for ego in traj]
    return normalized_raymap_from_poses(frames, rig.cameras[ref].intrinsics, ref, h, w, cfg)


def normalized_raymap_from_poses(
    frames: Sequence[Sequence[Pose]],
    ref_intrinsics: Intrinsics,
    ref: int,
    h: int,
    w: int,
    cfg: NormalizationConfig | None = None,
) -> RayMap:
    """Normalized ray-map from per-frame lists of world camera poses."""
    cfg = cfg or NormalizationConfig()
    if not frames:
        raise ValueError("no frames")
    if h < 1 or w < 1:
        raise ValueError("ray-map extents must be >= 1")
    n_views = len(frames[0])
    if any(len(f) != n_views for f in frames) or not 0 <= ref < n_views:
        raise ValueError("every frame needs the same number of views, including the reference")
    rays_k0 = _pixel_rays_cam(ref_intrinsics, h, w)
    out = np.empty((len(frames), n_views, h, w, 6), dtype=np.float64)
    anchor = None
    for i, poses in enumerate(frames):
        if anchor is None or cfg.anchor == "frame":
            anchor = poses[ref]
        R0, t0 = anchor.rotation, anchor.translation
        for k, pose in enumerate(poses):
            Rk, tk = pose.rotation, pose.translation
            if cfg.printed_transform:
                M = R0 @ Rk.T
                center = M @ (tk - t0)
                dirs = rays_k0 @ (M @ Rk).T
            else:
                center = R0.T @ (tk - t0)
                dirs = rays_k0 @ (R0.T @ Rk).T
            out[i, k] = _assemble(center, dirs)
    return RayMap(out)


def downsample(raymap: RayMap, spatial_factor: int, temporal_factor: int) -> RayMap:
    """Block-average pixels and stride frames.

    Direction channels are renormalized after averaging.
    """
    s, f = int(spatial_factor), int(temporal_factor)
    if s < 1 or f < 1:
        raise ValueError("factors must be >= 1")
    F, V, H, W, _ = raymap.data.shape
    if H % s or W % s or F % f:
        raise ValueError(f"factors (spatial={s}, temporal={f}) must divide extents (F={F}, H={H}, W={W})")
    if s == 1 and f == 1:
        return RayMap(raymap.data.copy())
    data = raymap.data[::f]
    blocks = data.reshape(data.shape[0], V, H // s, s, W // s, s, 6).mean(axis=(3, 5))
    dirs = blocks[..., 3:]
    blocks[..., 3:] = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    return RayMap(blocks.astype(raymap.data.dtype, copy=False))


def write_raymap(raymap: RayMap, path) -> None:
    """Write as ``ONWM-RM1``: u32 header then float32 payload (F, V, H, W, 6)."""
    F, V, H, W, _ = raymap.data.shape
    payload = np.ascontiguousarray(raymap.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RAYMAP_MAGIC, F, V, H, W))
        fh.write(payload.tobytes())


def read_raymap(path) -> RayMap:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise RayMapFormatError(f"{path}: file too short for ray-map header ({len(buf)} bytes)")
    magic, F, V, H, W = _HEADER.unpack_from(buf)
    if magic != RAYMAP_MAGIC:
        raise RayMapFormatError(f"{path}: bad magic {magic!r}, expected {RAYMAP_MAGIC!r}")
    expected = F * V * H * W * 6 * 4
    got = len(buf) - _HEADER.size
    if got != expected:
        raise RayMapFormatError(f"{path}: payload length {got} bytes, header implies {expected}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(F, V, H, W, 6)
    return RayMap(data.astype(np.float32))
