"""Semantic occupancy grids: fusion from panoramic depth/semantics, ray-marched
rendering, spatial queries, IoU metrics and run-length encoded storage."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import CameraRig, EgoPose, rig_world_cameras, rot_z
from .raymap import _pixel_rays_cam

GRID_MAGIC = b"ONWM-OG1"
MAX_RUN = 0xFFFFFFFF

# per-label role byte stored after each taxonomy name
ROLE_OTHER, ROLE_FREE, ROLE_DRIVABLE, ROLE_OBSTACLE = 0, 1, 2, 3


class GridFormatError(ValueError):
    """Raised for corrupt or inconsistent occupancy grid files."""


@dataclass(frozen=True)
class SemanticTaxonomy:
    labels: tuple = ("free", "drivable surface", "sidewalk", "car", "truck", "pedestrian", "barrier")
    obstacle_set: frozenset = frozenset({"car", "truck", "pedestrian", "barrier"})
    drivable_label: str = "drivable surface"
    free_label: str = "free"

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "obstacle_set", frozenset(self.obstacle_set))
        if len(set(labels)) != len(labels):
            raise ValueError(f"taxonomy labels must be unique: {labels}")
        for name in (self.drivable_label, self.free_label, *self.obstacle_set):
            if name not in labels:
                raise ValueError(f"label {name!r} not in taxonomy {labels}")
        if self.drivable_label in self.obstacle_set or self.free_label in self.obstacle_set:
            raise ValueError("drivable and free labels cannot be obstacles")
        if self.drivable_label == self.free_label:
            raise ValueError("drivable and free labels must differ")

    def index(self, name: str) -> int:
        return self.labels.index(name)

    @property
    def free(self) -> int:
        return self.labels.index(self.free_label)

    @property
    def drivable(self) -> int:
        return self.labels.index(self.drivable_label)

    @property
    def obstacle_indices(self) -> frozenset:
        return frozenset(self.labels.index(n) for n in self.obstacle_set)

    def role(self, name: str) -> int:
        if name == self.free_label:
            return ROLE_FREE
        if name == self.drivable_label:
            return ROLE_DRIVABLE
        if name in self.obstacle_set:
            return ROLE_OBSTACLE
        return ROLE_OTHER


DEFAULT_TAXONOMY = SemanticTaxonomy()


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32).astype(np.float64)


@dataclass(frozen=True)
class GridGeometry:
    """Voxel lattice placement. Origin and voxel size are held at float32
    precision so that geometry survives the binary format unchanged."""

    origin: tuple = (-51.2, -51.2, -5.0)
    voxel_size: float = 0.2
    dims: tuple = (512, 512, 40)

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise ValueError(f"voxel size must be positive, got {self.voxel_size}")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        object.__setattr__(self, "origin", tuple(float(v) for v in _f32(self.origin)))
        object.__setattr__(self, "voxel_size", float(_f32(self.voxel_size)))
        object.__setattr__(self, "dims", dims)

    @classmethod
    def from_bounds(cls, lo: Sequence[float], hi: Sequence[float], voxel_size: float) -> "GridGeometry":
        dims = [int(round((b - a) / voxel_size)) for a, b in zip(lo, hi)]
        return cls(tuple(lo), voxel_size, tuple(dims))

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + self.voxel_size * np.asarray(self.dims)

    def voxel_index(self, points: np.ndarray) -> tuple:
        """Integer voxel indices (floor convention) and an in-bounds mask."""
        p = np.asarray(points, dtype=np.float64)
        ijk = np.floor((p - np.asarray(self.origin)) / self.voxel_size)
        ok = np.all(np.isfinite(ijk), axis=-1)
        ok &= np.all((ijk >= 0) & (ijk < np.asarray(self.dims)), axis=-1)
        ijk = np.where(ok[..., None], ijk, 0).astype(np.int64)
        return ijk, ok

    def centers(self, ix, iy, iz) -> np.ndarray:
        idx = np.stack(np.broadcast_arrays(ix, iy, iz), axis=-1).astype(np.float64)
        return np.asarray(self.origin) + (idx + 0.5) * self.voxel_size

    def all_centers(self) -> np.ndarray:
        ix, iy, iz = np.meshgrid(*(np.arange(d) for d in self.dims), indexing="ij")
        return self.centers(ix, iy, iz)


@dataclass(frozen=True, eq=False)
class SemanticOccupancyGrid:
    """Voxel labels indexed ``labels[ix, iy, iz]`` (x slowest when flattened)."""

    geometry: GridGeometry
    labels: np.ndarray
    taxonomy: SemanticTaxonomy = field(default=DEFAULT_TAXONOMY)

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.shape != self.geometry.dims:
            raise ValueError(f"labels shape {lab.shape} does not match dims {self.geometry.dims}")
        lab = lab.astype(np.uint16)
        if lab.size and int(lab.max()) >= len(self.taxonomy.labels):
            raise ValueError(f"label index {int(lab.max())} outside taxonomy of {len(self.taxonomy.labels)}")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def empty(cls, geometry: GridGeometry, taxonomy: SemanticTaxonomy = DEFAULT_TAXONOMY):
        return cls(geometry, np.full(geometry.dims, taxonomy.free, dtype=np.uint16), taxonomy)

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.geometry.origin)

    @property
    def voxel_size(self) -> float:
        return self.geometry.voxel_size

    @property
    def dims(self) -> tuple:
        return self.geometry.dims

    def with_labels(self, labels: np.ndarray) -> "SemanticOccupancyGrid":
        return SemanticOccupancyGrid(self.geometry, labels, self.taxonomy)

    def __eq__(self, other):
        if not isinstance(other, SemanticOccupancyGrid):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.taxonomy == other.taxonomy
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class OccupancySequence:
    grids: tuple
    timestamps: tuple

    def __post_init__(self):
        grids, ts = tuple(self.grids), tuple(float(t) for t in self.timestamps)
        if len(grids) != len(ts) or not grids:
            raise ValueError("sequence needs one timestamp per grid and at least one grid")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamps must be strictly increasing")
        g0 = grids[0]
        for g in grids[1:]:
            if g.geometry != g0.geometry or g.taxonomy != g0.taxonomy:
                raise ValueError("all grids of a sequence must share geometry and taxonomy")
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return len(self.grids)

    def nearest(self, t: float, tol: float = 1e-6) -> SemanticOccupancyGrid:
        """Grid whose timestamp is closest to ``t`` (earlier wins ties)."""
        ts = np.asarray(self.timestamps)
        if t < ts[0] - tol or t > ts[-1] + tol:
            raise ValueError(f"time {t} outside sequence range [{ts[0]}, {ts[-1]}]")
        return self.grids[int(np.argmin(np.abs(ts - t)))]


@dataclass(frozen=True)
class OrientedBox:
    """Box with full side lengths ``size`` rotated by ``rotation`` (box-to-world)."""

    center: tuple
    size: tuple
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3), compare=False)

    def __post_init__(self):
        if min(self.size) <= 0:
            raise ValueError(f"box extents must be positive, got {self.size}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))

    @classmethod
    def from_yaw(cls, center, size, yaw: float) -> "OrientedBox":
        return cls(center, size, rot_z(yaw))

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
        return (signs * 0.5 * np.asarray(self.size)) @ self.rotation.T + np.asarray(self.center)

    def contains(self, points: np.ndarray) -> np.ndarray:
        local = (np.asarray(points) - np.asarray(self.center)) @ self.rotation
        return np.all(np.abs(local) <= 0.5 * np.asarray(self.size), axis=-1)


# -- queries ------------------------------------------------------------------


def label_at(grid: SemanticOccupancyGrid, point) -> int:
    """Label of the voxel containing ``point``; free outside the grid.

    Voxel indices use ``floor``, so a point on a shared face belongs to the
    voxel for which that face is the lower bound.
    """
    ijk, ok = grid.geometry.voxel_index(np.asarray(point, dtype=np.float64))
    if not ok:
        return grid.taxonomy.free
    return int(grid.labels[tuple(ijk)])


def labels_at(grid: SemanticOccupancyGrid, points: np.ndarray) -> np.ndarray:
    ijk, ok = grid.geometry.voxel_index(points)
    out = grid.labels[ijk[..., 0], ijk[..., 1], ijk[..., 2]].astype(np.int64)
    return np.where(ok, out, grid.taxonomy.free)


def query_box(grid: SemanticOccupancyGrid, box: OrientedBox, classes) -> int:
    """Number of voxels whose centers lie in ``box`` and whose label is in ``classes``."""
    classes = np.fromiter((int(c) for c in classes), dtype=np.int64)
    if classes.size == 0:
        return 0
    geo = grid.geometry
    corners = box.corners()
    lo = np.floor((corners.min(axis=0) - geo.origin) / geo.voxel_size - 0.5).astype(np.int64)
    hi = np.ceil((corners.max(axis=0) - geo.origin) / geo.voxel_size - 0.5).astype(np.int64) + 1
    lo = np.clip(lo, 0, geo.dims)
    hi = np.clip(hi, 0, geo.dims)
    if np.any(hi <= lo):
        return 0
    sub = grid.labels[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    hit = np.isin(sub, classes)
    if not hit.any():
        return 0
    ii = np.nonzero(hit)
    centers = geo.centers(ii[0] + lo[0], ii[1] + lo[1], ii[2] + lo[2])
    return int(box.contains(centers).sum())


def iou_miou(pred: SemanticOccupancyGrid, gt: SemanticOccupancyGrid, mask: np.ndarray | None = None):
    """Binary occupancy IoU, mean per-class IoU and the per-class table.

    Classes absent from both grids are left out of the mean; an empty union
    gives NaN. ``mask`` restricts evaluation to a voxel subset.
    """
    if pred.geometry != gt.geometry or pred.taxonomy != gt.taxonomy:
        raise ValueError("pred and gt must share geometry and taxonomy")
    p, g = pred.labels, gt.labels
    if mask is not None:
        p, g = p[mask], g[mask]
    free = gt.taxonomy.free
    po, go = p != free, g != free
    union = np.count_nonzero(po | go)
    iou = np.count_nonzero(po & go) / union if union else math.nan
    per_class = {}
    for idx, name in enumerate(gt.taxonomy.labels):
        if idx == free:
            continue
        pc, gc = p == idx, g == idx
        u = np.count_nonzero(pc | gc)
        if u:
            per_class[name] = np.count_nonzero(pc & gc) / u
    miou = float(np.mean(list(per_class.values()))) if per_class else math.nan
    return float(iou), miou, per_class


# -- rendering and fusion -------------------------------------------------------


def _world_rays(rig: CameraRig, ego: EgoPose, h: int, w: int):
    """Per-view (center (3,), unit directions (h, w, 3)) in the world frame."""
    out = []
    for intr, pose in rig_world_cameras(rig, ego):
        d = _pixel_rays_cam(intr, h, w) @ pose.rotation.T
        out.append((pose.translation, d / np.linalg.norm(d, axis=-1, keepdims=True)))
    return out


def _ray_box_range(center: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - center) * inv
        t2 = (hi - center) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    return np.maximum(tmin, 0.0), tmax


def render_views(
    grid: SemanticOccupancyGrid,
    rig: CameraRig,
    ego: EgoPose,
    h: int,
    w: int,
    chunk: int = 128,
):
    """Ray-march every pixel of every view until the first non-free voxel.

    Samples are taken at multiples of half a voxel along each ray. Returns a
    list of ``(depth, semantic)`` per view; missed pixels get depth ``nan``
    and the free label. Depth is the distance along the (unit) ray.
    """
    geo = grid.geometry
    free = grid.taxonomy.free
    step = 0.5 * geo.voxel_size
    lo, hi = np.asarray(geo.origin), geo.upper
    out = []
    for center, dirs in _world_rays(rig, ego, h, w):
        d = dirs.reshape(-1, 3)
        n = d.shape[0]
        depth = np.full(n, np.nan)
        sem = np.full(n, free, dtype=np.int64)
        t_in, t_out = _ray_box_range(center, d, lo, hi)
        active = np.nonzero(t_out >= t_in)[0]
        if active.size:
            k_start = np.maximum(np.ceil(t_in[active] / step), 1).astype(np.int64)
            k_end = np.floor(t_out[active] / step).astype(np.int64)
            k_span = int((k_end - k_start).max()) + 1 if active.size else 0
            pending = np.ones(active.size, dtype=bool)
            for off in range(0, max(k_span, 0), chunk):
                rows = np.nonzero(pending)[0]
                if rows.size == 0:
                    break
                ks = k_start[rows, None] + off + np.arange(chunk)[None, :]
                t = ks * step
                pts = center + t[..., None] * d[active[rows], None, :]
                lab = labels_at(grid, pts)
                lab[ks > k_end[rows, None]] = free
                hit = lab != free
                any_hit = hit.any(axis=1)
                first = np.argmax(hit, axis=1)
                r = rows[any_hit]
                depth[active[r]] = t[any_hit, first[any_hit]]
                sem[active[r]] = lab[any_hit, first[any_hit]]
                pending[r] = False
        out.append((depth.reshape(h, w), sem.reshape(h, w)))
    return out


def fuse_from_panorama(
    rig: CameraRig,
    ego: EgoPose,
    depth_maps: Sequence[np.ndarray],
    semantic_maps: Sequence[np.ndarray],
    geometry: GridGeometry,
    taxonomy: SemanticTaxonomy = DEFAULT_TAXONOMY,
) -> SemanticOccupancyGrid:
    """Unproject labelled depth pixels and majority-vote them into voxels.

    Depth is metric distance along each pixel-center ray; non-finite or
    non-positive depths are ignored. Vote ties go to the lower taxonomy index
    and voxels without votes stay free.
    """
    if len(depth_maps) != len(rig) or len(semantic_maps) != len(rig):
        raise ValueError(
            f"expected {len(rig)} depth and semantic maps, got {len(depth_maps)} and {len(semantic_maps)}"
        )
    n_labels = len(taxonomy.labels)
    votes = np.zeros(geometry.n_voxels * n_labels, dtype=np.int64)
    nx, ny, nz = geometry.dims
    for k, (intr, pose) in enumerate(rig_world_cameras(rig, ego)):
        depth = np.asarray(depth_maps[k], dtype=np.float64)
        sem = np.asarray(semantic_maps[k])
        if depth.shape != sem.shape or depth.ndim != 2:
            raise ValueError(f"view {k}: depth {depth.shape} and semantics {sem.shape} must be aligned 2-D maps")
        h, w = depth.shape
        d = _pixel_rays_cam(intr, h, w) @ pose.rotation.T
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        valid = np.isfinite(depth) & (depth > 0)
        if not valid.any():
            continue
        pts = pose.translation + depth[valid][:, None] * d[valid]
        lab = sem[valid].astype(np.int64)
        if lab.size and (lab.min() < 0 or lab.max() >= n_labels):
            raise ValueError(f"view {k}: semantic label outside taxonomy")
        ijk, ok = geometry.voxel_index(pts)
        flat = (ijk[ok, 0] * ny + ijk[ok, 1]) * nz + ijk[ok, 2]
        np.add.at(votes, flat * n_labels + lab[ok], 1)
    votes = votes.reshape(geometry.n_voxels, n_labels)
    labels = np.argmax(votes, axis=1)
    labels[votes.max(axis=1) == 0] = taxonomy.free
    return SemanticOccupancyGrid(geometry, labels.reshape(geometry.dims), taxonomy)


def visible_mask(grid: SemanticOccupancyGrid, rig: CameraRig, ego: EgoPose, renders) -> np.ndarray:
    """Voxels hit by at least one rendered ray."""
    mask = np.zeros(grid.dims, dtype=bool)
    for (center, dirs), (depth, _) in zip(_world_rays(rig, ego, *renders[0][0].shape), renders):
        ok = np.isfinite(depth)
        pts = center + depth[ok][:, None] * dirs[ok]
        ijk, inb = grid.geometry.voxel_index(pts)
        mask[ijk[inb, 0], ijk[inb, 1], ijk[inb, 2]] = True
    return mask


# -- serialization ---------------------------------------------------------------


def rle_encode(flat: np.ndarray):
    flat = np.asarray(flat).ravel()
    if flat.size == 0:
        return np.zeros(0, dtype=np.uint16), np.zeros(0, dtype=np.uint64)
    starts = np.concatenate([[0], np.flatnonzero(flat[1:] != flat[:-1]) + 1])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    return flat[starts].astype(np.uint16), lengths.astype(np.uint64)


def write_grid(grid: SemanticOccupancyGrid, path) -> None:
    """Write as ``ONWM-OG1``.

    Layout (little endian): magic, origin f32x3, voxel f32, dims u32x3,
    label count u32, then per label a u32 byte length, the UTF-8 name and a
    u8 role (0 other, 1 free, 2 drivable, 3 obstacle); then (label u16,
    run u32) pairs until end of file, x-major.
    """
    geo, tax = grid.geometry, grid.taxonomy
    parts = [GRID_MAGIC, struct.pack("<3ff3I", *geo.origin, geo.voxel_size, *geo.dims)]
    parts.append(struct.pack("<I", len(tax.labels)))
    for name in tax.labels:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<B", tax.role(name)))
    values, runs = rle_encode(grid.labels)
    # split runs that overflow u32
    reps = ((runs + MAX_RUN - 1) // MAX_RUN).astype(np.int64)
    if np.any(reps > 1):
        vals, lens = [], []
        for v, r in zip(values, runs):
            while r > MAX_RUN:
                vals.append(v)
                lens.append(MAX_RUN)
                r -= MAX_RUN
            vals.append(v)
            lens.append(r)
        values, runs = np.array(vals, dtype=np.uint16), np.array(lens, dtype=np.uint64)
    pairs = np.empty(values.size, dtype=[("label", "<u2"), ("run", "<u4")])
    pairs["label"] = values
    pairs["run"] = runs
    parts.append(pairs.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_grid(path) -> SemanticOccupancyGrid:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise GridFormatError(f"{path}: truncated header at byte {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(len(GRID_MAGIC)) != GRID_MAGIC:
        raise GridFormatError(f"{path}: bad magic, expected {GRID_MAGIC!r}")
    ox, oy, oz, vs, nx, ny, nz = struct.unpack("<3ff3I", take(28))
    (n_labels,) = struct.unpack("<I", take(4))
    if n_labels == 0 or n_labels > 0xFFFF:
        raise GridFormatError(f"{path}: implausible label count {n_labels}")
    names, roles = [], []
    for _ in range(n_labels):
        (ln,) = struct.unpack("<I", take(4))
        try:
            names.append(take(ln).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise GridFormatError(f"{path}: label name is not UTF-8") from exc
        roles.append(take(1)[0])
    try:
        free = names[roles.index(ROLE_FREE)]
        drivable = names[roles.index(ROLE_DRIVABLE)]
        taxonomy = SemanticTaxonomy(
            tuple(names), frozenset(n for n, r in zip(names, roles) if r == ROLE_OBSTACLE), drivable, free
        )
        geometry = GridGeometry((ox, oy, oz), vs, (nx, ny, nz))
    except ValueError as exc:
        raise GridFormatError(f"{path}: invalid header: {exc}") from exc
    body = buf[pos:]
    if len(body) % 6:
        raise GridFormatError(f"{path}: payload of {len(body)} bytes is not a whole number of runs")
    pairs = np.frombuffer(body, dtype=[("label", "<u2"), ("run", "<u4")])
    runs = pairs["run"].astype(np.int64)
    total = int(runs.sum())
    if total != geometry.n_voxels:
        raise GridFormatError(f"{path}: run lengths sum to {total}, expected {geometry.n_voxels}")
    if np.any(runs == 0):
        raise GridFormatError(f"{path}: zero-length run")
    if pairs.size and int(pairs["label"].max()) >= n_labels:
        raise GridFormatError(f"{path}: label index {int(pairs['label'].max())} outside taxonomy")
    flat = np.repeat(pairs["label"], runs)
    return SemanticOccupancyGrid(geometry, flat.reshape(geometry.dims), taxonomy)


SEQUENCE_INDEX = "sequence.json"


def write_sequence(seq: OccupancySequence, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for i, g in enumerate(seq.grids):
        name = f"frame_{i:05d}.og1"
        write_grid(g, d / name)
        files.append(name)
    (d / SEQUENCE_INDEX).write_text(json.dumps({"timestamps": list(seq.timestamps), "files": files}, indent=1))


def read_sequence(directory) -> OccupancySequence:
    d = Path(directory)
    index = d / SEQUENCE_INDEX
    if not index.is_file():
        raise FileNotFoundError(f"{index}: no occupancy sequence index")
    doc = json.loads(index.read_text())
    grids = [read_grid(d / f) for f in doc["files"]]
    return OccupancySequence(tuple(grids), tuple(doc["timestamps"]))
