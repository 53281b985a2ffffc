"""Obstacle representation: point clouds, voxel occupancy, dynamic spheres.

The static point cloud is voxelized once per scenario; per-replan dynamic
obstacles (teammate plans, predicted target) are overlaid as spheres on a
copy of the static grid and as surface samples on the cloud.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Trajectory

DEFAULT_RESOLUTION = 0.25
DEFAULT_INFLATION = 1.0
MAX_CELLS = 40_000_000


class GridBudgetError(RuntimeError):
    """Requested voxel grid exceeds the configured cell budget."""


@dataclass(frozen=True)
class DynamicObstacleSet:
    """Spheres injected into a per-replan map snapshot.

    ``valid_from_step`` supports an optional time-aware mode; the default
    planners treat every sphere as active for the whole horizon.
    """

    spheres: np.ndarray  # (K, 4): x, y, z, radius
    valid_from_step: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        s = np.asarray(self.spheres, dtype=float).reshape(-1, 4)
        if np.any(s[:, 3] <= 0.0):
            raise ValueError("sphere radius must be positive")
        object.__setattr__(self, "spheres", s)
        vfs = np.asarray(self.valid_from_step, dtype=int).reshape(-1)
        if vfs.size == 0:
            vfs = np.zeros(len(s), dtype=int)
        if len(vfs) != len(s):
            raise ValueError("valid_from_step length mismatch")
        object.__setattr__(self, "valid_from_step", vfs)


def _fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic, roughly uniform unit-sphere samples."""
    i = np.arange(n, dtype=float)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


_SPHERE_SAMPLES = _fibonacci_sphere(42)


@dataclass(frozen=True)
class ObstacleCloud:
    """Point-cloud obstacle set, optionally augmented with dynamic spheres."""

    points: np.ndarray  # (M, 3)
    inflation_radius: float = DEFAULT_INFLATION
    spheres: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("cloud points must be finite")
        if self.inflation_radius < 0.0:
            raise ValueError("inflation_radius must be >= 0")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "spheres", np.asarray(self.spheres, dtype=float).reshape(-1, 4))

    def with_spheres(self, dyn: DynamicObstacleSet) -> "ObstacleCloud":
        merged = np.vstack([self.spheres, dyn.spheres]) if len(self.spheres) else dyn.spheres
        merged = _dedup_spheres(merged)
        return ObstacleCloud(self.points, self.inflation_radius, merged)

    def all_points(self) -> np.ndarray:
        """Static points plus surface samples of every dynamic sphere."""
        if len(self.spheres) == 0:
            return self.points
        chunks = [self.points]
        for cx, cy, cz, r in self.spheres:
            chunks.append(np.array([cx, cy, cz]) + r * _SPHERE_SAMPLES)
        return np.vstack(chunks)


def _dedup_spheres(spheres: np.ndarray) -> np.ndarray:
    if len(spheres) == 0:
        return spheres
    keys = np.round(spheres / 1e-6).astype(np.int64)
    _, idx = np.unique(keys, axis=0, return_index=True)
    return spheres[np.sort(idx)]


def inject_teammates(cloud: ObstacleCloud, trajectories, radius: float) -> ObstacleCloud:
    """Add an avoidance sphere at every waypoint of every given trajectory.

    Duplicate spheres (same center to 1e-6, same radius) are merged. The
    source cloud is never mutated.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    spheres = []
    for traj in trajectories:
        pts = traj.positions() if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float).reshape(-1, 3)
        for p in pts:
            spheres.append([p[0], p[1], p[2], radius])
    if not spheres:
        return cloud
    return cloud.with_spheres(DynamicObstacleSet(np.array(spheres)))


class VoxelGrid:
    """Dense boolean occupancy over an axis-aligned box.

    Immutable by convention after construction; per-replan overlays use
    :meth:`with_spheres`, which copies the occupancy array.
    """

    __slots__ = ("origin", "resolution", "dims", "occupancy")

    def __init__(self, origin, resolution: float, dims, occupancy: np.ndarray | None = None):
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        if resolution <= 0.0:
            raise ValueError("resolution must be positive")
        self.resolution = float(resolution)
        self.dims = tuple(int(d) for d in dims)
        if occupancy is None:
            occupancy = np.zeros(self.dims, dtype=bool)
        self.occupancy = occupancy

    # -- indexing ---------------------------------------------------------
    def cell_of(self, point) -> tuple[int, int, int]:
        c = np.floor((np.asarray(point, dtype=float) - self.origin) / self.resolution).astype(int)
        return int(c[0]), int(c[1]), int(c[2])

    def in_bounds(self, cell) -> bool:
        x, y, z = cell[0], cell[1], cell[2]
        dx, dy, dz = self.dims
        return 0 <= x < dx and 0 <= y < dy and 0 <= z < dz

    def cell_center(self, cell) -> np.ndarray:
        return self.origin + (np.asarray(cell, dtype=float) + 0.5) * self.resolution

    def is_free(self, point) -> bool:
        """Occupancy lookup; points outside the grid are treated as free."""
        cell = self.cell_of(point)
        if not self.in_bounds(cell):
            return True
        return not self.occupancy[cell]

    def is_cell_free(self, cell) -> bool:
        x, y, z = cell[0], cell[1], cell[2]
        dx, dy, dz = self.dims
        if 0 <= x < dx and 0 <= y < dy and 0 <= z < dz:
            return not self.occupancy[x, y, z]
        return False  # search stays inside the mapped box

    # -- segment test -----------------------------------------------------
    def segment_free(self, a, b) -> bool:
        """Voxel traversal visiting every cell intersected by segment a-b."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        # canonical order makes the traversal symmetric in its arguments
        if tuple(b) < tuple(a):
            a, b = b, a
        for cell in self._traverse(a, b):
            if self.in_bounds(cell) and self.occupancy[cell]:
                return False
        return True

    def _traverse(self, a: np.ndarray, b: np.ndarray):
        # Amanatides & Woo stepping with a conservative epsilon: cells whose
        # boundary is merely grazed are visited, matching a fine supersampler.
        res = self.resolution
        cell = np.floor((a - self.origin) / res).astype(int)
        end_cell = np.floor((b - self.origin) / res).astype(int)
        d = b - a
        length = float(np.linalg.norm(d))
        yield tuple(cell)
        if length == 0.0:
            return
        step = np.where(d > 0, 1, np.where(d < 0, -1, 0))
        t_max = np.full(3, np.inf)
        t_delta = np.full(3, np.inf)
        for i in range(3):
            if d[i] != 0.0:
                bound = self.origin[i] + (cell[i] + (1 if step[i] > 0 else 0)) * res
                t_max[i] = (bound - a[i]) / d[i]
                t_delta[i] = res / abs(d[i])
        guard = int(np.sum(np.abs(end_cell - cell))) + 6
        for _ in range(guard * 2 + 8):
            if np.all(cell == end_cell):
                return
            i = int(np.argmin(t_max))
            if t_max[i] > 1.0 + 1e-12:
                return
            cell[i] += step[i]
            t_max[i] += t_delta[i]
            yield tuple(cell)

    # -- dynamic overlay --------------------------------------------------
    def with_spheres(self, spheres: np.ndarray) -> "VoxelGrid":
        """Copy of the grid with cells intersecting each sphere marked."""
        spheres = np.asarray(spheres, dtype=float).reshape(-1, 4)
        if len(spheres) == 0:
            return self
        occ = self.occupancy.copy()
        for cx, cy, cz, r in spheres:
            _mark_sphere(occ, self.origin, self.resolution, np.array([cx, cy, cz]), r)
        return VoxelGrid(self.origin, self.resolution, self.dims, occ)


def _mark_sphere(occ: np.ndarray, origin: np.ndarray, res: float, center: np.ndarray, radius: float):
    lo = np.floor((center - radius - origin) / res).astype(int)
    hi = np.floor((center + radius - origin) / res).astype(int)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.array(occ.shape) - 1)
    if np.any(lo > hi):
        return
    xs = np.arange(lo[0], hi[0] + 1)
    ys = np.arange(lo[1], hi[1] + 1)
    zs = np.arange(lo[2], hi[2] + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    mins = origin + np.stack([gx, gy, gz], axis=-1) * res
    nearest = np.clip(center, mins, mins + res)
    d2 = np.sum((nearest - center) ** 2, axis=-1)
    sel = d2 <= radius * radius
    occ[gx[sel], gy[sel], gz[sel]] = True


def voxelize(cloud: ObstacleCloud, bounds, resolution: float = DEFAULT_RESOLUTION,
             max_cells: int = MAX_CELLS) -> VoxelGrid:
    """Rasterize an obstacle cloud into an occupancy grid.

    A cell is occupied iff the inflation sphere of some cloud point (or a
    dynamic sphere) intersects it. ``bounds`` is ((xmin, ymin, zmin),
    (xmax, ymax, zmax)).
    """
    lo = np.asarray(bounds[0], dtype=float).reshape(3)
    hi = np.asarray(bounds[1], dtype=float).reshape(3)
    if not np.all(hi > lo):
        raise ValueError("bounds must be non-degenerate")
    dims = np.ceil((hi - lo) / resolution).astype(int)
    if int(np.prod(dims)) > max_cells:
        raise GridBudgetError(f"grid of {np.prod(dims)} cells exceeds budget {max_cells}")
    grid = VoxelGrid(lo, resolution, dims)
    r = cloud.inflation_radius
    pts = cloud.points
    if len(pts):
        inside = np.all((pts >= lo - r) & (pts <= hi + r), axis=1)
        pts = pts[inside]
    occ = grid.occupancy
    if r == 0.0:
        for p in pts:
            cell = grid.cell_of(p)
            if grid.in_bounds(cell):
                occ[cell] = True
    else:
        span = int(np.ceil(r / resolution)) + 1
        offs = np.stack(np.meshgrid(*([np.arange(-span, span + 1)] * 3), indexing="ij"), axis=-1).reshape(-1, 3)
        # cheap prefilter on cell-center distance, exact box test afterwards
        half_diag = resolution * np.sqrt(3.0) / 2.0
        keep = np.linalg.norm(offs * resolution, axis=1) <= r + 2.0 * half_diag
        offs = offs[keep]
        for start in range(0, len(pts), 1024):
            chunk = pts[start:start + 1024]
            base = np.floor((chunk - lo) / resolution).astype(int)
            cells = base[:, None, :] + offs[None, :, :]  # (m, K, 3)
            mins = lo + cells * resolution
            nearest = np.clip(chunk[:, None, :], mins, mins + resolution)
            d2 = np.sum((nearest - chunk[:, None, :]) ** 2, axis=-1)
            hit = cells[d2 <= r * r]
            ok = np.all((hit >= 0) & (hit < dims), axis=1)
            hit = hit[ok]
            occ[hit[:, 0], hit[:, 1], hit[:, 2]] = True
    if len(cloud.spheres):
        for cx, cy, cz, rad in cloud.spheres:
            _mark_sphere(occ, grid.origin, resolution, np.array([cx, cy, cz]), rad)
    return grid


def is_free(grid: VoxelGrid, point) -> bool:
    return grid.is_free(point)


def segment_free(grid: VoxelGrid, a, b) -> bool:
    return grid.segment_free(a, b)


def load_point_cloud(path) -> np.ndarray:
    """Read whitespace-separated "x y z" lines into an (M, 3) array."""
    pts = np.loadtxt(path, dtype=float, ndmin=2)
    if pts.shape[1] != 3:
        raise ValueError(f"expected 3 columns in {path}, got {pts.shape[1]}")
    return pts
