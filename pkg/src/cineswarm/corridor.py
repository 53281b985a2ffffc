"""Collision-free path repair and safe-corridor construction.

Pipeline: a reference trajectory is repaired into a collision-free path
(3D Jump Point Search with a timeout fallback ladder), resampled back to
N points with a bounded sampling step, and each resulting segment is
wrapped in an obstacle-free convex polyhedron via iterative ellipsoid
dilation and tangent planes.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import Trajectory
from .world import ObstacleCloud, VoxelGrid

DEFAULT_JPS_TIMEOUT = 0.05
DEFAULT_DS_MAX = 0.5
DEFAULT_BBOX_LIMIT = (4.0, 4.0, 2.0)
DEFAULT_VEHICLE_RADIUS = 0.5


class InfeasibleSegmentError(RuntimeError):
    """An obstacle point lies within the clearance radius of a seed segment."""


class PathRepairError(RuntimeError):
    """Path repair cannot start (e.g. the start position is occupied)."""


# ---------------------------------------------------------------------------
# grid search: movement rules shared by JPS and the A* oracle
# ---------------------------------------------------------------------------

_DIRS: tuple[tuple[int, int, int], ...] = tuple(
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
)
_DIR_INDEX = {d: i for i, d in enumerate(_DIRS)}
_DIR_COST = tuple(math.sqrt(dx * dx + dy * dy + dz * dz) for dx, dy, dz in _DIRS)


def _sub_offsets(d: tuple[int, int, int]) -> tuple[tuple[int, int, int], ...]:
    """Proper non-zero componentwise sub-moves of a diagonal direction."""
    subs = []
    axes = [i for i in range(3) if d[i] != 0]
    for keep in range(1, 1 << len(axes)):
        if keep == (1 << len(axes)) - 1:
            continue
        s = [0, 0, 0]
        for bit, ax in enumerate(axes):
            if keep >> bit & 1:
                s[ax] = d[ax]
        subs.append(tuple(s))
    return tuple(subs)


_SUBS = {d: _sub_offsets(d) for d in _DIRS}


def _movable(grid: VoxelGrid, cell, d) -> bool:
    """Move legality with no corner cutting: target and all sub-step cells free."""
    n = (cell[0] + d[0], cell[1] + d[1], cell[2] + d[2])
    if not grid.is_cell_free(n):
        return False
    for s in _SUBS[d]:
        if not grid.is_cell_free((cell[0] + s[0], cell[1] + s[1], cell[2] + s[2])):
            return False
    return True


def _neighbors(grid: VoxelGrid, cell):
    for i, d in enumerate(_DIRS):
        if _movable(grid, cell, d):
            yield (cell[0] + d[0], cell[1] + d[1], cell[2] + d[2]), _DIR_COST[i]


# ---------------------------------------------------------------------------
# canonical neighbor ordering
# ---------------------------------------------------------------------------

def _naturals_of(d) -> tuple[tuple[int, int, int], ...]:
    """Natural neighbors: the componentwise sub-moves of d plus d itself
    (1 for straight moves, 3 for planar diagonals, 7 for space diagonals),
    ordered by increasing diagonal order so jump recursion terminates."""
    out = list(_SUBS[d]) + [d]
    out.sort(key=lambda m: (sum(abs(c) for c in m), m))
    return tuple(out)


_NATURALS = {d: _naturals_of(d) for d in _DIRS}


def _naturals(d):
    return _NATURALS[d]


def _blocked_mask(grid: VoxelGrid, cell) -> bool:
    """True when any of the 26 neighbors is occupied or outside the map."""
    x, y, z = cell
    dx, dy, dz = grid.dims
    if x < 1 or y < 1 or z < 1 or x > dx - 2 or y > dy - 2 or z > dz - 2:
        return True  # map border counts as blocked
    return bool(grid.occupancy[x - 1:x + 2, y - 1:y + 2, z - 1:z + 2].any())


# ---------------------------------------------------------------------------
# searches
# ---------------------------------------------------------------------------

@dataclass
class SearchResult:
    """Outcome of a grid search, including the expanded set for fallbacks."""

    status: str  # "success" | "timeout" | "unreachable"
    cells: list[tuple[int, int, int]] = field(default_factory=list)
    cost: float = math.inf
    expanded: int = 0
    parents: dict = field(default_factory=dict)
    g_scores: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "success"

    def path_to(self, cell) -> list[tuple[int, int, int]]:
        """Reconstruct the path to any expanded cell."""
        path = [cell]
        while path[-1] in self.parents:
            path.append(self.parents[path[-1]])
        path.reverse()
        return path


class _Timeout(Exception):
    pass


# Search budgets are specified in seconds but enforced as a deterministic
# amount of search work (walk steps / expansions), so identical inputs give
# identical results regardless of machine load.
SEARCH_STEPS_PER_SECOND = 100_000


def _step_budget(timeout: float) -> float:
    return math.inf if math.isinf(timeout) else max(1.0, timeout * SEARCH_STEPS_PER_SECOND)


def _heuristic(a, b) -> float:
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


def nearest_free_cell(grid: VoxelGrid, cell, max_shells: int = 12):
    """Closest free cell to ``cell`` within a Chebyshev radius, or None.

    Scans outward shell by shell and breaks ties deterministically, so a
    vehicle sitting inside an inflated-obstacle cell can still plan from
    the nearest legal cell instead of deadlocking.
    """
    cell = tuple(int(c) for c in cell)
    if grid.is_cell_free(cell):
        return cell
    for r in range(1, max_shells + 1):
        best = None
        best_d = math.inf
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dz in range(-r, r + 1):
                    if max(abs(dx), abs(dy), abs(dz)) != r:
                        continue
                    cand = (cell[0] + dx, cell[1] + dy, cell[2] + dz)
                    if not grid.is_cell_free(cand):
                        continue
                    d = dx * dx + dy * dy + dz * dz
                    if d < best_d or (d == best_d and cand < best):
                        best, best_d = cand, d
        if best is not None:
            return best
    return None


def jps3d_cells(grid: VoxelGrid, start, goal, timeout: float = DEFAULT_JPS_TIMEOUT) -> SearchResult:
    """Jump Point Search over cell coordinates (26-connected, metric costs)."""
    start = tuple(int(c) for c in start)
    goal = tuple(int(c) for c in goal)
    if not grid.is_cell_free(start):
        return SearchResult("unreachable")
    if not grid.is_cell_free(goal):
        return SearchResult("unreachable")
    budget = [_step_budget(timeout)]

    def tick():
        budget[0] -= 1
        if budget[0] <= 0:
            raise _Timeout

    def jump(cell, d):
        # Walk along d through open space, recursing into lower-order
        # component directions. Any cell with a blocked (or out-of-map)
        # neighbor is a jump point and gets re-expanded with the full
        # direction set: a conservative stop rule, since necessary
        # non-canonical turns only occur beside obstacles. Canonical
        # (diagonal-first) orderings cover every shortest path in the
        # obstacle-free interior.
        while True:
            tick()
            if not _movable(grid, cell, d):
                return None
            n = (cell[0] + d[0], cell[1] + d[1], cell[2] + d[2])
            if n == goal:
                return n
            if _blocked_mask(grid, n):
                return n
            for sub in _naturals(d):
                if sub == d:
                    continue
                if jump(n, sub) is not None:
                    return n
            cell = n

    g: dict = {start: 0.0}
    parents: dict = {}
    came_dir: dict = {start: None}
    counter = 0
    pq = [(_heuristic(start, goal), 0, start)]
    expanded = 0
    closed = set()
    try:
        while pq:
            _, _, cell = heapq.heappop(pq)
            if cell in closed:
                continue
            closed.add(cell)
            expanded += 1
            if cell == goal:
                res = SearchResult("success", expanded=expanded, parents=parents, g_scores=g)
                res.cells = res.path_to(goal)
                res.cost = g[goal] * grid.resolution
                return res
            d_in = came_dir[cell]
            if d_in is None or _blocked_mask(grid, cell):
                dirs = [d for d in _DIRS if _movable(grid, cell, d)]
            else:
                dirs = [m for m in _naturals(d_in) if _movable(grid, cell, m)]
            for d in dirs:
                jp = jump(cell, d)
                if jp is None:
                    continue
                steps = max(abs(jp[0] - cell[0]), abs(jp[1] - cell[1]), abs(jp[2] - cell[2]))
                ng = g[cell] + steps * _DIR_COST[_DIR_INDEX[d]]
                if ng < g.get(jp, math.inf) - 1e-12:
                    g[jp] = ng
                    parents[jp] = cell
                    came_dir[jp] = d
                    counter += 1
                    heapq.heappush(pq, (ng + _heuristic(jp, goal), counter, jp))
    except _Timeout:
        return SearchResult("timeout", expanded=expanded, parents=parents, g_scores=g)
    return SearchResult("unreachable", expanded=expanded, parents=parents, g_scores=g)


def astar_cells(grid: VoxelGrid, start, goal, timeout: float = math.inf) -> SearchResult:
    """Plain A* with identical movement rules; used as the optimality oracle."""
    start = tuple(int(c) for c in start)
    goal = tuple(int(c) for c in goal)
    if not grid.is_cell_free(start) or not grid.is_cell_free(goal):
        return SearchResult("unreachable")
    budget = _step_budget(timeout)
    g = {start: 0.0}
    parents: dict = {}
    counter = 0
    pq = [(_heuristic(start, goal), 0, start)]
    closed = set()
    expanded = 0
    while pq:
        if expanded >= budget:
            return SearchResult("timeout", expanded=expanded, parents=parents, g_scores=g)
        _, _, cell = heapq.heappop(pq)
        if cell in closed:
            continue
        closed.add(cell)
        expanded += 1
        if cell == goal:
            res = SearchResult("success", expanded=expanded, parents=parents, g_scores=g)
            res.cells = res.path_to(goal)
            res.cost = g[goal] * grid.resolution
            return res
        for n, c in _neighbors(grid, cell):
            ng = g[cell] + c
            if ng < g.get(n, math.inf) - 1e-12:
                g[n] = ng
                parents[n] = cell
                counter += 1
                heapq.heappush(pq, (ng + _heuristic(n, goal), counter, n))
    return SearchResult("unreachable", expanded=expanded, parents=parents, g_scores=g)


# ---------------------------------------------------------------------------
# path repair
# ---------------------------------------------------------------------------

@dataclass
class GridPath:
    """Polyline of waypoints whose connecting segments are grid-free."""

    waypoints: np.ndarray  # (M, 3)
    cost: float

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 3)

    @property
    def length(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))


def jps3d(grid: VoxelGrid, start, goal, timeout: float = DEFAULT_JPS_TIMEOUT):
    """World-coordinate JPS: returns a GridPath of cell centers, or a
    SearchResult describing the failure (timeout / unreachable)."""
    sc = _clamped_cell(grid, start)
    gc = _clamped_cell(grid, goal)
    res = jps3d_cells(grid, sc, gc, timeout)
    if not res.ok:
        return res
    pts = np.array([grid.cell_center(c) for c in res.cells])
    return GridPath(pts, res.cost)


def _clamped_cell(grid: VoxelGrid, point):
    c = grid.cell_of(point)
    return tuple(int(np.clip(c[i], 0, grid.dims[i] - 1)) for i in range(3))


def repair_path(D: Trajectory, grid: VoxelGrid,
                timeout: float = DEFAULT_JPS_TIMEOUT) -> GridPath:
    """Convert a reference trajectory into a collision-free polyline.

    Fallback ladder per colliding run: (i) free waypoints are copied
    verbatim; (ii) JPS bridges the last free waypoint A to the next free
    waypoint B; (iii) failing that, JPS from A to the final waypoint C;
    (iv) failing that, the path to the expanded node closest to C.
    """
    wps = D.positions()
    out = [wps[0]]
    if not grid.is_free(wps[0]):
        # The vehicle can legitimately sit inside an inflated cell (the
        # inflation is conservative); hop to the nearest free cell rather
        # than deadlocking there. The hop is accepted verbatim — the
        # corridor stage still checks true obstacle clearance on it.
        esc = nearest_free_cell(grid, _clamped_cell(grid, wps[0]))
        if esc is None:
            raise PathRepairError("start position is occupied")
        out.append(grid.cell_center(esc))
    i = 1
    n_last = len(wps) - 1
    while i <= n_last:
        w = wps[i]
        if grid.is_free(w) and grid.segment_free(out[-1], w):
            out.append(w)
            i += 1
            continue
        a = out[-1]
        j = i
        while j <= n_last and not grid.is_free(wps[j]):
            j += 1
        bridged = False
        if j <= n_last:
            res = jps3d(grid, a, wps[j], timeout)
            if isinstance(res, GridPath):
                _splice(out, res.waypoints, wps[j])
                i = j + 1
                bridged = True
        if bridged:
            continue
        # (iii) connect A to the final waypoint C
        res = jps3d(grid, a, wps[n_last], timeout)
        if isinstance(res, GridPath):
            _splice(out, res.waypoints, wps[n_last] if grid.is_free(wps[n_last]) else None)
            break
        # (iv) best-effort: path to the expanded node closest to C
        target = wps[n_last]
        best, best_d = None, math.inf
        g_scores = res.g_scores if res.g_scores else {}
        for cell in g_scores:
            d = float(np.linalg.norm(grid.cell_center(cell) - target))
            if d < best_d - 1e-12:
                best, best_d = cell, d
        if best is not None:
            cells = res.path_to(best)
            _splice(out, np.array([grid.cell_center(c) for c in cells]), None)
        break
    path = np.array(out)
    cost = float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1))) if len(path) > 1 else 0.0
    return GridPath(path, cost)


def _splice(out: list, cell_points: np.ndarray, endpoint):
    for p in cell_points:
        if np.linalg.norm(p - out[-1]) > 1e-9:
            out.append(np.asarray(p, dtype=float))
    if endpoint is not None and np.linalg.norm(endpoint - out[-1]) > 1e-9:
        out.append(np.asarray(endpoint, dtype=float))


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def resample(P: GridPath, D: Trajectory, d_s_max: float = DEFAULT_DS_MAX) -> np.ndarray:
    """Pick N points along P whose spacing follows D's arc-length profile,
    clamped to at most d_s_max between consecutive points."""
    wps = P.waypoints
    if len(wps) == 0:
        raise ValueError("empty path")
    n = D.n_steps
    d_pos = D.positions()
    seg_d = np.linalg.norm(np.diff(d_pos, axis=0), axis=1)
    cum_d = np.concatenate([[0.0], np.cumsum(seg_d)])
    total_d = cum_d[-1]
    total_p = P.length
    scale = (total_p / total_d) if total_d > 1e-12 else 0.0
    out = np.zeros((n, 3))
    s_prev = 0.0
    for k in range(1, n + 1):
        s = min(cum_d[k] * scale, s_prev + d_s_max)
        s = min(s, total_p)
        out[k - 1] = _point_at_arclength(wps, s)
        s_prev = s
    return out


def _point_at_arclength(wps: np.ndarray, s: float) -> np.ndarray:
    if len(wps) == 1:
        return wps[0]
    seg = np.linalg.norm(np.diff(wps, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = min(max(s, 0.0), cum[-1])
    idx = int(np.searchsorted(cum, s, side="right")) - 1
    idx = min(idx, len(seg) - 1)
    if seg[idx] < 1e-12:
        return wps[idx]
    frac = (s - cum[idx]) / seg[idx]
    return wps[idx] + frac * (wps[idx + 1] - wps[idx])


# ---------------------------------------------------------------------------
# convex decomposition
# ---------------------------------------------------------------------------

@dataclass
class Polyhedron:
    """Half-space intersection {x : normals @ x <= offsets}."""

    normals: np.ndarray  # (F, 3), unit rows
    offsets: np.ndarray  # (F,)

    def __post_init__(self):
        self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(-1)

    def max_violation(self, point) -> float:
        return float(np.max(self.normals @ np.asarray(point, dtype=float) - self.offsets))

    def contains(self, point, tol: float = 1e-9) -> bool:
        return self.max_violation(point) <= tol

    def excludes(self, points) -> np.ndarray:
        """Per-point flag: at least one face with n.x >= b."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.any(pts @ self.normals.T >= self.offsets[None, :] - 1e-12, axis=1)

    def to_json_obj(self) -> list:
        return [[*n, float(b)] for n, b in zip(self.normals.tolist(), self.offsets)]


@dataclass
class SafeCorridor:
    """One polyhedron per trajectory transition point (polys[k] covers the
    segment between waypoints k and k+1 of the prepended waypoint list)."""

    polys: list

    def __len__(self):
        return len(self.polys)

    def to_json_obj(self) -> list:
        return [p.to_json_obj() for p in self.polys]


def _segment_frame(a: np.ndarray, b: np.ndarray, seed_radius: float):
    d = b - a
    length = float(np.linalg.norm(d))
    if length < seed_radius:
        return np.eye(3), seed_radius  # degenerate: sphere seed
    axis = d / length
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e2 = np.cross(axis, ref)
    e2 /= np.linalg.norm(e2)
    e3 = np.cross(axis, e2)
    return np.column_stack([axis, e2, e3]), length / 2.0


def decompose(segment, cloud, bbox_limit=DEFAULT_BBOX_LIMIT,
              vehicle_radius: float = DEFAULT_VEHICLE_RADIUS,
              seed_radius: float = 0.25,
              clearance_radius: float | None = None) -> Polyhedron:
    """Obstacle-free convex polyhedron enclosing one path segment.

    An ellipsoid seeded on the segment is repeatedly dilated to the nearest
    remaining obstacle point; the tangent plane at each contact point is
    added and the points behind it discarded. The result is intersected
    with an axis-aligned box around the segment midpoint and every offset
    is shrunk by the vehicle radius (relaxed only as far as needed to keep
    the segment endpoints inside).
    """
    a = np.asarray(segment[0], dtype=float).reshape(3)
    b = np.asarray(segment[1], dtype=float).reshape(3)
    if isinstance(cloud, ObstacleCloud):
        pts = cloud.all_points()
    else:
        pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if clearance_radius is None:
        clearance_radius = vehicle_radius
    limit = np.asarray(bbox_limit, dtype=float).reshape(3)
    mid = 0.5 * (a + b)
    if len(pts):
        box = np.all(np.abs(pts - mid) <= limit, axis=1)
        pts = pts[box]
    if len(pts):
        d_seg = _point_segment_distance(pts, a, b)
        if np.min(d_seg) < clearance_radius:
            raise InfeasibleSegmentError(
                f"obstacle point {np.min(d_seg):.3f} m from seed segment")

    rot, a0 = _segment_frame(a, b, seed_radius)
    # minor semi-axis: largest value that keeps every point outside the
    # segment-aligned ellipsoid (single pass, axisymmetric minor axes)
    b_minor = float(np.max(limit))
    if len(pts):
        local = (pts - mid) @ rot  # columns: along-axis, two lateral
        ax = local[:, 0]
        rho = np.linalg.norm(local[:, 1:], axis=1)
        slab = np.abs(ax) < a0 * (1.0 - 1e-9)
        if np.any(slab):
            denom = np.sqrt(1.0 - (ax[slab] / a0) ** 2)
            b_req = rho[slab] / denom
            b_minor = min(b_minor, float(np.min(b_req)))
    b_minor = max(b_minor, 1e-6)
    inv_sq = np.array([1.0 / (a0 * a0), 1.0 / (b_minor * b_minor), 1.0 / (b_minor * b_minor)])
    A = rot @ np.diag(inv_sq) @ rot.T

    normals = []
    offsets = []
    work = pts
    while len(work):
        rel = work - mid
        q = np.einsum("ij,jk,ik->i", rel, A, rel)
        i = int(np.argmin(q))  # ties: lowest index, deterministic
        p_star = work[i]
        n = A @ (p_star - mid)
        nn = float(np.linalg.norm(n))
        if nn < 1e-12:
            raise InfeasibleSegmentError("obstacle point at segment center")
        n = n / nn
        beta = float(n @ p_star)
        normals.append(n)
        offsets.append(beta)
        work = work[work @ n < beta - 1e-9]

    for ax in range(3):
        for sign in (1.0, -1.0):
            n = np.zeros(3)
            n[ax] = sign
            normals.append(n)
            offsets.append(sign * mid[ax] + limit[ax])

    normals = np.array(normals)
    offsets = np.array(offsets) - vehicle_radius
    # relax shrink where it would expel the segment endpoints
    min_needed = np.maximum(normals @ a, normals @ b)
    offsets = np.maximum(offsets, min_needed)
    return Polyhedron(normals, offsets)


def _point_segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    dd = float(d @ d)
    if dd < 1e-18:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip((pts - a) @ d / dd, 0.0, 1.0)
    proj = a[None, :] + t[:, None] * d[None, :]
    return np.linalg.norm(pts - proj, axis=1)


def build_corridor(start_pos, ref_positions, cloud,
                   bbox_limit=DEFAULT_BBOX_LIMIT,
                   vehicle_radius: float = DEFAULT_VEHICLE_RADIUS,
                   seed_radius: float = 0.25) -> SafeCorridor:
    """One polyhedron per resampled segment, with the current UAV position
    prepended as waypoint 0."""
    refs = np.asarray(ref_positions, dtype=float).reshape(-1, 3)
    wps = np.vstack([np.asarray(start_pos, dtype=float).reshape(1, 3), refs])
    pts = cloud.all_points() if isinstance(cloud, ObstacleCloud) else np.asarray(cloud, dtype=float)
    polys = []
    cur = None
    # reuse the previous polyhedron while it still contains the next
    # segment with some margin: long free-space stretches then share one
    # polyhedron, which keeps the downstream QP small
    margin = 0.2
    for k in range(1, len(wps)):
        if cur is not None and \
                np.all(cur.normals @ wps[k - 1] <= cur.offsets - margin) and \
                np.all(cur.normals @ wps[k] <= cur.offsets - margin):
            polys.append(cur)
            continue
        cur = decompose((wps[k - 1], wps[k]), pts,
                        bbox_limit=bbox_limit,
                        vehicle_radius=vehicle_radius,
                        seed_radius=seed_radius)
        polys.append(cur)
    return SafeCorridor(polys)
