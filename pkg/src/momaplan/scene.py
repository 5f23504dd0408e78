"""Procedural cluttered rooms with analytic signed distance fields.

A scene is a walled 10 m x 10 m room filled with cuboids, spheres, and
cylinders. Distances are exact per primitive and composed with a hard min,
so the union SDF is a lower-bound-exact signed distance. The floor is the
implicit half-space z <= 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .rngs import seeded_rng

SCENE_FORMAT_VERSION = 1

CUBOID = "cuboid"
SPHERE = "sphere"
CYLINDER = "cylinder"


@dataclass(frozen=True, eq=False)
class ObstaclePrimitive:
    """One geometric obstacle: cuboid, sphere, or vertical cylinder."""

    kind: str
    position: np.ndarray          # (3,) center, m
    yaw: float = 0.0              # rad about +Z, used by cuboids/cylinders
    half_extents: np.ndarray | None = None   # cuboid (3,)
    radius: float | None = None               # sphere / cylinder
    half_height: float | None = None          # cylinder

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "yaw", float(_wrap_pi(self.yaw)))
        if self.kind == CUBOID:
            he = np.asarray(self.half_extents, dtype=float)
            if he.shape != (3,) or not np.all(he > 0):
                raise ValueError(f"cuboid needs positive half_extents, got {self.half_extents}")
            object.__setattr__(self, "half_extents", he)
        elif self.kind == SPHERE:
            if not self.radius or self.radius <= 0:
                raise ValueError(f"sphere needs positive radius, got {self.radius}")
        elif self.kind == CYLINDER:
            if not self.radius or self.radius <= 0 or not self.half_height or self.half_height <= 0:
                raise ValueError("cylinder needs positive radius and half_height")
        else:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")

    def horizontal_reach(self):
        """Radius of the smallest vertical cylinder containing the primitive."""
        if self.kind == CUBOID:
            return float(np.hypot(self.half_extents[0], self.half_extents[1]))
        return float(self.radius)

    def surface_area(self):
        if self.kind == CUBOID:
            a, b, c = 2.0 * self.half_extents
            return 2.0 * (a * b + b * c + c * a)
        if self.kind == SPHERE:
            return 4.0 * math.pi * self.radius**2
        h = 2.0 * self.half_height
        return 2.0 * math.pi * self.radius * h + 2.0 * math.pi * self.radius**2


@dataclass
class SceneConfig:
    """Size/placement ranges; the benchmark presets scale counts off these."""

    room_half: float = 5.0
    wall_height: float = 2.5
    wall_thickness: float = 0.1
    grounded_half_xy: tuple = (0.1, 0.5)
    grounded_height: tuple = (0.3, 2.0)
    floating_base_z: tuple = (0.8, 1.8)
    floating_half_xy: tuple = (0.1, 0.5)
    floating_height: tuple = (0.2, 0.6)
    sphere_radius: tuple = (0.15, 0.5)
    cylinder_radius: tuple = (0.1, 0.4)
    cylinder_height: tuple = (0.5, 2.0)
    boundary_clearance: float = 0.6   # free disc around start/goal base positions
    min_start_goal_dist: float = 4.0
    counts: dict = field(default_factory=lambda: {
        "cuboids": {"grounded_cuboid": 20, "floating_cuboid": 30},
        "mixed": {"grounded_cuboid": 10, "sphere": 10, "cylinder": 25},
    })


@dataclass(eq=False)
class Scene:
    """Immutable obstacle set + optional walled room; query arrays are cached.

    Benchmark rooms carry four wall cuboids and the implicit floor plane
    z = 0; bare scenes built directly from primitives carry neither.
    """

    obstacles: list
    room: np.ndarray | None = None    # (3,2) [[xmin,xmax],[ymin,ymax],[zmin,zmax]]
    seed: int = 0
    preset: str = "custom"
    density: float = 1.0
    start_xy: np.ndarray | None = None
    goal_xy: np.ndarray | None = None
    walled: bool = False
    floor: bool = False

    def __post_init__(self):
        if self.room is not None:
            self.room = np.asarray(self.room, dtype=float)
        if self.start_xy is not None:
            self.start_xy = np.asarray(self.start_xy, dtype=float)
        if self.goal_xy is not None:
            self.goal_xy = np.asarray(self.goal_xy, dtype=float)
        self._walls = _make_walls(self.room) if (self.walled and self.room is not None) else []
        self._packed = None

    @property
    def walls(self):
        return self._walls

    def all_primitives(self):
        """Obstacles then walls; index order fixes SDF tie-breaking."""
        return list(self.obstacles) + list(self._walls)

    def _pack(self):
        if self._packed is None:
            self._packed = _pack_primitives(self.all_primitives())
        return self._packed

    # -- queries -----------------------------------------------------------

    def sdf_batch(self, points, include_floor=True):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = _distance_matrix(self._pack(), points)
        if include_floor and self.floor:
            d = np.concatenate([d, points[:, 2:3]], axis=1)
        if d.shape[1] == 0:
            return np.full(points.shape[0], np.inf)
        return d.min(axis=1)

    def sdf(self, p):
        return float(self.sdf_batch(np.asarray(p, dtype=float)[None, :])[0])

    def sdf_gradient_batch(self, points, include_floor=True):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        pack = self._pack()
        d = _distance_matrix(pack, points)
        if include_floor and self.floor:
            d = np.concatenate([d, points[:, 2:3]], axis=1)
        if d.shape[1] == 0:
            return np.zeros_like(points)
        winner = d.argmin(axis=1)   # first minimum = lowest primitive index
        grads = np.zeros_like(points)
        n_prims = len(pack["prims"])
        floor_mask = winner >= n_prims
        if floor_mask.any():
            grads[floor_mask] = [0.0, 0.0, 1.0]
        for idx in np.unique(winner[~floor_mask]):
            mask = winner == idx
            grads[mask] = _primitive_gradient(pack["prims"][idx], points[mask])
        return grads

    def sdf_gradient(self, p):
        return self.sdf_gradient_batch(np.asarray(p, dtype=float)[None, :])[0]

    def contains_batch(self, points):
        """True where a point is strictly inside some obstacle or wall (floor excluded)."""
        return self.sdf_batch(points, include_floor=False) < 0.0


@dataclass
class PointCloud:
    points: np.ndarray   # (N, 3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"point cloud must be (N,3), got {self.points.shape}")


@dataclass
class VoxelGrid:
    origin: np.ndarray      # (3,) corner of cell (0,0,0)
    resolution: float
    occupancy: np.ndarray   # bool (nx, ny, nz)

    def volume(self):
        return float(self.occupancy.sum()) * self.resolution**3

    @property
    def dims(self):
        return self.occupancy.shape


# ---------------------------------------------------------------------------
# construction


def _wrap_pi(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _make_walls(room):
    (x0, x1), (y0, y1), (z0, z1) = room
    t = 0.05   # half thickness
    zc, hz = (z0 + z1) / 2.0, (z1 - z0) / 2.0
    hx = (x1 - x0) / 2.0 + 2 * t
    hy = (y1 - y0) / 2.0
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    return [
        ObstaclePrimitive(CUBOID, [cx, y1 + t, zc], 0.0, half_extents=[hx, t, hz]),
        ObstaclePrimitive(CUBOID, [cx, y0 - t, zc], 0.0, half_extents=[hx, t, hz]),
        ObstaclePrimitive(CUBOID, [x1 + t, cy, zc], 0.0, half_extents=[t, hy, hz]),
        ObstaclePrimitive(CUBOID, [x0 - t, cy, zc], 0.0, half_extents=[t, hy, hz]),
    ]


def generate_scene(preset, seed, density_scale=1.0, config=None):
    """Deterministically generate a cluttered room.

    Counts are the preset counts scaled by density_scale (floored, min 1 per
    category). Obstacles keep a clear disc around the designated start/goal
    base positions so boundary states stay feasible.
    """
    if not 0.0 < density_scale <= 1.0:
        raise ValueError("density_scale must be in (0, 1]")
    cfg = config or SceneConfig()
    if preset not in cfg.counts:
        raise ValueError(f"unknown preset {preset!r}")
    rng = seeded_rng(seed, 101)
    r = cfg.room_half
    room = np.array([[-r, r], [-r, r], [0.0, cfg.wall_height]])

    # boundary base positions first; obstacle placement respects them
    lim = r - 1.0
    while True:
        start = rng.uniform(-lim, lim, size=2)
        goal = rng.uniform(-lim, lim, size=2)
        if np.linalg.norm(goal - start) >= cfg.min_start_goal_dist:
            break

    obstacles = []
    for category, count in cfg.counts[preset].items():
        n = max(1, int(count * density_scale))
        for _ in range(n):
            obstacles.append(_draw_obstacle(category, rng, cfg, start, goal))
    return Scene(obstacles=obstacles, room=room, seed=int(seed), preset=preset,
                 density=float(density_scale), start_xy=start, goal_xy=goal,
                 walled=True, floor=True)


def _draw_obstacle(category, rng, cfg, start, goal):
    r = cfg.room_half
    for _ in range(500):
        if category == "grounded_cuboid":
            hx, hy = rng.uniform(*cfg.grounded_half_xy, size=2)
            h = rng.uniform(*cfg.grounded_height)
            yaw = rng.uniform(-math.pi, math.pi)
            prim = ObstaclePrimitive(CUBOID, [0, 0, h / 2.0], yaw, half_extents=[hx, hy, h / 2.0])
        elif category == "floating_cuboid":
            hx, hy = rng.uniform(*cfg.floating_half_xy, size=2)
            h = rng.uniform(*cfg.floating_height)
            zb = rng.uniform(*cfg.floating_base_z)
            yaw = rng.uniform(-math.pi, math.pi)
            prim = ObstaclePrimitive(CUBOID, [0, 0, zb + h / 2.0], yaw, half_extents=[hx, hy, h / 2.0])
        elif category == "sphere":
            rad = rng.uniform(*cfg.sphere_radius)
            zc = rng.uniform(max(rad + 0.02, 0.4), cfg.wall_height - 0.1 - rad)
            prim = ObstaclePrimitive(SPHERE, [0, 0, zc], radius=rad)
        elif category == "cylinder":
            rad = rng.uniform(*cfg.cylinder_radius)
            h = rng.uniform(*cfg.cylinder_height)
            yaw = rng.uniform(-math.pi, math.pi)
            prim = ObstaclePrimitive(CYLINDER, [0, 0, h / 2.0], yaw, radius=rad, half_height=h / 2.0)
        else:
            raise ValueError(f"unknown obstacle category {category!r}")

        reach = prim.horizontal_reach()
        lim = r - 0.2 - reach
        xy = rng.uniform(-lim, lim, size=2)
        clear = cfg.boundary_clearance + reach
        if np.linalg.norm(xy - start) <= clear or np.linalg.norm(xy - goal) <= clear:
            continue
        pos = prim.position.copy()
        pos[:2] = xy
        return ObstaclePrimitive(prim.kind, pos, prim.yaw, half_extents=prim.half_extents,
                                 radius=prim.radius, half_height=prim.half_height)
    raise RuntimeError(f"could not place obstacle of category {category}")


# ---------------------------------------------------------------------------
# packed batched SDF


def _pack_primitives(prims):
    pack = {"prims": prims, "cuboid": [], "sphere": [], "cylinder": []}
    for i, p in enumerate(prims):
        pack[p.kind].append(i)
    for kind in (CUBOID, SPHERE, CYLINDER):
        idx = np.array(pack[kind], dtype=int)
        if kind == CUBOID and len(idx):
            pack["cuboid_data"] = (
                idx,
                np.stack([prims[i].position for i in idx]),
                np.array([math.cos(prims[i].yaw) for i in idx]),
                np.array([math.sin(prims[i].yaw) for i in idx]),
                np.stack([prims[i].half_extents for i in idx]),
            )
        elif kind == SPHERE and len(idx):
            pack["sphere_data"] = (
                idx,
                np.stack([prims[i].position for i in idx]),
                np.array([prims[i].radius for i in idx]),
            )
        elif kind == CYLINDER and len(idx):
            pack["cylinder_data"] = (
                idx,
                np.stack([prims[i].position for i in idx]),
                np.array([prims[i].radius for i in idx]),
                np.array([prims[i].half_height for i in idx]),
            )
        pack[kind] = idx
    return pack


def _distance_matrix(pack, points):
    """Per-primitive signed distances, columns in primitive index order."""
    n = points.shape[0]
    d = np.full((n, len(pack["prims"])), np.inf)
    if len(pack[CUBOID]):
        idx, centers, cy, sy, half = pack["cuboid_data"]
        rel = points[:, None, :] - centers[None, :, :]
        lx = rel[:, :, 0] * cy + rel[:, :, 1] * sy
        ly = -rel[:, :, 0] * sy + rel[:, :, 1] * cy
        q = np.stack([np.abs(lx), np.abs(ly), np.abs(rel[:, :, 2])], axis=-1) - half[None, :, :]
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        d[:, idx] = outside + inside
    if len(pack[SPHERE]):
        idx, centers, rad = pack["sphere_data"]
        d[:, idx] = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=-1) - rad
    if len(pack[CYLINDER]):
        idx, centers, rad, hh = pack["cylinder_data"]
        rel = points[:, None, :] - centers[None, :, :]
        dr = np.hypot(rel[:, :, 0], rel[:, :, 1]) - rad
        dz = np.abs(rel[:, :, 2]) - hh
        outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        d[:, idx] = outside + inside
    return d


def _primitive_gradient(prim, points):
    rel = points - prim.position
    if prim.kind == SPHERE:
        n = np.linalg.norm(rel, axis=1, keepdims=True)
        g = np.where(n > 1e-15, rel / np.maximum(n, 1e-15), [1.0, 0.0, 0.0])
        return g
    if prim.kind == CUBOID:
        cy, sy = math.cos(prim.yaw), math.sin(prim.yaw)
        lx = rel[:, 0] * cy + rel[:, 1] * sy
        ly = -rel[:, 0] * sy + rel[:, 1] * cy
        local = np.stack([lx, ly, rel[:, 2]], axis=1)
        q = np.abs(local) - prim.half_extents
        g_local = np.zeros_like(local)
        out = np.maximum(q, 0.0)
        norm = np.linalg.norm(out, axis=1)
        outside = norm > 0
        sgn = np.where(local >= 0, 1.0, -1.0)
        g_local[outside] = sgn[outside] * out[outside] / norm[outside, None]
        ins = ~outside
        if ins.any():
            k = q[ins].argmax(axis=1)
            rows = np.where(ins)[0]
            g_local[rows, k] = sgn[rows, k]
        gx = g_local[:, 0] * cy - g_local[:, 1] * sy
        gy = g_local[:, 0] * sy + g_local[:, 1] * cy
        return np.stack([gx, gy, g_local[:, 2]], axis=1)
    # cylinder
    rho = np.hypot(rel[:, 0], rel[:, 1])
    dr = rho - prim.radius
    dz = np.abs(rel[:, 2]) - prim.half_height
    radial = np.where(rho[:, None] > 1e-15, rel[:, :2] / np.maximum(rho[:, None], 1e-15), [1.0, 0.0])
    zsgn = np.where(rel[:, 2] >= 0, 1.0, -1.0)
    g = np.zeros_like(rel)
    outside = (dr > 0) | (dz > 0)
    if outside.any():
        vr = np.maximum(dr[outside], 0.0)
        vz = np.maximum(dz[outside], 0.0)
        n = np.hypot(vr, vz)
        g[outside, :2] = radial[outside] * (vr / n)[:, None]
        g[outside, 2] = zsgn[outside] * vz / n
    ins = ~outside
    if ins.any():
        pick_r = dr[ins] >= dz[ins]
        rows = np.where(ins)[0]
        rr = rows[pick_r]
        g[rr, :2] = radial[rr]
        zz = rows[~pick_r]
        g[zz, 2] = zsgn[zz]
    return g


# ---------------------------------------------------------------------------
# surface sampling


def sample_surface(scene, n, seed):
    """Area-weighted points on the union boundary of obstacles and walls.

    Draws are rejected when another primitive swallows them, so every
    returned point satisfies |sdf| <= 1e-6.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    prims = scene.all_primitives()
    areas = np.array([p.surface_area() for p in prims])
    weights = areas / areas.sum()
    rng = seeded_rng(seed, 202)
    chunks = []
    collected = 0
    for _ in range(200):
        m = max(1024, 2 * (n - collected))
        chosen = rng.choice(len(prims), size=m, p=weights)
        pts = np.empty((m, 3))
        for i in np.unique(chosen):
            mask = chosen == i
            pts[mask] = _sample_on_primitive(prims[i], int(mask.sum()), rng)
        keep = np.abs(scene.sdf_batch(pts)) <= 1e-6
        chunks.append(pts[keep])
        collected += int(keep.sum())
        if collected >= n:
            break
    else:
        raise RuntimeError("surface sampling failed to converge")
    return PointCloud(np.concatenate(chunks, axis=0)[:n])


def _sample_on_primitive(prim, k, rng):
    if prim.kind == SPHERE:
        v = rng.normal(size=(k, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return prim.position + prim.radius * v
    if prim.kind == CUBOID:
        hx, hy, hz = prim.half_extents
        face_areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy]) * 4.0
        faces = rng.choice(6, size=k, p=face_areas / face_areas.sum())
        u = rng.uniform(-1.0, 1.0, size=(k, 2))
        local = np.empty((k, 3))
        for f in range(6):
            m = faces == f
            axis, side = divmod(f, 2)
            he = prim.half_extents
            others = [i for i in range(3) if i != axis]
            local[m, axis] = he[axis] * (1.0 if side == 0 else -1.0)
            local[m, others[0]] = u[m, 0] * he[others[0]]
            local[m, others[1]] = u[m, 1] * he[others[1]]
        cy, sy = math.cos(prim.yaw), math.sin(prim.yaw)
        wx = local[:, 0] * cy - local[:, 1] * sy
        wy = local[:, 0] * sy + local[:, 1] * cy
        return prim.position + np.stack([wx, wy, local[:, 2]], axis=1)
    # cylinder
    r, hh = prim.radius, prim.half_height
    side_area = 2.0 * math.pi * r * 2.0 * hh
    cap_area = math.pi * r * r
    region = rng.choice(3, size=k, p=np.array([side_area, cap_area, cap_area]) / (side_area + 2 * cap_area))
    phi = rng.uniform(0.0, 2.0 * math.pi, size=k)
    out = np.empty((k, 3))
    side = region == 0
    out[side, 0] = r * np.cos(phi[side])
    out[side, 1] = r * np.sin(phi[side])
    out[side, 2] = rng.uniform(-hh, hh, size=int(side.sum()))
    for reg, z in ((1, hh), (2, -hh)):
        m = region == reg
        rr = r * np.sqrt(rng.uniform(size=int(m.sum())))
        out[m, 0] = rr * np.cos(phi[m])
        out[m, 1] = rr * np.sin(phi[m])
        out[m, 2] = z
    return prim.position + out


# ---------------------------------------------------------------------------
# voxelization


def voxel_bounds(low, high, resolution):
    """Snap an AABB outward onto the canonical grid anchored at the origin."""
    low = np.floor(np.asarray(low, dtype=float) / resolution) * resolution
    dims = np.ceil((np.asarray(high, dtype=float) - low) / resolution - 1e-12).astype(int)
    return low, np.maximum(dims, 1)


def voxelize_spheres(centers, radii, resolution, bounds=None):
    """Occupancy grid of a union of spheres; cell occupied iff its center is inside."""
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    if centers.shape[0] == 0:
        origin = np.zeros(3) if bounds is None else voxel_bounds(bounds[0], bounds[1], resolution)[0]
        dims = (1, 1, 1) if bounds is None else tuple(voxel_bounds(bounds[0], bounds[1], resolution)[1])
        return VoxelGrid(origin, resolution, np.zeros(dims, dtype=bool))
    if bounds is None:
        low = (centers - radii[:, None]).min(axis=0)
        high = (centers + radii[:, None]).max(axis=0)
    else:
        low, high = bounds
    origin, dims = voxel_bounds(low, high, resolution)
    occ = np.zeros(tuple(dims), dtype=bool)
    for c, r in zip(centers, radii):
        i0 = np.maximum(np.floor((c - r - origin) / resolution - 0.5).astype(int), 0)
        i1 = np.minimum(np.ceil((c + r - origin) / resolution - 0.5).astype(int), dims - 1)
        if np.any(i1 < i0):
            continue
        ax = [origin[k] + (np.arange(i0[k], i1[k] + 1) + 0.5) * resolution - c[k] for k in range(3)]
        d2 = (ax[0][:, None, None] ** 2 + ax[1][None, :, None] ** 2 + ax[2][None, None, :] ** 2)
        occ[i0[0]:i1[0] + 1, i0[1]:i1[1] + 1, i0[2]:i1[2] + 1] |= d2 < r * r
    return VoxelGrid(origin, resolution, occ)


def voxelize_scene(scene, resolution, bounds=None):
    """Occupancy of the scene's obstacles and walls on the canonical grid."""
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    if bounds is None:
        if scene.room is None:
            raise ValueError("scene has no room; pass explicit bounds")
        low = scene.room[:, 0] - 0.2
        high = scene.room[:, 1] + 0.2
    else:
        low, high = bounds
    origin, dims = voxel_bounds(low, high, resolution)
    xs = origin[0] + (np.arange(dims[0]) + 0.5) * resolution
    ys = origin[1] + (np.arange(dims[1]) + 0.5) * resolution
    zs = origin[2] + (np.arange(dims[2]) + 0.5) * resolution
    occ = np.zeros(tuple(dims), dtype=bool)
    for ix, x in enumerate(xs):
        grid = np.stack(np.meshgrid([x], ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
        occ[ix] = scene.contains_batch(grid).reshape(len(ys), len(zs))
    return VoxelGrid(origin, resolution, occ)


# ---------------------------------------------------------------------------
# JSON persistence


def _round9(x):
    if isinstance(x, float):
        return float(f"{x:.9g}")
    if isinstance(x, (list, tuple)):
        return [_round9(v) for v in x]
    if isinstance(x, dict):
        return {k: _round9(v) for k, v in x.items()}
    return x


def scene_to_dict(scene):
    obstacles = []
    for p in scene.obstacles:
        entry = {"kind": p.kind, "pose": {"position": p.position.tolist(), "yaw": p.yaw}}
        if p.kind == CUBOID:
            entry["params"] = {"half_extents": p.half_extents.tolist()}
        elif p.kind == SPHERE:
            entry["params"] = {"radius": p.radius}
        else:
            entry["params"] = {"radius": p.radius, "half_height": p.half_height}
        obstacles.append(entry)
    out = {
        "version": SCENE_FORMAT_VERSION,
        "preset": scene.preset,
        "seed": scene.seed,
        "density": scene.density,
        "room": None if scene.room is None else scene.room.tolist(),
        "walled": scene.walled,
        "floor": scene.floor,
        "obstacles": obstacles,
    }
    if scene.start_xy is not None:
        out["start_xy"] = scene.start_xy.tolist()
        out["goal_xy"] = scene.goal_xy.tolist()
    return _round9(out)


def scene_from_dict(data):
    if data.get("version") != SCENE_FORMAT_VERSION:
        raise ValueError(f"unsupported scene format version {data.get('version')}")
    obstacles = []
    for entry in data["obstacles"]:
        params = entry["params"]
        obstacles.append(ObstaclePrimitive(
            entry["kind"], entry["pose"]["position"], entry["pose"]["yaw"],
            half_extents=params.get("half_extents"),
            radius=params.get("radius"), half_height=params.get("half_height")))
    room = None if data.get("room") is None else np.asarray(data["room"])
    return Scene(obstacles=obstacles, room=room, seed=data["seed"],
                 preset=data["preset"], density=data.get("density", 1.0),
                 start_xy=data.get("start_xy"), goal_xy=data.get("goal_xy"),
                 walled=data.get("walled", False), floor=data.get("floor", False))


def save_scene(scene, path):
    with open(path, "w") as f:
        json.dump(scene_to_dict(scene), f, indent=2, sort_keys=True)
        f.write("\n")


def load_scene(path):
    with open(path) as f:
        return scene_from_dict(json.load(f))
