"""Parametric solids, volumetric Poisson-disk sampling, spring connection.

Solids are defined in a local frame and carry a rigid pose.  Sampling is
seeded dart throwing over an active front (Bridson-style) with a spatial
hash grid, so output is deterministic for a given seed.  Neighbor pairs
within a connect radius become springs with rest length equal to the
current distance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .springs import SpringElement

DEFAULT_CONNECT_FACTOR = 1.8


@dataclass(frozen=True)
class Pose:
    """Rigid transform: world = rotation @ local + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ np.asarray(self.rotation).T + np.asarray(
            self.translation
        )

    def invert(self, points: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(points) - np.asarray(self.translation)) @ np.asarray(
            self.rotation
        )

    @staticmethod
    def from_z_axis(z_dir, origin) -> "Pose":
        """Pose whose local +z maps onto z_dir (unit not required)."""
        z = np.asarray(z_dir, dtype=float)
        z = z / np.linalg.norm(z)
        helper = np.array([1.0, 0.0, 0.0])
        if abs(z[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        x = np.cross(helper, z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        rot = np.column_stack([x, y, z])
        return Pose(rotation=rot, translation=np.asarray(origin, dtype=float))


class SolidShape:
    """Base solid: subclasses implement the local membership test and AABB."""

    kind = "solid"

    def __init__(self, pose: Pose | None = None):
        self.pose = pose if pose is not None else Pose()

    def contains_local(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def aabb_local(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Exact membership test in world coordinates."""
        return self.contains_local(self.pose.invert(pts))

    def volume(self) -> float:
        raise NotImplementedError


class Box(SolidShape):
    kind = "box"

    def __init__(self, size, pose: Pose | None = None):
        super().__init__(pose)
        self.size = np.asarray(size, dtype=float).reshape(3)
        if np.any(self.size <= 0.0):
            raise ValueError("box dimensions must be > 0")

    def contains_local(self, pts):
        half = self.size / 2.0
        return np.all(np.abs(np.atleast_2d(pts)) <= half, axis=1)

    def aabb_local(self):
        half = self.size / 2.0
        return -half, half

    def volume(self):
        return float(np.prod(self.size))


class HollowBox(SolidShape):
    """Box shell: inside the outer box but not strictly inside the cavity."""

    kind = "hollow-box"

    def __init__(self, size, wall, pose: Pose | None = None):
        super().__init__(pose)
        self.size = np.asarray(size, dtype=float).reshape(3)
        self.wall = float(wall)
        if np.any(self.size <= 0.0) or self.wall <= 0.0:
            raise ValueError("box dimensions and wall must be > 0")
        if np.any(2.0 * self.wall >= self.size):
            raise ValueError("wall too thick: no cavity remains")

    def contains_local(self, pts):
        pts = np.atleast_2d(pts)
        half = self.size / 2.0
        inner = half - self.wall
        inside_outer = np.all(np.abs(pts) <= half, axis=1)
        inside_cavity = np.all(np.abs(pts) < inner, axis=1)
        return inside_outer & ~inside_cavity

    def aabb_local(self):
        half = self.size / 2.0
        return -half, half

    def volume(self):
        inner = self.size - 2.0 * self.wall
        return float(np.prod(self.size) - np.prod(inner))


class Cylinder(SolidShape):
    """Axis along local +z, base disc at z = 0."""

    kind = "cylinder"

    def __init__(self, radius, length, pose: Pose | None = None):
        super().__init__(pose)
        self.radius = float(radius)
        self.length = float(length)
        if self.radius <= 0.0 or self.length <= 0.0:
            raise ValueError("cylinder dimensions must be > 0")

    def contains_local(self, pts):
        pts = np.atleast_2d(pts)
        r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
        return (pts[:, 2] >= 0) & (pts[:, 2] <= self.length) & (r2 <= self.radius**2)

    def aabb_local(self):
        r = self.radius
        return np.array([-r, -r, 0.0]), np.array([r, r, self.length])

    def volume(self):
        return float(np.pi * self.radius**2 * self.length)


class Frustum(SolidShape):
    """Truncated cone along local +z: base radius at z=0, tip radius at z=length."""

    kind = "frustum"

    def __init__(self, base_radius, tip_radius, length, pose: Pose | None = None):
        super().__init__(pose)
        self.base_radius = float(base_radius)
        self.tip_radius = float(tip_radius)
        self.length = float(length)
        if min(self.base_radius, self.tip_radius, self.length) <= 0.0:
            raise ValueError("frustum dimensions must be > 0")

    def _outer_radius(self, z):
        t = z / self.length
        return self.base_radius + (self.tip_radius - self.base_radius) * t

    def contains_local(self, pts):
        pts = np.atleast_2d(pts)
        z = pts[:, 2]
        ok_z = (z >= 0) & (z <= self.length)
        r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
        rmax = self._outer_radius(np.clip(z, 0.0, self.length))
        return ok_z & (r2 <= rmax**2)

    def aabb_local(self):
        r = max(self.base_radius, self.tip_radius)
        return np.array([-r, -r, 0.0]), np.array([r, r, self.length])

    def volume(self):
        a, b = self.base_radius, self.tip_radius
        return float(np.pi * self.length * (a * a + a * b + b * b) / 3.0)


class HollowFrustum(Frustum):
    """Frustum with a conical cavity; inner radii must stay below outer ones."""

    kind = "hollow-frustum"

    def __init__(
        self,
        base_radius,
        tip_radius,
        base_inner_radius,
        tip_inner_radius,
        length,
        pose: Pose | None = None,
    ):
        super().__init__(base_radius, tip_radius, length, pose)
        self.base_inner_radius = float(base_inner_radius)
        self.tip_inner_radius = float(tip_inner_radius)
        if min(self.base_inner_radius, self.tip_inner_radius) < 0.0:
            raise ValueError("inner radii must be >= 0")
        if (
            self.base_inner_radius >= self.base_radius
            or self.tip_inner_radius >= self.tip_radius
        ):
            raise ValueError("inner radius must be smaller than outer everywhere")

    def _inner_radius(self, z):
        t = z / self.length
        return self.base_inner_radius + (self.tip_inner_radius - self.base_inner_radius) * t

    def contains_local(self, pts):
        pts = np.atleast_2d(pts)
        z = pts[:, 2]
        ok_z = (z >= 0) & (z <= self.length)
        r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
        zc = np.clip(z, 0.0, self.length)
        rmax = self._outer_radius(zc)
        rmin = self._inner_radius(zc)
        return ok_z & (r2 <= rmax**2) & (r2 >= rmin**2)

    def volume(self):
        a, b = self.base_inner_radius, self.tip_inner_radius
        inner = np.pi * self.length * (a * a + a * b + b * b) / 3.0
        return float(super().volume() - inner)


@dataclass
class SampledPart:
    """Poisson-disk sample of one solid; every point lies inside the source."""

    points: np.ndarray
    source: SolidShape
    sample_radius: float
    part_mass: float = 1.0

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def point_mass(self) -> float:
        return self.part_mass / self.n_points


def poisson_sample(
    shape: SolidShape,
    radius: float,
    seed: int,
    part_mass: float = 1.0,
    k_attempts: int = 30,
) -> SampledPart:
    """Maximal-ish Poisson-disk sample of a solid; deterministic for a seed.

    All pairwise distances are >= radius.  If the radius exceeds the solid's
    extent the sample degenerates to a single interior point.
    """
    if radius <= 0.0:
        raise ValueError("radius must be > 0")
    rng = np.random.default_rng(seed)
    lo, hi = shape.aabb_local()
    span = hi - lo

    cell = radius / np.sqrt(3.0)
    dims = np.maximum(np.ceil(span / cell).astype(int), 1)
    grid = -np.ones(dims, dtype=np.int64)

    points: list[np.ndarray] = []

    def cell_of(p):
        idx = np.minimum(((p - lo) / cell).astype(int), dims - 1)
        return tuple(idx)

    def fits(p):
        ci = cell_of(p)
        lo_i = [max(0, ci[d] - 2) for d in range(3)]
        hi_i = [min(dims[d], ci[d] + 3) for d in range(3)]
        block = grid[lo_i[0] : hi_i[0], lo_i[1] : hi_i[1], lo_i[2] : hi_i[2]]
        occupied = block[block >= 0]
        if occupied.size == 0:
            return True
        near = np.asarray([points[i] for i in occupied])
        d2 = np.einsum("ij,ij->i", near - p, near - p)
        return bool(np.all(d2 >= radius * radius))

    def insert(p):
        points.append(p)
        grid[cell_of(p)] = len(points) - 1

    # initial interior point by rejection into the AABB
    first = None
    for _ in range(200000):
        cand = lo + rng.random(3) * span
        if shape.contains_local(cand[None, :])[0]:
            first = cand
            break
    if first is None:
        raise ValueError(f"could not place a point inside {shape.kind} solid")
    insert(first)

    active = [0]
    while active:
        pick = int(rng.integers(len(active)))
        base = points[active[pick]]
        placed = False
        for _ in range(k_attempts):
            direction = rng.normal(size=3)
            norm = np.linalg.norm(direction)
            if norm == 0.0:
                continue
            direction /= norm
            cand = base + direction * (radius * (1.0 + rng.random()))
            if np.any(cand < lo) or np.any(cand > hi):
                continue
            if not shape.contains_local(cand[None, :])[0]:
                continue
            if fits(cand):
                insert(cand)
                active.append(len(points) - 1)
                placed = True
                break
        if not placed:
            active.pop(pick)

    world = shape.pose.apply(np.asarray(points))
    return SampledPart(
        points=world, source=shape, sample_radius=float(radius), part_mass=float(part_mass)
    )


def neighbor_pairs(points: np.ndarray, radius: float) -> np.ndarray:
    """Unordered index pairs (a < b) with distance <= radius, sorted by (a, b)."""
    if points.shape[0] < 2:
        return np.zeros((0, 2), dtype=np.int64)
    tree = cKDTree(points)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if pairs.shape[0] == 0:
        return pairs.astype(np.int64)
    pairs = np.sort(pairs, axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order].astype(np.int64)


def component_count(n_points: int, pairs: np.ndarray) -> int:
    if n_points == 0:
        return 0
    if pairs.shape[0] == 0:
        return n_points
    data = np.ones(pairs.shape[0])
    graph = coo_matrix(
        (data, (pairs[:, 0], pairs[:, 1])), shape=(n_points, n_points)
    )
    n_comp, _ = connected_components(graph, directed=False)
    return int(n_comp)


def connect_springs(
    part: SampledPart,
    connect_radius: float,
    stiffness: float,
    damping: float = 0.0,
) -> list[SpringElement]:
    """One spring per point pair within connect_radius, rest length = distance.

    Emits a RuntimeWarning when the resulting graph is disconnected (such a
    part will fall apart in simulation).
    """
    pairs = neighbor_pairs(part.points, connect_radius)
    n_comp = component_count(part.n_points, pairs)
    if n_comp > 1:
        warnings.warn(
            f"spring graph is disconnected: {n_comp} components "
            f"({part.n_points} points, connect_radius={connect_radius:g})",
            RuntimeWarning,
            stacklevel=2,
        )
    if pairs.shape[0] == 0:
        return []
    d = part.points[pairs[:, 1]] - part.points[pairs[:, 0]]
    rest = np.sqrt(np.einsum("ij,ij->i", d, d))
    return [
        SpringElement(
            endpoint_a=int(a),
            endpoint_b=int(b),
            rest_length=float(r),
            stiffness=float(stiffness),
            damping=float(damping),
        )
        for (a, b), r in zip(pairs, rest)
    ]
