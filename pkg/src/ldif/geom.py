"""Triangle meshes, inside/outside labeling, sampling and the coarse SDF grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

SDF_RESOLUTION = 32
GRID_PADDING = 1.1
NEAR_SURFACE_SIGMA = 0.01

INSIDE = 0
OUTSIDE = 1


class NotWatertightError(ValueError):
    pass


def _rng(seed):
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def corners(self) -> np.ndarray:
        """(T, 3, 3) triangle corner coordinates."""
        return self.vertices[self.triangles]

    def face_areas(self) -> np.ndarray:
        a, b, c = np.moveaxis(self.corners, 1, 0)
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_normals(self) -> np.ndarray:
        a, b, c = np.moveaxis(self.corners, 1, 0)
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.sort(e, axis=1)

    def is_watertight(self) -> bool:
        if len(self.triangles) == 0:
            return False
        _, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def signed_volume(self) -> float:
        a, b, c = np.moveaxis(self.corners, 1, 0)
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def euler_characteristic(self) -> int:
        n_edges = len(np.unique(self.edges(), axis=0))
        n_verts = len(np.unique(self.triangles))
        return n_verts - n_edges + len(self.triangles)

    def connected_components(self) -> int:
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        used = np.unique(self.triangles)
        if len(used) == 0:
            return 0
        e = self.edges()
        n = len(self.vertices)
        graph = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        _, labels = connected_components(graph, directed=False)
        return len(np.unique(labels[used]))

    def transformed(self, fn) -> "TriMesh":
        return TriMesh(fn(self.vertices), self.triangles)


def require_watertight(mesh: TriMesh) -> None:
    if not mesh.is_watertight():
        raise NotWatertightError("mesh is not watertight (found an edge not shared by exactly two triangles)")


# -- inside/outside by ray parity -------------------------------------------


class _RayColumn:
    """Triangles projected along one ray direction and binned on a 2D grid.

    A query only tests the triangles whose projected bounding box overlaps its
    bin, which keeps parity counting close to linear in the number of points.
    """

    def __init__(self, mesh: TriMesh, direction: np.ndarray):
        d = direction / np.linalg.norm(direction)
        helper = np.eye(3)[np.argmin(np.abs(d))]
        a = np.cross(d, helper)
        a /= np.linalg.norm(a)
        b = np.cross(d, a)
        self.basis = np.stack([a, b])
        self.direction = d

        tri = mesh.corners
        self.tri2 = tri @ self.basis.T  # (T, 3, 2)
        self.tri_depth = tri @ d  # (T, 3)
        lo = self.tri2.min(axis=1)
        hi = self.tri2.max(axis=1)
        self.origin = lo.min(axis=0)
        extent = hi.max(axis=0) - self.origin
        n_tri = len(tri)
        self.nb = int(np.clip(np.sqrt(n_tri), 1, 512))
        self.cell = np.where(extent > 0, extent / self.nb, 1.0)
        self.extent = extent

        i0 = self._bin(lo)
        i1 = self._bin(hi)
        span = i1 - i0 + 1
        counts = span[:, 0] * span[:, 1]
        tri_ids = np.repeat(np.arange(n_tri), counts)
        offset = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        width = np.repeat(span[:, 0], counts)
        bx = np.repeat(i0[:, 0], counts) + offset % width
        by = np.repeat(i0[:, 1], counts) + offset // width
        bins = bx * self.nb + by
        order = np.argsort(bins, kind="stable")
        self.bin_tris = tri_ids[order]
        self.bin_start = np.concatenate([[0], np.cumsum(np.bincount(bins, minlength=self.nb * self.nb))])

    def _bin(self, xy):
        idx = np.floor((xy - self.origin) / self.cell).astype(np.int64)
        return np.clip(idx, 0, self.nb - 1)

    def crossings(self, points: np.ndarray) -> np.ndarray:
        q2 = points @ self.basis.T
        qd = points @ self.direction
        out = np.zeros(len(points), dtype=np.int64)
        rel = q2 - self.origin
        in_box = np.all((rel >= 0) & (rel <= self.extent), axis=1)
        pts = np.nonzero(in_box)[0]
        if len(pts) == 0:
            return out
        bins = self._bin(q2[pts])
        b = bins[:, 0] * self.nb + bins[:, 1]
        start = self.bin_start[b]
        n = self.bin_start[b + 1] - start
        pair_pt = np.repeat(pts, n)
        pair_off = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
        pair_tri = self.bin_tris[np.repeat(start, n) + pair_off]

        t2 = self.tri2[pair_tri]
        p = q2[pair_pt]
        v0 = t2[:, 1] - t2[:, 0]
        v1 = t2[:, 2] - t2[:, 0]
        v2 = p - t2[:, 0]
        den = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
        ok = den != 0
        den = np.where(ok, den, 1.0)
        wb = (v2[:, 0] * v1[:, 1] - v1[:, 0] * v2[:, 1]) / den
        wc = (v0[:, 0] * v2[:, 1] - v2[:, 0] * v0[:, 1]) / den
        wa = 1.0 - wb - wc
        hit = ok & (wa >= 0) & (wb >= 0) & (wc >= 0)
        td = self.tri_depth[pair_tri]
        depth = wa * td[:, 0] + wb * td[:, 1] + wc * td[:, 2]
        hit &= depth > qd[pair_pt]
        return np.bincount(pair_pt[hit], minlength=len(points))


class InsideTester:
    """Parity of ray crossings along three seeded random directions, majority vote."""

    def __init__(self, mesh: TriMesh, n_rays: int = 3, seed: int = 0, chunk: int = 50_000):
        require_watertight(mesh)
        dirs = _rng(seed).normal(size=(n_rays, 3))
        self.columns = [_RayColumn(mesh, d) for d in dirs]
        self.chunk = chunk

    def contains(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.empty(len(points), dtype=bool)
        for s in range(0, len(points), self.chunk):
            block = points[s:s + self.chunk]
            votes = sum(col.crossings(block) % 2 for col in self.columns)
            out[s:s + self.chunk] = 2 * votes > len(self.columns)
        return out

    def labels(self, points) -> np.ndarray:
        """Indicator labels: 0 inside, 1 outside."""
        return np.where(self.contains(points), INSIDE, OUTSIDE).astype(np.int8)


def inside_outside(mesh: TriMesh, x) -> np.ndarray:
    """Label query points 0 (inside) or 1 (outside) against a watertight mesh."""
    return InsideTester(mesh).labels(x)


# -- distances --------------------------------------------------------------


def closest_point_on_triangles(p, a, b, c):
    """Closest point to ``p`` on triangle (a, b, c); all (n, 3), row-paired.

    Region classification follows the Voronoi-region walk of Ericson,
    Real-Time Collision Detection, 5.1.5.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[:, None] + ac * w[:, None]

        # edge and vertex regions
        m_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out = np.where(m_bc[:, None], b + (c - b) * t_bc[:, None], out)
        m_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t_ac = d2 / (d2 - d6)
        out = np.where(m_ac[:, None], a + ac * t_ac[:, None], out)
        m_c = (d6 >= 0) & (d5 <= d6)
        out = np.where(m_c[:, None], c, out)
        m_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t_ab = d1 / (d1 - d3)
        out = np.where(m_ab[:, None], a + ab * t_ab[:, None], out)

    # later assignments take priority: A, B, AB, C, AC, BC, interior
    m_b = (d3 >= 0) & (d4 <= d3)
    out = np.where(m_b[:, None], b, out)
    m_a = (d1 <= 0) & (d2 <= 0)
    out = np.where(m_a[:, None], a, out)
    return out


def distance_to_mesh(mesh: TriMesh, points, max_pairs: int = 2_000_000) -> np.ndarray:
    """Exact unsigned distance from each point to the nearest triangle."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.corners
    centroids = tri.mean(axis=1)
    radius = np.linalg.norm(tri - centroids[:, None, :], axis=2).max(axis=1)
    # nearest vertex bounds the answer; only triangles whose bounding sphere
    # reaches inside that bound can hold the minimum
    upper, _ = cKDTree(mesh.vertices).query(points)
    cand = cKDTree(centroids).query_ball_point(points, upper + radius.max() + 1e-12)
    lengths = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(points))
    flat = np.fromiter((t for c in cand for t in c), dtype=np.int64, count=int(lengths.sum()))
    owner = np.repeat(np.arange(len(points)), lengths)

    best = upper.copy()
    for s in range(0, len(flat), max_pairs):
        o = owner[s:s + max_pairs]
        t = flat[s:s + max_pairs]
        q = closest_point_on_triangles(points[o], tri[t, 0], tri[t, 1], tri[t, 2])
        d = np.linalg.norm(points[o] - q, axis=1)
        np.minimum.at(best, o, d)
    return best


# -- sampling ---------------------------------------------------------------


def sample_surface(mesh: TriMesh, count: int, seed=0, return_faces: bool = False):
    """Area-weighted uniform samples on the surface with their face normals."""
    rng = _rng(seed)
    if count == 0:
        empty = np.zeros((0, 3))
        return (empty, empty, np.zeros(0, dtype=np.int64)) if return_faces else (empty, empty)
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    cdf = np.cumsum(areas) / total
    faces = np.minimum(np.searchsorted(cdf, rng.random(count), side="right"), len(areas) - 1)
    u = rng.random((count, 2))
    s = np.sqrt(u[:, 0])
    wa = 1.0 - s
    wb = s * (1.0 - u[:, 1])
    wc = s * u[:, 1]
    tri = mesh.corners[faces]
    pts = wa[:, None] * tri[:, 0] + wb[:, None] * tri[:, 1] + wc[:, None] * tri[:, 2]
    normals = mesh.face_normals()[faces]
    if return_faces:
        return pts, normals, faces
    return pts, normals


@dataclass
class LabeledSampleSet:
    points: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    origin: np.ndarray = field(default=None)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.origin is None:
            self.origin = np.full(len(self.points), "uniform")
        if not (len(self.points) == len(self.labels) == len(self.weights) == len(self.origin)):
            raise ValueError("sample arrays must have equal length")

    def __len__(self):
        return len(self.points)

    @staticmethod
    def concat(*sets: "LabeledSampleSet") -> "LabeledSampleSet":
        return LabeledSampleSet(
            np.concatenate([s.points for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.weights for s in sets]),
            np.concatenate([s.origin for s in sets]),
        )


def sample_near_surface(mesh: TriMesh, count: int, sigma: float = NEAR_SURFACE_SIGMA, seed=0,
                        weight: float = 0.1, tester: InsideTester | None = None) -> LabeledSampleSet:
    rng = _rng(seed)
    tester = tester or InsideTester(mesh)
    pts, _ = sample_surface(mesh, count, rng)
    if sigma > 0:
        pts = pts + rng.normal(scale=sigma, size=pts.shape)
    return LabeledSampleSet(pts, tester.labels(pts), np.full(count, weight), np.full(count, "near_surface"))


def sample_uniform(bounds, count: int, mesh: TriMesh, seed=0, weight: float = 1.0,
                   tester: InsideTester | None = None) -> LabeledSampleSet:
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    rng = _rng(seed)
    pts = lo + (hi - lo) * rng.random((count, 3))
    tester = tester or InsideTester(mesh)
    return LabeledSampleSet(pts, tester.labels(pts), np.full(count, weight), np.full(count, "uniform"))


# -- SDF grid ---------------------------------------------------------------


@dataclass(frozen=True)
class SdfGrid:
    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray  # (res, res, res), indexed [x, y, z]

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (self.resolution - 1)

    @property
    def half_cell(self) -> float:
        return 0.5 * float(self.spacing.max())

    def nodes(self) -> np.ndarray:
        axes = [self.lo[a] + self.spacing[a] * np.arange(self.resolution) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def contains(self, points) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.lo) & (points <= self.hi), axis=1)

    def sample(self, points, with_grad: bool = False):
        """Trilinear interpolation; points are clamped into the grid box."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        res = self.resolution
        sp = np.where(self.spacing > 0, self.spacing, 1.0)
        rel = np.clip((points - self.lo) / sp, 0, res - 1)
        i0 = np.minimum(np.floor(rel).astype(np.int64), res - 2)
        t = rel - i0
        v = self.values
        x0, y0, z0 = i0.T
        c = np.empty((len(points), 2, 2, 2))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    c[:, dx, dy, dz] = v[x0 + dx, y0 + dy, z0 + dz]
        tx, ty, tz = t.T
        cx = c[:, 0] * (1 - tx)[:, None, None] + c[:, 1] * tx[:, None, None]
        cy = cx[:, 0] * (1 - ty)[:, None] + cx[:, 1] * ty[:, None]
        val = cy[:, 0] * (1 - tz) + cy[:, 1] * tz
        if not with_grad:
            return val
        dcx = (c[:, 1] - c[:, 0])
        dcx_y = dcx[:, 0] * (1 - ty)[:, None] + dcx[:, 1] * ty[:, None]
        gx = dcx_y[:, 0] * (1 - tz) + dcx_y[:, 1] * tz
        dcy = cx[:, 1] - cx[:, 0]
        gy = dcy[:, 0] * (1 - tz) + dcy[:, 1] * tz
        gz = cy[:, 1] - cy[:, 0]
        grad = np.stack([gx, gy, gz], axis=1) / sp
        return val, grad


def padded_bounds(mesh: TriMesh, factor: float = GRID_PADDING) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = mesh.bounds()
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * factor
    return center - half, center + half


def build_sdf_grid(mesh: TriMesh, resolution: int = SDF_RESOLUTION,
                   tester: InsideTester | None = None) -> SdfGrid:
    tester = tester or InsideTester(mesh)
    lo, hi = padded_bounds(mesh)
    axes = [np.linspace(lo[a], hi[a], resolution) for a in range(3)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dist = distance_to_mesh(mesh, nodes)
    sign = np.where(tester.contains(nodes), -1.0, 1.0)
    return SdfGrid(lo, hi, (sign * dist).reshape(resolution, resolution, resolution))


# -- normalization ----------------------------------------------------------


@dataclass(frozen=True)
class Frame:
    """Similarity map ``x -> scale * (x - center)`` into the normalized frame."""

    scale: float
    center: np.ndarray

    def apply(self, x):
        return self.scale * (np.asarray(x, dtype=np.float64) - self.center)

    def invert(self, y):
        return np.asarray(y, dtype=np.float64) / self.scale + self.center


def normalize_frame(mesh: TriMesh) -> tuple[TriMesh, Frame]:
    """Center the bounding box at the origin and scale its longest edge to 1."""
    lo, hi = mesh.bounds()
    longest = float((hi - lo).max())
    if longest <= 0:
        raise ValueError("mesh has zero extent")
    frame = Frame(1.0 / longest, 0.5 * (lo + hi))
    return mesh.transformed(frame.apply), frame
