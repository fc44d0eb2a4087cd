"""Deterministic watertight test shapes with analytic membership tests."""

from __future__ import annotations

import numpy as np

from .geom import TriMesh

KINDS = ("icosphere", "box", "torus", "chair")

# (lo, hi) boxes of the chair, z up, mirror-symmetric about x = 0
CHAIR_BOXES = (
    ((-0.4, -0.4, 0.4), (0.4, 0.4, 0.6)),   # seat
    ((-0.4, 0.2, 0.6), (0.4, 0.4, 1.2)),    # back
    ((-0.4, -0.4, 0.0), (-0.2, 0.4, 0.4)),  # left leg panel
    ((0.2, -0.4, 0.0), (0.4, 0.4, 0.4)),    # right leg panel
)
CHAIR_LATTICE = 0.05


def icosphere(subdiv: int = 3, radius: float = 1.0) -> TriMesh:
    phi = (1 + 5 ** 0.5) / 2
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdiv):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriMesh(np.array(verts) * radius, np.array(faces))


def box(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5)) -> TriMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.array([[(hi if (i >> k) & 1 else lo)[k] for k in range(3)] for i in range(8)])
    # vertex i has bit k set when coordinate k is at hi
    quads = [(0, 2, 3, 1), (4, 5, 7, 6),
             (0, 1, 5, 4), (2, 6, 7, 3),
             (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    mesh = TriMesh(corners, np.array(tris))
    return _orient_outward(mesh)


def _orient_outward(mesh: TriMesh) -> TriMesh:
    """Flip each face of a convex mesh so its normal points away from the centroid."""
    center = mesh.vertices.mean(axis=0)
    tri = mesh.triangles.copy()
    n = mesh.face_normals()
    outward = np.einsum("ij,ij->i", n, mesh.corners.mean(axis=1) - center) > 0
    tri[~outward] = tri[~outward][:, [0, 2, 1]]
    return TriMesh(mesh.vertices, tri)


def torus(major: float = 1.0, minor: float = 0.5, n_major: int = 64, n_minor: int = 32) -> TriMesh:
    """Torus around the z axis."""
    u = 2 * np.pi * np.arange(n_major) / n_major
    v = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major + minor * np.cos(vv)
    verts = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor * np.sin(vv)], axis=-1).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a = i * n_minor + j
    b = ((i + 1) % n_major) * n_minor + j
    c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
    d = i * n_minor + (j + 1) % n_minor
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriMesh(verts, tris)


def voxel_union(boxes, lattice: float) -> TriMesh:
    """Boundary of a union of lattice-aligned boxes, two triangles per exposed cell face."""
    boxes = [(np.asarray(lo, float), np.asarray(hi, float)) for lo, hi in boxes]
    lo = np.min([b[0] for b in boxes], axis=0)
    hi = np.max([b[1] for b in boxes], axis=0)
    shape = np.rint((hi - lo) / lattice).astype(int)
    centers = [lo[a] + lattice * (np.arange(shape[a]) + 0.5) for a in range(3)]
    cx, cy, cz = np.meshgrid(*centers, indexing="ij")
    occ = np.zeros(shape, dtype=bool)
    for blo, bhi in boxes:
        occ |= (cx > blo[0]) & (cx < bhi[0]) & (cy > blo[1]) & (cy < bhi[1]) & (cz > blo[2]) & (cz < bhi[2])
    pad = np.pad(occ, 1)

    index: dict[tuple[int, int, int], int] = {}
    verts: list[tuple[int, int, int]] = []
    tris = []

    def vid(p):
        if p not in index:
            index[p] = len(verts)
            verts.append(p)
        return index[p]

    for axis in range(3):
        other = [a for a in range(3) if a != axis]
        for sign in (-1, 1):
            nb = np.roll(pad, -sign, axis=axis)[1:-1, 1:-1, 1:-1]
            for cell in zip(*np.nonzero(occ & ~nb)):
                base = list(cell)
                if sign > 0:
                    base[axis] += 1
                quad = []
                for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    p = list(base)
                    p[other[0]] += du
                    p[other[1]] += dv
                    quad.append(vid(tuple(p)))
                a, b, c, d = quad
                # (other0, other1) is right-handed with +axis for axis 0 and 2 and
                # left-handed for axis 1
                flip = (sign < 0) != (axis == 1)
                if flip:
                    tris += [(a, c, b), (a, d, c)]
                else:
                    tris += [(a, b, c), (a, c, d)]
    v = lo + lattice * np.array(verts, dtype=np.float64)
    return TriMesh(v, np.array(tris))


def chair() -> TriMesh:
    return voxel_union(CHAIR_BOXES, CHAIR_LATTICE)


def make_fixture(kind: str, **params) -> TriMesh:
    if kind == "icosphere":
        return icosphere(**params)
    if kind == "box":
        return box(**params)
    if kind == "torus":
        return torus(**params)
    if kind == "chair":
        return chair(**params)
    raise ValueError(f"unknown fixture kind {kind!r}; expected one of {KINDS}")


def analytic_inside(kind: str, points, **params) -> np.ndarray:
    """Membership in the ideal shape a fixture approximates."""
    p = np.atleast_2d(points)
    if kind == "icosphere":
        return np.linalg.norm(p, axis=1) < params.get("radius", 1.0)
    if kind == "box":
        lo = np.asarray(params.get("lo", (-0.5,) * 3))
        hi = np.asarray(params.get("hi", (0.5,) * 3))
        return np.all((p > lo) & (p < hi), axis=1)
    if kind == "torus":
        major = params.get("major", 1.0)
        minor = params.get("minor", 0.5)
        ring = np.hypot(p[:, 0], p[:, 1]) - major
        return ring ** 2 + p[:, 2] ** 2 < minor ** 2
    if kind == "chair":
        inside = np.zeros(len(p), dtype=bool)
        for lo, hi in CHAIR_BOXES:
            inside |= np.all((p > lo) & (p < hi), axis=1)
        return inside
    raise ValueError(f"unknown fixture kind {kind!r}")
