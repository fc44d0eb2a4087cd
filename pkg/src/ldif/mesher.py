"""Surface extraction: dense field sampling plus marching cubes at the isolevel."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from skimage import measure

from .fixtures import icosphere
from .geom import TriMesh
from .loss import ISOLEVEL
from .model import LdifModel, euler_rotation, eval_ldif_batch, reflection

log = logging.getLogger(__name__)

MIN_BOUNDS = (np.full(3, -0.6), np.full(3, 0.6))


@dataclass(frozen=True)
class MeshingConfig:
    resolution: int = 128
    bounds: tuple | None = None  # None: derived from the model
    isolevel: float = ISOLEVEL
    threads: int = 1

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be at least 2")
        if not self.isolevel < 0:
            raise ValueError("isolevel must be negative")


def _placed_elements(model: LdifModel):
    """(centers, rotations, radii, scales) of every evaluated term, mirrored copies included."""
    idx, mirrored = model.instances()
    theta = model.theta[idx]
    rot = euler_rotation(theta[:, 7:10])
    s = reflection(model.sym_axis)
    centers = theta[:, 1:4].copy()
    centers[mirrored] *= s
    # mirrored term: T(Sx) = diag(1/r) R^T S (x - S p), so its world frame is S R
    rot[mirrored] = s[:, None] * rot[mirrored]
    return centers, rot, theta[:, 4:7], theta[:, 0]


def default_bounds(model: LdifModel, isolevel: float = ISOLEVEL) -> tuple[np.ndarray, np.ndarray]:
    """Box covering 3 sigma of every Gaussian, widened where the summed scale could still
    reach the isolevel, and never smaller than [-0.6, 0.6]^3."""
    centers, rot, radii, scales = _placed_elements(model)
    lo, hi = MIN_BOUNDS[0].copy(), MIN_BOUNDS[1].copy()
    if len(centers) == 0:
        return lo, hi
    total = np.abs(scales).sum()
    reach = max(3.0, np.sqrt(2 * np.log(max(total / abs(isolevel), 1.0))) * 1.05)
    half = reach * np.sqrt(np.sum((rot * radii[:, None, :]) ** 2, axis=2))
    lo = np.minimum(lo, (centers - half).min(axis=0))
    hi = np.maximum(hi, (centers + half).max(axis=0))
    return lo, hi


def field_grid(model: LdifModel, cfg: MeshingConfig = MeshingConfig()):
    """Field values on a res^3 lattice of nodes, indexed [x, y, z], with its bounds."""
    lo, hi = cfg.bounds if cfg.bounds is not None else default_bounds(model, cfg.isolevel)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    res = cfg.resolution
    axes = [np.linspace(lo[a], hi[a], res) for a in range(3)]
    yz = np.stack(np.meshgrid(axes[1], axes[2], indexing="ij"), axis=-1).reshape(-1, 2)

    def slab(i):
        pts = np.column_stack([np.full(len(yz), axes[0][i]), yz])
        return eval_ldif_batch(pts, model).reshape(res, res)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            slabs = list(pool.map(slab, range(res)))
    else:
        slabs = [slab(i) for i in range(res)]
    return np.stack(slabs), (lo, hi)


def mesh_from_field(values: np.ndarray, bounds, isolevel: float = ISOLEVEL) -> TriMesh:
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    if not (values.min() < isolevel < values.max()):
        log.warning("field never crosses the isolevel %g; extracted mesh is empty", isolevel)
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    spacing = (hi - lo) / (np.array(values.shape) - 1)
    # inside is the low side, so contour the negated field with the high side as object
    verts, faces, _, _ = measure.marching_cubes(-values, -isolevel, spacing=tuple(spacing),
                                                gradient_direction="descent")
    verts = verts.astype(np.float64) + lo
    # weld exact duplicates that degenerate cases can emit, then drop collapsed faces
    uniq, inverse = np.unique(verts, axis=0, return_inverse=True)
    faces = inverse.reshape(-1)[faces]
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    # skimage winds these faces inward for this sign convention
    return TriMesh(uniq, faces[keep][:, [0, 2, 1]])


def extract_mesh(model: LdifModel, cfg: MeshingConfig = MeshingConfig(), world: bool = False) -> TriMesh:
    """Marching cubes on LDIF(x) < isolevel. With ``world`` the vertices are mapped back
    through the model's frame, if it has one."""
    values, bounds = field_grid(model, cfg)
    mesh = mesh_from_field(values, bounds, cfg.isolevel)
    if world and model.frame is not None:
        mesh = mesh.transformed(model.frame.invert)
    return mesh


def level_radius(scale: float, isolevel: float = ISOLEVEL) -> float | None:
    """Local-frame radius where an isolated Gaussian crosses the isolevel, or None."""
    if abs(scale) <= abs(isolevel):
        return None
    return float(np.sqrt(2 * np.log(abs(scale) / abs(isolevel))))


def element_ellipsoids(model: LdifModel, isolevel: float = ISOLEVEL, subdiv: int = 2):
    """One ellipsoid per evaluated term at its isolated-Gaussian level set.

    Returns the combined mesh and the term index of every triangle. Terms whose
    Gaussian never reaches the isolevel are skipped.
    """
    centers, rot, radii, scales = _placed_elements(model)
    unit = icosphere(subdiv)
    verts, tris, tags = [], [], []
    offset = 0
    for k in range(len(centers)):
        rho = level_radius(scales[k], isolevel)
        if rho is None:
            log.warning("element term %d never reaches the isolevel; not exported", k)
            continue
        local = unit.vertices * rho * radii[k]
        v = local @ rot[k].T + centers[k]
        t = unit.triangles
        if np.linalg.det(rot[k]) < 0:
            t = t[:, [0, 2, 1]]
        verts.append(v)
        tris.append(t + offset)
        tags.append(np.full(len(t), k))
        offset += len(v)
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), np.zeros(0, dtype=np.int64)
    mesh = TriMesh(np.concatenate(verts), np.concatenate(tris))
    if model.frame is not None:
        mesh = mesh.transformed(model.frame.invert)
    return mesh, np.concatenate(tags)


def write_field_dump(path, values: np.ndarray, bounds) -> None:
    """Raw field: text header with dims and bounds, then little-endian float32 values (x fastest)."""
    lo, hi = bounds
    nx, ny, nz = values.shape
    header = f"FIELD {nx} {ny} {nz} " + " ".join(repr(float(v)) for v in (*lo, *hi)) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(values.transpose(2, 1, 0), dtype="<f4").tobytes())


def read_field_dump(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if header[0] != "FIELD":
            raise ValueError("not a field dump")
        nx, ny, nz = map(int, header[1:4])
        b = list(map(float, header[4:10]))
        data = np.frombuffer(fh.read(), dtype="<f4")
    values = data.reshape(nz, ny, nx).transpose(2, 1, 0)
    return values, (np.array(b[:3]), np.array(b[3:]))

