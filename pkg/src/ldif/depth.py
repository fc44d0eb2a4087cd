"""Depth-camera utilities: unprojection, normals, global and per-element point clouds.

Conventions: pixel (u, v) is (column, row) with centers at integer
coordinates; depth is positive along the camera +z axis; extrinsics map
world to camera, x_cam = R x_world + t. Invalid depth is 0 or NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ElementParams, element_transform

LOCAL_RADIUS = 4.0
RADIUS_GROWTH = 1.5
GLOBAL_COUNT = 10_000
LOCAL_COUNT = 1_000


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    extrinsics: np.ndarray  # (3, 4) world -> camera
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        ext = np.asarray(self.extrinsics, dtype=np.float64).reshape(3, 4)
        rot = ext[:, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or np.linalg.det(rot) < 0:
            raise ValueError("extrinsic rotation is not orthonormal")
        object.__setattr__(self, "extrinsics", ext)

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class XyzImage:
    points: np.ndarray  # (h, w, 3) world positions
    valid: np.ndarray   # (h, w) bool


@dataclass(frozen=True)
class OrientedPointCloud:
    points: np.ndarray
    normals: np.ndarray

    def __len__(self):
        return len(self.points)


def _valid_depth(depth):
    return np.isfinite(depth) & (depth > 0)


def unproject(depth, cam: Camera) -> XyzImage:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (cam.height, cam.width):
        raise ValueError(f"depth image is {depth.shape}, camera expects {(cam.height, cam.width)}")
    valid = _valid_depth(depth)
    d = np.where(valid, depth, 0.0)
    v, u = np.mgrid[0:cam.height, 0:cam.width].astype(np.float64)
    x_cam = np.stack([(u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d], axis=-1)
    world = (x_cam - cam.translation) @ cam.rotation
    world[~valid] = np.nan
    return XyzImage(world, valid)


def project(points, cam: Camera) -> np.ndarray:
    """World points (..., 3) to (u, v, depth)."""
    x_cam = np.asarray(points, dtype=np.float64) @ cam.rotation.T + cam.translation
    d = x_cam[..., 2]
    return np.stack([cam.fx * x_cam[..., 0] / d + cam.cx, cam.fy * x_cam[..., 1] / d + cam.cy, d], axis=-1)


def estimate_normals(xyz: XyzImage, cam: Camera) -> tuple[OrientedPointCloud, np.ndarray]:
    """Normals from central differences, oriented toward the camera.

    Only pixels whose four neighbours are valid survive. Returns the cloud and
    the (row, col) pixel index of each point.
    """
    pts, valid = xyz.points, xyz.valid
    h, w = valid.shape
    keep = np.zeros_like(valid)
    if h >= 3 and w >= 3:
        keep[1:-1, 1:-1] = (valid[1:-1, 1:-1] & valid[:-2, 1:-1] & valid[2:, 1:-1]
                            & valid[1:-1, :-2] & valid[1:-1, 2:])
    rows, cols = np.nonzero(keep)
    du = pts[rows, cols + 1] - pts[rows, cols - 1]
    dv = pts[rows + 1, cols] - pts[rows - 1, cols]
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=1)
    ok = norm > 0
    rows, cols, n, norm = rows[ok], cols[ok], n[ok], norm[ok]
    n = n / norm[:, None]
    p = pts[rows, cols]
    flip = np.einsum("ij,ij->i", n, cam.center - p) < 0
    n[flip] *= -1
    return OrientedPointCloud(p, n), np.stack([rows, cols], axis=1)


def gather_global(points, normals, count: int = GLOBAL_COUNT, seed=0) -> OrientedPointCloud:
    """``count`` points without replacement; when fewer exist, all are used and random ones repeat."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("no valid points to sample")
    rng = np.random.default_rng(seed)
    n = len(points)
    if n >= count:
        idx = rng.choice(n, size=count, replace=False)
    else:
        idx = np.concatenate([rng.permutation(n), rng.choice(n, size=count - n, replace=True)])
    return OrientedPointCloud(points[idx], normals[idx])


def extract_local(cloud: OrientedPointCloud, params: ElementParams, count: int = LOCAL_COUNT, seed=0,
                  radius: float = LOCAL_RADIUS, growth: float = RADIUS_GROWTH):
    """Points near one element, measured in its local frame.

    Starts at ``radius`` and grows it by ``growth`` until ``count`` points
    qualify or the whole cloud does, then samples without replacement.
    Returns (cloud subset, indices into the input, final radius).
    """
    if len(cloud) == 0:
        raise ValueError("cannot extract from an empty cloud")
    dist = np.linalg.norm(element_transform(params).apply(cloud.points), axis=1)
    r = radius
    while np.count_nonzero(dist <= r) < min(count, len(dist)):
        r *= growth
    pool = np.flatnonzero(dist <= r)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(pool, size=min(count, len(pool)), replace=False))
    return OrientedPointCloud(cloud.points[idx], cloud.normals[idx]), idx, r


# -- file formats -----------------------------------------------------------


def read_depth_png(path, scale: float = 1000.0) -> np.ndarray:
    """16-bit PNG; stored values are divided by ``scale`` (units per stored count). Zero is invalid."""
    from PIL import Image

    raw = np.asarray(Image.open(path)).astype(np.float64)
    if raw.ndim != 2:
        raise ValueError("depth PNG must be single channel")
    depth = raw / scale
    depth[raw == 0] = np.nan
    return depth


def write_depth_png(path, depth, scale: float = 1000.0) -> None:
    from PIL import Image

    depth = np.asarray(depth, dtype=np.float64)
    stored = np.where(_valid_depth(depth), np.round(np.nan_to_num(depth) * scale), 0)
    if stored.max(initial=0) > 65535:
        raise ValueError("depth exceeds the 16-bit range at this scale")
    Image.fromarray(stored.astype(np.uint16)).save(path)


def read_depth_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    head = data[:nl].decode("ascii").split()
    if len(head) != 3 or head[0] != "DPTH":
        raise ValueError("raw depth file must start with 'DPTH w h'")
    w, h = int(head[1]), int(head[2])
    body = np.frombuffer(data, dtype="<f4", offset=nl + 1)
    if body.size != w * h:
        raise ValueError(f"expected {w * h} depth values, found {body.size}")
    return body.reshape(h, w).astype(np.float64)


def write_depth_raw(path, depth) -> None:
    depth = np.asarray(depth)
    h, w = depth.shape
    Path(path).write_bytes(f"DPTH {w} {h}\n".encode("ascii") + depth.astype("<f4").tobytes())


def read_depth(path, scale: float = 1000.0) -> np.ndarray:
    if Path(path).suffix.lower() == ".png":
        return read_depth_png(path, scale)
    return read_depth_raw(path)


def read_camera(path, width: int, height: int) -> Camera:
    """Text camera: a ``fx fy cx cy`` line, then 12 extrinsic values row-major."""
    vals = Path(path).read_text().split()
    if len(vals) != 16:
        raise ValueError(f"camera file needs 16 numbers, found {len(vals)}")
    v = np.array(vals, dtype=np.float64)
    return Camera(v[0], v[1], v[2], v[3], v[4:].reshape(3, 4), width, height)


def write_camera(path, cam: Camera) -> None:
    rows = [f"{cam.fx!r} {cam.fy!r} {cam.cx!r} {cam.cy!r}"]
    rows += [" ".join(repr(float(x)) for x in row) for row in cam.extrinsics]
    Path(path).write_text("\n".join(rows) + "\n")
