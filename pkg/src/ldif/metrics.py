"""Reconstruction metrics: volumetric IoU, Chamfer (x100) and F-Score at tau."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geom import Frame, InsideTester, NotWatertightError, TriMesh, normalize_frame, sample_surface
from .loss import ISOLEVEL
from .model import LdifModel, eval_ldif_batch

log = logging.getLogger(__name__)

DEFAULT_SAMPLES = 100_000
DEFAULT_TAU = 0.01


@dataclass(frozen=True)
class MetricsReport:
    iou: float | None
    chamfer: float
    fscore: float
    tau: float
    n_samples: int

    def csv_header(self) -> str:
        return "iou,chamfer,fscore,tau,samples"

    def csv_row(self) -> str:
        iou = "" if self.iou is None else repr(float(self.iou))
        return f"{iou},{float(self.chamfer)!r},{float(self.fscore)!r},{float(self.tau)!r},{int(self.n_samples)}"

    def pretty(self) -> str:
        iou = "n/a" if self.iou is None else f"{self.iou:.4f}"
        return (f"IoU      {iou}\n"
                f"Chamfer  {self.chamfer:.5f}  (x100, squared distances)\n"
                f"F-Score  {self.fscore:.2f}  (tau = {self.tau:g})\n"
                f"samples  {self.n_samples}")


def nearest_distances(src, dst) -> np.ndarray:
    """Distance from each point of ``src`` to its nearest point in ``dst`` (exact, k-d tree)."""
    return cKDTree(dst).query(src, k=1)[0]


def chamfer_points(a, b) -> float:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    return 100.0 * (np.mean(nearest_distances(a, b) ** 2) + np.mean(nearest_distances(b, a) ** 2))


def fscore_points(pred, gt, tau: float = DEFAULT_TAU) -> float:
    """F-Score in percent from point-to-point distances."""
    precision = 100.0 * np.mean(nearest_distances(pred, gt) <= tau)
    recall = 100.0 * np.mean(nearest_distances(gt, pred) <= tau)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _rng(seed, offset):
    return np.random.default_rng(np.random.SeedSequence([int(seed), offset]))


def _surface_pairs(pred: TriMesh, gt: TriMesh, n: int, seed: int):
    # both surfaces draw from the same stream, so identical meshes give identical sets
    a, _ = sample_surface(pred, n, _rng(seed, 1))
    b, _ = sample_surface(gt, n, _rng(seed, 1))
    return a, b


def metric_chamfer(pred: TriMesh, gt: TriMesh, n: int = DEFAULT_SAMPLES, seed: int = 7) -> float:
    return chamfer_points(*_surface_pairs(pred, gt, n, seed))


def metric_fscore(pred: TriMesh, gt: TriMesh, tau: float = DEFAULT_TAU, n: int = DEFAULT_SAMPLES,
                  seed: int = 7) -> float:
    return fscore_points(*_surface_pairs(pred, gt, n, seed), tau)


def _inside(shape, points, isolevel):
    if isinstance(shape, LdifModel):
        return eval_ldif_batch(points, shape) < isolevel
    if len(shape.triangles) == 0:
        return np.zeros(len(points), dtype=bool)
    return InsideTester(shape).contains(points)


def _extent(shape, isolevel):
    if isinstance(shape, LdifModel):
        from .mesher import default_bounds
        return default_bounds(shape, isolevel)
    if len(shape.vertices) == 0:
        return None, None
    return shape.bounds()


def metric_iou(pred: LdifModel | TriMesh, gt: TriMesh, n: int = DEFAULT_SAMPLES, seed: int = 7,
               isolevel: float = ISOLEVEL) -> float:
    """IoU of inside labels on uniform samples from the union bounding box padded by 5%."""
    plo, phi = _extent(pred, isolevel)
    glo, ghi = gt.bounds()
    if plo is None:
        plo, phi = glo, ghi
    lo = np.minimum(plo, glo)
    hi = np.maximum(phi, ghi)
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    pts = lo + (hi - lo) * _rng(seed, 3).random((n, 3))
    a = _inside(pred, pts, isolevel)
    b = _inside(gt, pts, isolevel)
    union = np.count_nonzero(a | b)
    if union == 0:
        log.warning("neither shape contains any IoU sample; reporting IoU 0")
        return 0.0
    return np.count_nonzero(a & b) / union


def _to_frame(shape, frame: Frame):
    if isinstance(shape, TriMesh):
        return shape.transformed(frame.apply)
    return shape


def evaluate(pred: LdifModel | TriMesh, gt: TriMesh, tau: float = DEFAULT_TAU, n: int = DEFAULT_SAMPLES,
             seed: int = 7, isolevel: float = ISOLEVEL, pred_mesh: TriMesh | None = None) -> MetricsReport:
    """All metrics in the bounding-box normalized frame of ``gt``.

    A mesh ``pred`` is given in gt's coordinates and moved with gt's transform.
    A model ``pred`` is taken to already live in that normalized frame (the frame
    fitting produces); its surface is extracted unless ``pred_mesh`` is supplied.
    IoU is skipped, with a warning, when gt is not watertight.
    """
    gt_n, frame = normalize_frame(gt)
    if isinstance(pred, LdifModel):
        if pred_mesh is None:
            from .mesher import MeshingConfig, extract_mesh
            pred_mesh = extract_mesh(pred, MeshingConfig(isolevel=isolevel))
        else:
            pred_mesh = _to_frame(pred_mesh, frame)
        iou_pred = pred
    else:
        pred_mesh = _to_frame(pred, frame)
        iou_pred = pred_mesh

    iou = None
    try:
        iou = metric_iou(iou_pred, gt_n, n, seed, isolevel)
    except NotWatertightError as exc:
        log.warning("IoU disabled: %s", exc)
    if len(pred_mesh.triangles) == 0:
        log.warning("predicted surface is empty")
        return MetricsReport(iou, float("inf"), 0.0, tau, n)
    chamfer = metric_chamfer(pred_mesh, gt_n, n, seed)
    fscore = metric_fscore(pred_mesh, gt_n, tau, n, seed)
    return MetricsReport(iou, chamfer, fscore, tau, n)
