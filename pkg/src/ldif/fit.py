"""Per-shape auto-decoder fitting: Adam on raw element variables, latents and decoder."""

from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from .decoder import init_decoder
from .geom import (NEAR_SURFACE_SIGMA, Frame, InsideTester, LabeledSampleSet, SdfGrid, TriMesh,
                   build_sdf_grid, normalize_frame, sample_near_surface, sample_surface,
                   sample_uniform)
from .grad import AdamState, Layout, ParameterVector, adam_step, loss_and_grad
from .loss import LossConfig
from .model import LdifModel, MAX_RADIUS, default_sym_count

log = logging.getLogger(__name__)

INIT_SCALE = 1.0
INIT_RADIUS = 0.05
INIT_SAMPLES = 10_000


class FitError(RuntimeError):
    """Raised when the loss becomes non-finite; carries the failing step."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent named random stream derived from one user seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass(frozen=True)
class FitConfig:
    n_elements: int = 32
    latent_dim: int = 32
    hidden: int = 32
    steps: int = 5000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 7
    n_near: int = 1024
    n_uniform: int = 1024
    near_sigma: float = NEAR_SURFACE_SIGMA
    freeze_decoder: bool = False
    sym_count: int | None = None  # None: first ceil(N/2) elements
    sym_axis: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if min(self.n_elements, self.latent_dim, self.hidden) < 1:
            raise ValueError("n_elements, latent_dim and hidden must be positive")
        if self.steps < 0 or min(self.n_near, self.n_uniform) < 0 or self.n_near + self.n_uniform == 0:
            raise ValueError("steps and sample counts must be non-negative, with at least one sample")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ValueError("lr must be a positive finite number")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")

    def layout(self) -> Layout:
        sym = default_sym_count(self.n_elements) if self.sym_count is None else self.sym_count
        return Layout(self.n_elements, self.latent_dim, self.hidden, sym, self.sym_axis)


@dataclass
class FitResult:
    model: LdifModel
    params: ParameterVector
    trace: list[tuple[int, float, float, float]]
    frame: Frame
    mesh: TriMesh  # normalized copy of the input
    grid: SdfGrid


def initialize(mesh: TriMesh, cfg: FitConfig, seed: int | None = None) -> tuple[ParameterVector, AdamState]:
    """Starting point: k-means centers on the surface, c = -1, r = 0.05, zero latents, and a
    decoder whose output layer is zero so the model starts as a pure Gaussian mixture.

    ``mesh`` is expected in the normalized frame.
    """
    seed = cfg.seed if seed is None else seed
    if mesh.face_areas().sum() <= 0:
        raise ValueError("cannot initialize from a mesh with zero surface area")
    lay = cfg.layout()
    n = cfg.n_elements
    pts, _ = sample_surface(mesh, INIT_SAMPLES, substream(seed, "init-surface"))
    centers, _ = kmeans2(pts, n, minit="++", seed=substream(seed, "init-kmeans"))
    raw = np.zeros((n, 10))
    raw[:, 0] = INIT_SCALE
    raw[:, 1:4] = 2 * centers
    q = INIT_RADIUS / MAX_RADIUS
    raw[:, 4:7] = np.log(q / (1 - q))
    latents = np.zeros((n, cfg.latent_dim))
    decoder = init_decoder(cfg.latent_dim, cfg.hidden, substream(seed, "init-decoder"))
    params = ParameterVector.pack(raw, latents, decoder, lay)
    state = AdamState.zeros(lay.size, beta1=cfg.beta1, beta2=cfg.beta2, lr=cfg.lr)
    return params, state


def fit(mesh: TriMesh, cfg: FitConfig = FitConfig(), progress=None) -> FitResult:
    """Fit an LDIF to a watertight mesh.

    The mesh is first moved to its bounding-box normalized frame; the returned
    model lives in that frame and carries the frame so extracted surfaces can be
    mapped back.
    """
    return fit_corpus([mesh], cfg, progress)[0]


def fit_corpus(meshes, cfg: FitConfig = FitConfig(), progress=None) -> list[FitResult]:
    """Fit several meshes at once with one shared decoder.

    Each shape keeps its own elements and latents and its own sample stream;
    the summed loss is minimized. With a single mesh this is exactly ``fit``.
    """
    if len(meshes) == 0:
        raise ValueError("no meshes to fit")
    shapes = []
    for mesh in meshes:
        norm_mesh, frame = normalize_frame(mesh)
        tester = InsideTester(norm_mesh)
        shapes.append((norm_mesh, frame, tester, build_sdf_grid(norm_mesh, tester=tester)))
    inits = [initialize(norm_mesh, cfg)[0] for norm_mesh, *_ in shapes]
    lay = inits[0].layout
    seg = lay.segments()
    own = seg["decoder"].start  # raw + latent entries per shape
    # optimizer vector: each shape's private block in turn, then the shared decoder
    values = np.concatenate([p.values[:own] for p in inits] + [inits[0].values[seg["decoder"]]])
    state = AdamState.zeros(values.size, beta1=cfg.beta1, beta2=cfg.beta2, lr=cfg.lr)
    mask = None
    if cfg.freeze_decoder:
        mask = np.ones(values.size, dtype=bool)
        mask[len(shapes) * own:] = False

    def shape_params(k):
        return ParameterVector(np.concatenate([values[k * own:(k + 1) * own], values[len(shapes) * own:]]), lay)

    rngs = [substream(cfg.seed, "sampling" if k == 0 else f"sampling-{k}") for k in range(len(shapes))]
    traces = [[] for _ in shapes]
    for step in range(cfg.steps):
        grad = np.zeros_like(values)
        for k, (norm_mesh, _, tester, grid) in enumerate(shapes):
            rng = rngs[k]
            samples = LabeledSampleSet.concat(
                sample_near_surface(norm_mesh, cfg.n_near, cfg.near_sigma, rng, cfg.loss.w_s, tester),
                sample_uniform((grid.lo, grid.hi), cfg.n_uniform, norm_mesh, rng, cfg.loss.w_u, tester),
            )
            try:
                losses, g = loss_and_grad(shape_params(k), samples, grid, cfg.loss)
            except FloatingPointError as exc:
                raise FitError(step, str(exc)) from exc
            if not np.isfinite(losses.total):
                raise FitError(step, "non-finite loss")
            traces[k].append((step, losses.point, losses.center, losses.total))
            grad[k * own:(k + 1) * own] = g.values[:own]
            grad[len(shapes) * own:] += g.values[own:]
            if progress is not None:
                progress(step, losses)
            elif k == 0 and step % 500 == 0:
                log.info("step %d  L_P %.5f  L_C %.5f", step, losses.point, losses.center)
        values, state = adam_step(state, values, grad, mask)
    results = []
    for k, (norm_mesh, frame, _, grid) in enumerate(shapes):
        params = shape_params(k)
        results.append(FitResult(params.to_model(frame), params, traces[k], frame, norm_mesh, grid))
    return results


def loss_trace(result: FitResult) -> list[tuple[int, float, float, float]]:
    """(step, L_P, L_C, total) per optimization step."""
    return list(result.trace)


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["step", "l_p", "l_c", "total"])
        for step, lp, lc, total in trace:
            out.writerow([step, repr(float(lp)), repr(float(lc)), repr(float(total))])
