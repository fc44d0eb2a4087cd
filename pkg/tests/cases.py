"""Shared random problem builders for gradient tests."""

import numpy as np

from ldif.decoder import init_decoder
from ldif.geom import LabeledSampleSet, SdfGrid
from ldif.grad import Layout, ParameterVector
from ldif.loss import LossConfig

from . import oracle


def random_problem(seed, n=2, m=4, h=4, points=32, sym_count=1, sym_axis=0):
    """Random raw parameters, labeled samples and SDF grid for one gradient check."""
    rng = np.random.default_rng(seed)
    lay = Layout(n, m, h, sym_count, sym_axis)
    raw = rng.normal(size=(n, 10))
    raw[:, 0] = rng.uniform(0.5, 2, n) * rng.choice([-1, 1], n)
    raw[:, 1:4] = rng.uniform(-0.6, 0.6, (n, 3))
    raw[:, 7:10] = rng.uniform(-0.7, 0.7, (n, 3))
    w = init_decoder(m, h, rng, std=0.5, zero_output=False)
    params = ParameterVector.pack(raw, rng.normal(size=(n, m)), w, lay)
    pts = rng.uniform(-0.4, 0.4, (points, 3))
    samples = LabeledSampleSet(pts, rng.integers(0, 2, points), rng.choice([0.1, 1.0], points))
    grid = SdfGrid(np.full(3, -0.5), np.full(3, 0.5), rng.normal(scale=0.3, size=(32, 32, 32)))
    return params, samples, grid


def oracle_gradient(params, samples, grid, cfg: LossConfig, h=1e-5):
    """Central differences of the direct-formula loss, all coordinates in one batch.

    Returns (loss at params, gradient).
    """
    lay = params.layout
    dims = (lay.n_elements, lay.latent_dim, lay.hidden, lay.sym_count, lay.sym_axis)
    ocfg = dict(alpha=cfg.alpha, isolevel=cfg.isolevel, beta=cfg.beta_for(grid), w_p=cfg.w_p, w_c=cfg.w_c)
    x = params.values
    d = x.size
    step = np.eye(d) * h
    batch = np.vstack([x[None], x + step, x - step])
    vals = oracle.total_loss(batch, dims, samples.points, samples.labels, samples.weights,
                             (grid.values, grid.lo, grid.hi), ocfg)
    return vals[0], (vals[1:d + 1] - vals[d + 1:]) / (2 * h)


def relative_errors(analytic, numeric, floor=1e-6):
    mask = np.abs(analytic) > floor
    return np.abs(analytic - numeric)[mask] / np.abs(analytic)[mask]
