"""Training objective: weighted point-sample classification plus the center term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import LabeledSampleSet, SdfGrid
from .model import LdifModel, eval_ldif_batch

ISOLEVEL = -0.07


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 100.0
    w_s: float = 0.1
    w_u: float = 1.0
    w_p: float = 1.0
    w_c: float = 10.0
    isolevel: float = ISOLEVEL
    beta: float | None = None  # None: half the grid's cell width

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if min(self.w_s, self.w_u, self.w_p, self.w_c) < 0:
            raise ValueError("loss weights must be non-negative")

    def beta_for(self, grid: SdfGrid) -> float:
        return grid.half_cell if self.beta is None else self.beta


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def point_sample_loss_from_values(values, samples: LabeledSampleSet, cfg: LossConfig) -> float:
    if len(samples) == 0:
        raise ValueError("point sample loss needs at least one sample")
    s = sigmoid(cfg.alpha * (values - cfg.isolevel))
    return float(np.sum(samples.weights * (s - samples.labels) ** 2) / len(samples))


def loss_point_sample(model: LdifModel, samples: LabeledSampleSet, cfg: LossConfig = LossConfig()) -> float:
    """Mean over samples of w * (sig(alpha * (LDIF - isolevel)) - I)^2 with I = 0 inside, 1 outside."""
    return point_sample_loss_from_values(eval_ldif_batch(samples.points, model), samples, cfg)


def center_loss_terms(centers: np.ndarray, grid: SdfGrid, beta: float):
    """Per-center loss and its gradient with respect to the center.

    Inside the grid box: G(p)^2 when G(p) > beta, else 0. Outside the box the
    squared distance to the box replaces it, so escaped centers are pulled back.
    """
    centers = np.atleast_2d(centers)
    inside = grid.contains(centers)
    clamped = np.clip(centers, grid.lo, grid.hi)
    gap = centers - clamped
    loss = np.sum(gap ** 2, axis=1)
    grad = 2 * gap
    if np.any(inside):
        val, dval = grid.sample(centers[inside], with_grad=True)
        active = val > beta
        loss[inside] = np.where(active, val ** 2, 0.0)
        grad[inside] = np.where(active[:, None], 2 * val[:, None] * dval, 0.0)
    return loss, grad


def loss_center(model: LdifModel, grid: SdfGrid, cfg: LossConfig = LossConfig()) -> float:
    loss, _ = center_loss_terms(model.theta[:, 1:4], grid, cfg.beta_for(grid))
    return float(loss.sum())


def loss_total(model: LdifModel, samples: LabeledSampleSet, grid: SdfGrid, cfg: LossConfig = LossConfig()) -> float:
    return cfg.w_p * loss_point_sample(model, samples, cfg) + cfg.w_c * loss_center(model, grid, cfg)
