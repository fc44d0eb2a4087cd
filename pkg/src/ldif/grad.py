"""Reverse-mode gradients of the fitting loss and the Adam update.

All optimization variables live in one flat vector: raw element variables
(N x 10), latent codes (N x M), then decoder weights in file order.
Adjoints are written out per layer; the finite-difference tests are the
contract they are held to.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import decoder as dec
from .decoder import DecoderWeights, param_count
from .geom import LabeledSampleSet, SdfGrid
from .loss import LossConfig, center_loss_terms, sigmoid
from .model import (RAW_WIDTH, LdifModel, activate_backward, activate_rows, euler_rotation,
                    field_terms)


@dataclass(frozen=True)
class Layout:
    n_elements: int
    latent_dim: int
    hidden: int
    sym_count: int = 0
    sym_axis: int = 0

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (self.n_elements * RAW_WIDTH, self.n_elements * self.latent_dim,
                param_count(self.latent_dim, self.hidden))

    @property
    def size(self) -> int:
        return sum(self.sizes)

    def segments(self) -> dict[str, slice]:
        a, b, c = self.sizes
        return {"raw": slice(0, a), "latents": slice(a, a + b), "decoder": slice(a + b, a + b + c)}


@dataclass
class ParameterVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size != self.layout.size:
            raise ValueError(f"vector has {self.values.size} entries, layout needs {self.layout.size}")

    @classmethod
    def pack(cls, raw, latents, decoder: DecoderWeights, layout: Layout) -> "ParameterVector":
        return cls(np.concatenate([np.ravel(raw), np.ravel(latents), decoder.flatten()]), layout)

    def segment(self, name: str) -> np.ndarray:
        return self.values[self.layout.segments()[name]]

    @property
    def raw(self) -> np.ndarray:
        return self.segment("raw").reshape(self.layout.n_elements, RAW_WIDTH)

    @property
    def latents(self) -> np.ndarray:
        return self.segment("latents").reshape(self.layout.n_elements, self.layout.latent_dim)

    @property
    def decoder(self) -> DecoderWeights:
        return DecoderWeights.unflatten(self.segment("decoder"), self.layout.latent_dim, self.layout.hidden)

    def to_model(self, frame=None) -> LdifModel:
        lay = self.layout
        return LdifModel(activate_rows(self.raw), self.latents.copy(), self.decoder,
                         lay.sym_count, lay.sym_axis, frame)


@dataclass(frozen=True)
class LossBreakdown:
    point: float
    center: float
    total: float


def _field_backward(dvalue, cache, theta, latents, w: DecoderWeights):
    """Adjoint of ``field_terms``: returns dL/dtheta (N, 10), dL/dlatents, decoder grads."""
    idx = cache["idx"]
    g, f, local, expq = cache["g"], cache["f"], cache["local"], cache["expq"]
    r = theta[idx, 4:7]

    dg = dvalue[None, :] * (1.0 + f)
    df = dvalue[None, :] * g
    dlocal_f, dz_k, dw = dec.backward(df, cache["dcache"], w)
    dlocal = dlocal_f - (dg * g)[..., None] * local

    dc_k = np.sum(dg * expq, axis=1)
    du = dlocal / r[:, None, :]
    dr_k = -np.sum(dlocal * local, axis=1) / r
    rot = cache["rot"]
    dd = du @ rot.transpose(0, 2, 1)
    drot_k = cache["d"].transpose(0, 2, 1) @ du
    dp_k = -np.sum(dd, axis=1)

    _, drot_de = euler_rotation(theta[:, 7:10], with_derivatives=True)
    de_k = np.sum(drot_k[:, None] * drot_de[idx], axis=(2, 3))

    dtheta = np.zeros_like(theta)
    np.add.at(dtheta[:, 0], idx, dc_k)
    np.add.at(dtheta[:, 1:4], idx, dp_k)
    np.add.at(dtheta[:, 4:7], idx, dr_k)
    np.add.at(dtheta[:, 7:10], idx, de_k)
    dlat = np.zeros_like(latents)
    np.add.at(dlat, idx, dz_k)
    return dtheta, dlat, dw


def _check_finite(name: str, arr) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")


def loss_and_grad(params: ParameterVector, samples: LabeledSampleSet, grid: SdfGrid,
                  cfg: LossConfig = LossConfig()) -> tuple[LossBreakdown, ParameterVector]:
    lay = params.layout
    raw = params.raw
    theta = activate_rows(raw)
    latents = params.latents
    w = params.decoder

    value, cache = field_terms(theta, latents, w, lay.sym_count, lay.sym_axis, samples.points, keep=True)
    _check_finite("field values", value)
    n_samples = len(samples)
    if n_samples == 0:
        raise ValueError("point sample loss needs at least one sample")
    s = sigmoid(cfg.alpha * (value - cfg.isolevel))
    resid = s - samples.labels
    l_p = float(np.sum(samples.weights * resid ** 2) / n_samples)
    dvalue = cfg.w_p * (2.0 / n_samples) * samples.weights * resid * cfg.alpha * s * (1 - s)

    c_loss, c_grad = center_loss_terms(theta[:, 1:4], grid, cfg.beta_for(grid))
    l_c = float(c_loss.sum())

    dtheta, dlat, dw = _field_backward(dvalue, cache, theta, latents, w)
    dtheta[:, 1:4] += cfg.w_c * c_grad
    draw = activate_backward(raw, dtheta)

    grad = ParameterVector.pack(draw, dlat, dw, lay)
    for name, sl in lay.segments().items():
        _check_finite(f"gradient segment '{name}'", grad.values[sl])
    return LossBreakdown(l_p, l_c, cfg.w_p * l_p + cfg.w_c * l_c), grad


def grad_loss(params: ParameterVector, samples: LabeledSampleSet, grid: SdfGrid,
              cfg: LossConfig = LossConfig()) -> ParameterVector:
    return loss_and_grad(params, samples, grid, cfg)[1]


def loss_value(params: ParameterVector, samples: LabeledSampleSet, grid: SdfGrid,
               cfg: LossConfig = LossConfig()) -> float:
    """Total loss through the model-level evaluation path (no adjoints)."""
    from .loss import loss_total
    return loss_total(params.to_model(), samples, grid, cfg)


# -- Adam -------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    lr: float = 1e-3
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, **kw)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray,
              mask: np.ndarray | None = None) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Entries where ``mask`` is False stay fixed."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape or grads.shape != state.first_moment.shape:
        raise ValueError("parameter, gradient and moment layouts differ")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1 - state.beta2) * grads * grads
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    delta = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if mask is not None:
        delta = np.where(mask, delta, 0.0)
    return params - delta, replace(state, first_moment=m, second_moment=v, step_count=t)
