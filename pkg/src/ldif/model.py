"""The LDIF shape: Gaussian shape elements modulated by a shared residual decoder.

    LDIF(x) = sum_i g(x, theta_i) * (1 + f(T_i x, z_i))

with ``g(x, theta) = c * exp(-|T x|^2 / 2)`` and ``T x = diag(1/r) R^T (x - p)``.
Rotations use ``R = Rz(e3) @ Ry(e2) @ Rx(e1)``. The first ``sym_count``
elements are also evaluated at the reflected query ``S x``, where S negates
coordinate ``sym_axis``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import decoder as dec
from .decoder import DecoderWeights
from .geom import Frame

MAX_RADIUS = 0.15
MAX_ANGLE = np.pi / 4
RAW_WIDTH = 10  # y_c, y_p (3), y_r (3), y_e (3)


@dataclass(frozen=True)
class ElementParams:
    scale_c: float
    center_p: np.ndarray
    radii_r: np.ndarray
    euler_e: np.ndarray

    def __post_init__(self):
        for name in ("center_p", "radii_r", "euler_e"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        object.__setattr__(self, "scale_c", float(self.scale_c))

    def as_row(self) -> np.ndarray:
        return np.concatenate([[self.scale_c], self.center_p, self.radii_r, self.euler_e])


def _sigmoid(y):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(y, dtype=np.float64)))


def activate_rows(raw: np.ndarray) -> np.ndarray:
    """Map raw (N, 10) variables onto analytic parameters (N, 10)."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    out = np.empty_like(raw)
    out[:, 0] = -np.abs(raw[:, 0])
    out[:, 1:4] = raw[:, 1:4] / 2
    out[:, 4:7] = MAX_RADIUS * _sigmoid(raw[:, 4:7])
    out[:, 7:10] = np.clip(raw[:, 7:10], -MAX_ANGLE, MAX_ANGLE)
    return out


def activate(y_c, y_p, y_r, y_e) -> ElementParams:
    row = activate_rows(np.concatenate([[y_c], np.ravel(y_p), np.ravel(y_r), np.ravel(y_e)]))[0]
    return ElementParams(row[0], row[1:4], row[4:7], row[7:10])


def activate_backward(raw: np.ndarray, d_theta: np.ndarray) -> np.ndarray:
    """Chain dL/dtheta back to dL/draw. |y| has subgradient sign(y) with sign(0) = 0;
    the angle clamp passes gradient only where |y_e| <= pi/4."""
    d = np.empty_like(d_theta)
    d[:, 0] = -np.sign(raw[:, 0]) * d_theta[:, 0]
    d[:, 1:4] = d_theta[:, 1:4] / 2
    s = _sigmoid(raw[:, 4:7])
    d[:, 4:7] = d_theta[:, 4:7] * MAX_RADIUS * s * (1 - s)
    d[:, 7:10] = d_theta[:, 7:10] * (np.abs(raw[:, 7:10]) <= MAX_ANGLE)
    return d


def inverse_activate_rows(theta: np.ndarray) -> np.ndarray:
    """A raw preimage of analytic parameters (radii must lie strictly inside (0, 0.15))."""
    theta = np.atleast_2d(theta)
    raw = np.empty_like(theta)
    raw[:, 0] = -theta[:, 0]
    raw[:, 1:4] = 2 * theta[:, 1:4]
    q = theta[:, 4:7] / MAX_RADIUS
    raw[:, 4:7] = np.log(q / (1 - q))
    raw[:, 7:10] = theta[:, 7:10]
    return raw


def euler_rotation(e, with_derivatives: bool = False):
    """R = Rz(e3) Ry(e2) Rx(e1) for angles of shape (..., 3).

    With ``with_derivatives`` also returns dR/de of shape (..., 3, 3, 3), the
    first trailing index selecting the angle.
    """
    e = np.asarray(e, dtype=np.float64)
    c = np.cos(e)
    s = np.sin(e)
    z = np.zeros(e.shape[:-1])
    o = np.ones(e.shape[:-1])

    def mat(rows):
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    rx = mat([[o, z, z], [z, c[..., 0], -s[..., 0]], [z, s[..., 0], c[..., 0]]])
    ry = mat([[c[..., 1], z, s[..., 1]], [z, o, z], [-s[..., 1], z, c[..., 1]]])
    rz = mat([[c[..., 2], -s[..., 2], z], [s[..., 2], c[..., 2], z], [z, z, o]])
    r = rz @ ry @ rx
    if not with_derivatives:
        return r
    drx = mat([[z, z, z], [z, -s[..., 0], -c[..., 0]], [z, c[..., 0], -s[..., 0]]])
    dry = mat([[-s[..., 1], z, c[..., 1]], [z, z, z], [-c[..., 1], z, -s[..., 1]]])
    drz = mat([[-s[..., 2], -c[..., 2], z], [c[..., 2], -s[..., 2], z], [z, z, z]])
    dr = np.stack([rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx], axis=-3)
    return r, dr


@dataclass(frozen=True)
class ElementTransform:
    """World-to-local affine map stored as a 3x4 matrix [A | t]."""

    matrix: np.ndarray

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.matrix[:, :3].T + self.matrix[:, 3]

    def inverse(self, local) -> np.ndarray:
        local = np.asarray(local, dtype=np.float64)
        return np.linalg.solve(self.matrix[:, :3], (local - self.matrix[:, 3]).T).T


def element_transform(params: ElementParams) -> ElementTransform:
    r = params.radii_r
    if np.any(r <= 0):
        raise ValueError(f"element radii must be positive, got {r}")
    lin = (euler_rotation(params.euler_e).T) / r[:, None]
    return ElementTransform(np.concatenate([lin, (-lin @ params.center_p)[:, None]], axis=1))


def eval_gaussian(x, params: ElementParams) -> float | np.ndarray:
    local = element_transform(params).apply(x)
    return params.scale_c * np.exp(-0.5 * np.sum(local ** 2, axis=-1))


def reflection(axis: int) -> np.ndarray:
    s = np.ones(3)
    s[axis] = -1.0
    return s


@dataclass(frozen=True)
class LdifModel:
    theta: np.ndarray          # (N, 10) analytic parameters c, p, r, e
    latents: np.ndarray        # (N, M)
    decoder: DecoderWeights
    sym_count: int = 0
    sym_axis: int = 0
    frame: Frame | None = field(default=None, compare=False)  # normalized -> source mesh coordinates

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=np.float64))
        lat = np.asarray(self.latents, dtype=np.float64).reshape(len(theta), -1)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "latents", lat)
        if theta.shape[1] != RAW_WIDTH:
            raise ValueError("theta must have 10 columns")
        if not 0 <= self.sym_count <= len(theta):
            raise ValueError("sym_count must lie in [0, N]")
        if self.sym_axis not in (0, 1, 2):
            raise ValueError("sym_axis must be 0, 1 or 2")
        if lat.shape[1] != self.decoder.latent_dim:
            raise ValueError(f"latent width {lat.shape[1]} != decoder latent width {self.decoder.latent_dim}")

    @property
    def n_elements(self) -> int:
        return len(self.theta)

    @property
    def latent_dim(self) -> int:
        return self.latents.shape[1]

    @property
    def elements(self) -> list[ElementParams]:
        return [ElementParams(t[0], t[1:4], t[4:7], t[7:10]) for t in self.theta]

    def instances(self) -> tuple[np.ndarray, np.ndarray]:
        """Element index and mirror flag of every evaluated term (N + sym_count)."""
        n = self.n_elements
        idx = np.concatenate([np.arange(n), np.arange(self.sym_count)])
        mirrored = np.concatenate([np.zeros(n, bool), np.ones(self.sym_count, bool)])
        return idx, mirrored


def field_terms(theta, latents, decoder: DecoderWeights, sym_count: int, sym_axis: int,
                x: np.ndarray, keep: bool = False):
    """Evaluate the field at points x (P, 3).

    Returns LDIF values (P,). With ``keep`` also returns a cache of every
    per-term intermediate needed for the adjoint pass.
    """
    n = len(theta)
    idx = np.concatenate([np.arange(n), np.arange(sym_count)])
    mirrored = np.concatenate([np.zeros(n, bool), np.ones(sym_count, bool)])
    c = theta[idx, 0]
    p = theta[idx, 1:4]
    r = theta[idx, 4:7]
    rot = euler_rotation(theta[:, 7:10])[idx]

    xk = np.broadcast_to(x, (len(idx),) + x.shape).copy()
    xk[mirrored] *= reflection(sym_axis)
    d = xk - p[:, None, :]
    u = d @ rot  # R^T d for each row
    local = u / r[:, None, :]
    q = np.sum(local ** 2, axis=-1)
    expq = np.exp(-0.5 * q)
    g = c[:, None] * expq
    z = latents[idx]
    if keep:
        f, dcache = dec.forward(local, z, decoder, keep=True)
    else:
        f = dec.forward(local, z, decoder)
    value = np.sum(g * (1.0 + f), axis=0)
    if not keep:
        return value
    cache = dict(idx=idx, xk=xk, d=d, local=local, expq=expq, g=g, f=f, dcache=dcache, rot=rot)
    return value, cache


def eval_ldif_batch(points, model: LdifModel, chunk: int = 4096) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        out[s:s + chunk] = field_terms(model.theta, model.latents, model.decoder,
                                       model.sym_count, model.sym_axis, points[s:s + chunk])
    return out


def eval_ldif(x, model: LdifModel) -> float:
    return float(eval_ldif_batch(np.reshape(x, (1, 3)), model)[0])


def default_sym_count(n_elements: int) -> int:
    return (n_elements + 1) // 2
