"""Shared residual decoder f(x, z): one conditioned residual block, hidden width H.

Layer stack for local point ``x`` and latent ``z``::

    h0 = W_in x + b_in
    a1 = cbn1(h0);  n1 = W1 relu(a1) + b1
    a2 = cbn2(n1);  n2 = W2 relu(a2) + b2
    h1 = h0 + n2
    a3 = cbn3(h1);  f  = w_out . relu(a3) + b_out

where ``cbn_k(h) = gamma_k(z) * h + beta_k(z)`` and gamma/beta are affine in z.
Normalization inside the conditioned layers is the identity, so f is a pure
function of (x, z, weights).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# serialization order of the ten parameterized layers
LAYER_ORDER = ("input", "cbn1_gamma", "cbn1_beta", "res1", "cbn2_gamma", "cbn2_beta",
               "res2", "cbn3_gamma", "cbn3_beta", "output")


def param_count(latent_dim: int, hidden: int) -> int:
    if latent_dim < 1 or hidden < 1:
        raise ValueError("latent_dim and hidden must be >= 1")
    m, h = latent_dim, hidden
    return (3 * h + h) + 2 * (h * h + h) + 6 * (m * h + h) + (h + 1)


@dataclass(frozen=True)
class DecoderWeights:
    w_in: np.ndarray      # (H, 3)
    b_in: np.ndarray      # (H,)
    gamma_w: np.ndarray   # (3, H, M)
    gamma_b: np.ndarray   # (3, H)
    beta_w: np.ndarray    # (3, H, M)
    beta_b: np.ndarray    # (3, H)
    res_w: np.ndarray     # (2, H, H)
    res_b: np.ndarray     # (2, H)
    w_out: np.ndarray     # (H,)
    b_out: np.ndarray     # (1,)

    @property
    def hidden(self) -> int:
        return self.w_in.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.gamma_w.shape[2]

    def layers(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """(name, weight, bias) in serialization order."""
        return [
            ("input", self.w_in, self.b_in),
            ("cbn1_gamma", self.gamma_w[0], self.gamma_b[0]),
            ("cbn1_beta", self.beta_w[0], self.beta_b[0]),
            ("res1", self.res_w[0], self.res_b[0]),
            ("cbn2_gamma", self.gamma_w[1], self.gamma_b[1]),
            ("cbn2_beta", self.beta_w[1], self.beta_b[1]),
            ("res2", self.res_w[1], self.res_b[1]),
            ("cbn3_gamma", self.gamma_w[2], self.gamma_b[2]),
            ("cbn3_beta", self.beta_w[2], self.beta_b[2]),
            ("output", self.w_out, self.b_out),
        ]

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for _, w, b in self.layers()])

    @classmethod
    def unflatten(cls, flat, latent_dim: int, hidden: int) -> "DecoderWeights":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != param_count(latent_dim, hidden):
            raise ValueError(f"expected {param_count(latent_dim, hidden)} decoder values, got {flat.size}")
        m, h = latent_dim, hidden
        shapes = {"input": (h, 3), "res1": (h, h), "res2": (h, h), "output": (h,)}
        parts = {}
        pos = 0
        for name in LAYER_ORDER:
            wshape = shapes.get(name, (h, m))
            nw = int(np.prod(wshape))
            nb = 1 if name == "output" else h
            parts[name] = (flat[pos:pos + nw].reshape(wshape), flat[pos + nw:pos + nw + nb])
            pos += nw + nb
        return cls(
            w_in=parts["input"][0], b_in=parts["input"][1],
            gamma_w=np.stack([parts[f"cbn{k}_gamma"][0] for k in (1, 2, 3)]),
            gamma_b=np.stack([parts[f"cbn{k}_gamma"][1] for k in (1, 2, 3)]),
            beta_w=np.stack([parts[f"cbn{k}_beta"][0] for k in (1, 2, 3)]),
            beta_b=np.stack([parts[f"cbn{k}_beta"][1] for k in (1, 2, 3)]),
            res_w=np.stack([parts["res1"][0], parts["res2"][0]]),
            res_b=np.stack([parts["res1"][1], parts["res2"][1]]),
            w_out=parts["output"][0], b_out=parts["output"][1],
        )

    def with_zero_output(self) -> "DecoderWeights":
        return DecoderWeights(self.w_in, self.b_in, self.gamma_w, self.gamma_b, self.beta_w,
                              self.beta_b, self.res_w, self.res_b,
                              np.zeros_like(self.w_out), np.zeros_like(self.b_out))


def init_decoder(latent_dim: int, hidden: int, seed=0, std: float = 0.02,
                 zero_output: bool = True) -> DecoderWeights:
    """Small random weights; gamma biases start at one so each conditioned layer begins near identity."""
    rng = np.random.default_rng(seed)
    m, h = latent_dim, hidden
    w = DecoderWeights(
        w_in=rng.normal(scale=std, size=(h, 3)), b_in=np.zeros(h),
        gamma_w=rng.normal(scale=std, size=(3, h, m)), gamma_b=np.ones((3, h)),
        beta_w=rng.normal(scale=std, size=(3, h, m)), beta_b=np.zeros((3, h)),
        res_w=rng.normal(scale=std, size=(2, h, h)), res_b=np.zeros((2, h)),
        w_out=rng.normal(scale=std, size=h), b_out=np.zeros(1),
    )
    return w.with_zero_output() if zero_output else w


def _conditioning(w: DecoderWeights, z: np.ndarray):
    """gamma, beta of shape (3, K, H) for latents z of shape (K, M)."""
    gamma = np.einsum("jhm,km->jkh", w.gamma_w, z) + w.gamma_b[:, None, :]
    beta = np.einsum("jhm,km->jkh", w.beta_w, z) + w.beta_b[:, None, :]
    return gamma, beta


def forward(x: np.ndarray, z: np.ndarray, w: DecoderWeights, keep: bool = False):
    """Batched decoder pass.

    ``x`` has shape (K, P, 3): P local points for each of K (element, latent)
    pairs; ``z`` has shape (K, M). Returns f with shape (K, P), plus the
    intermediate activations when ``keep`` is set.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[-1] != w.latent_dim:
        raise ValueError(f"latent width {z.shape[-1]} does not match decoder width {w.latent_dim}")
    gamma, beta = _conditioning(w, z)
    g = gamma[:, :, None, :]
    b = beta[:, :, None, :]
    h0 = x @ w.w_in.T + w.b_in
    a1 = g[0] * h0 + b[0]
    r1 = np.maximum(a1, 0.0)
    n1 = r1 @ w.res_w[0].T + w.res_b[0]
    a2 = g[1] * n1 + b[1]
    r2 = np.maximum(a2, 0.0)
    n2 = r2 @ w.res_w[1].T + w.res_b[1]
    h1 = h0 + n2
    a3 = g[2] * h1 + b[2]
    r3 = np.maximum(a3, 0.0)
    f = r3 @ w.w_out + w.b_out[0]
    if not keep:
        return f
    cache = dict(x=x, z=z, gamma=gamma, h0=h0, a1=a1, r1=r1, n1=n1, a2=a2, r2=r2, h1=h1, a3=a3, r3=r3)
    return f, cache


def backward(df: np.ndarray, cache: dict, w: DecoderWeights):
    """Adjoint of :func:`forward`.

    Given dL/df of shape (K, P), returns (dL/dx (K, P, 3), dL/dz (K, M),
    DecoderWeights of dL/dweights).
    """
    x, z, gamma = cache["x"], cache["z"], cache["gamma"]
    g = gamma[:, :, None, :]

    k, p, h = cache["h0"].shape

    def outer(a, b):
        # sum over (k, p) of a[k, p, :] b[k, p, :]^T
        return a.reshape(k * p, -1).T @ b.reshape(k * p, -1)

    d_w_out = df.reshape(-1) @ cache["r3"].reshape(k * p, h)
    d_b_out = np.array([df.sum()])
    da3 = df[..., None] * w.w_out * (cache["a3"] > 0)
    d_gamma = np.empty_like(gamma)
    d_beta = np.empty_like(gamma)
    d_gamma[2] = (da3 * cache["h1"]).sum(axis=1)
    d_beta[2] = da3.sum(axis=1)
    dh1 = da3 * g[2]

    dn2 = dh1
    d_res_w = np.empty_like(w.res_w)
    d_res_b = np.empty_like(w.res_b)
    d_res_w[1] = outer(dn2, cache["r2"])
    d_res_b[1] = dn2.sum(axis=(0, 1))
    da2 = (dn2 @ w.res_w[1]) * (cache["a2"] > 0)
    d_gamma[1] = (da2 * cache["n1"]).sum(axis=1)
    d_beta[1] = da2.sum(axis=1)
    dn1 = da2 * g[1]

    d_res_w[0] = outer(dn1, cache["r1"])
    d_res_b[0] = dn1.sum(axis=(0, 1))
    da1 = (dn1 @ w.res_w[0]) * (cache["a1"] > 0)
    d_gamma[0] = (da1 * cache["h0"]).sum(axis=1)
    d_beta[0] = da1.sum(axis=1)
    dh0 = dh1 + da1 * g[0]

    d_w_in = outer(dh0, x)
    d_b_in = dh0.sum(axis=(0, 1))
    dx = dh0 @ w.w_in

    d_gamma_w = np.einsum("jkh,km->jhm", d_gamma, z)
    d_beta_w = np.einsum("jkh,km->jhm", d_beta, z)
    dz = np.einsum("jkh,jhm->km", d_gamma, w.gamma_w) + np.einsum("jkh,jhm->km", d_beta, w.beta_w)
    dw = DecoderWeights(d_w_in, d_b_in, d_gamma_w, d_gamma.sum(axis=1), d_beta_w, d_beta.sum(axis=1),
                        d_res_w, d_res_b, d_w_out, d_b_out)
    return dx, dz, dw


def decoder_forward(x_local, z, w: DecoderWeights) -> float:
    """f for a single local point and latent code."""
    x = np.asarray(x_local, dtype=np.float64).reshape(1, 1, 3)
    return float(forward(x, np.asarray(z, dtype=np.float64).reshape(1, -1), w)[0, 0])
