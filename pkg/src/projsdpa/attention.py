"""Standard and projection scaled dot-product attention.

Standard SDPA weights the value rows by ``softmax(scale * q kᵀ)``. Projection
SDPA weights the *key* rows by a row-normalized Gaussian of the squared
distance between query and key rows::

    z_ij = exp(-‖q_i − k_j‖² / 2σ²) / C_i,        y_i = Σ_j z_ij k_j

When the rows of q and k have unit norm, ‖q_i − k_j‖² = 2 − 2 q_i·k_j, the
constant factor cancels in the row normalizer, and the two forms coincide for
σ² = 1 / scale. :func:`equivalence_residual` measures how far apart they are.

Every kernel accepts arbitrary leading batch axes (batch, heads, ...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .numerics import (
    DegenerateRowError,
    Parameter,
    RngState,
    ShapeError,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    linear,
    matmul,
    matmul_backward,
    rng_uniform,
    softmax_rows,
    softmax_rows_backward,
)


class Variant(str, Enum):
    STANDARD = "standard"
    PROJECTION = "projection"


class MaskShapeError(ShapeError):
    """Causal masking requested for a non-square score matrix."""


@dataclass(frozen=True)
class AttentionConfig:
    variant: Variant = Variant.STANDARD
    num_heads: int = 1
    head_dim: int = 8
    sigma2: float = 1.0
    causal: bool = False
    normalize_rows: bool = False
    # Standard variant only; None means 1/sqrt(head_dim).
    scale: float | None = None
    learn_sigma2: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.num_heads < 1 or self.head_dim < 1:
            raise ValueError("num_heads and head_dim must be positive")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if self.scale is not None and not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def d_model(self) -> int:
        return self.num_heads * self.head_dim

    @property
    def effective_scale(self) -> float:
        return self.scale if self.scale is not None else 1.0 / math.sqrt(self.head_dim)


@dataclass
class AttentionTrace:
    """Distances ``d_ij`` (squared, may be None) and row-stochastic weights ``z_ij``."""

    distances: np.ndarray | None
    weights: np.ndarray

    def head(self, h: int) -> "AttentionTrace":
        """View of one head when the arrays carry a head axis at position -3."""
        d = None if self.distances is None else self.distances[..., h, :, :]
        return AttentionTrace(d, self.weights[..., h, :, :])


def causal_mask(t_q: int, t_k: int) -> np.ndarray:
    """Boolean keep-mask, True on and below the diagonal."""
    if t_q != t_k:
        raise MaskShapeError(f"causal mask needs a square score matrix, got {t_q}x{t_k}")
    return np.tril(np.ones((t_q, t_k), dtype=bool))


def _check_qk(q: np.ndarray, k: np.ndarray) -> None:
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key feature dims differ: {q.shape} vs {k.shape}")


# ---------------------------------------------------------------------------
# distances and Gaussian weights
# ---------------------------------------------------------------------------


def pairwise_sq_distance(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """``D[i, j] = ‖q_i − k_j‖²`` via ``‖q‖² + ‖k‖² − 2 q kᵀ``, clamped at 0."""
    _check_qk(q, k)
    qq = (q * q).sum(axis=-1)[..., :, None]
    kk = (k * k).sum(axis=-1)[..., None, :]
    # T×T temporaries are reused in place; large fresh buffers dominate the cost
    d = matmul(q, np.swapaxes(k, -1, -2))
    d *= -2.0
    d += qq
    d += kk
    return np.maximum(d, 0.0, out=d)


def pairwise_sq_distance_backward(
    grad: np.ndarray, q: np.ndarray, k: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the exact squared distance (the clamp only hides round-off)."""
    if grad.shape[-2:] != (q.shape[-2], k.shape[-2]):
        raise ShapeError(f"distance upstream {grad.shape} does not match {q.shape}, {k.shape}")
    dq = 2.0 * (grad.sum(axis=-1)[..., None] * q - matmul(grad, k))
    dk = 2.0 * (grad.sum(axis=-2)[..., None] * k - matmul(np.swapaxes(grad, -1, -2), q))
    return dq, dk


def gaussian_weights(D: np.ndarray, sigma2: float, causal: bool = False) -> np.ndarray:
    """Row-normalized ``exp(−D / 2σ²)`` with masked entries excluded and set to 0.

    Each row is shifted by its smallest unmasked distance before
    exponentiation, so the largest exponent is exactly 0 and tiny σ² cannot
    underflow a whole row.
    """
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    if causal:
        keep = causal_mask(D.shape[-2], D.shape[-1])
        masked = np.where(keep, D, np.inf)
    else:
        keep = None
        masked = D
    dmin = masked.min(axis=-1, keepdims=True)
    if not np.all(np.isfinite(dmin)):
        raise DegenerateRowError("gaussian_weights: a row has every entry masked")
    e = np.subtract(masked, dmin)
    e /= -2.0 * sigma2
    np.exp(e, out=e)  # masked entries are exp(−inf) = 0 already
    e /= e.sum(axis=-1, keepdims=True)
    return e


def gaussian_weights_backward(
    grad: np.ndarray, z: np.ndarray, D: np.ndarray, sigma2: float, out: np.ndarray | None = None
) -> tuple[np.ndarray, float]:
    """Returns ``(dD, dsigma2)``; ``out`` may be ``grad`` to reuse its buffer."""
    if grad.shape != z.shape:
        raise ShapeError(f"gaussian_weights_backward: upstream {grad.shape} != {z.shape}")
    ds = softmax_rows_backward(grad, z, out=out)  # gradient wrt logits −D/2σ²
    # ds carries a factor z, so masked entries (z = 0 exactly) drop out
    dsigma2 = float(np.vdot(ds, D) / (2.0 * sigma2 * sigma2))
    ds /= -2.0 * sigma2
    return ds, dsigma2


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def standard_sdpa(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    scale: float | None = None,
    causal: bool = False,
    normalize: bool = False,
) -> tuple[np.ndarray, AttentionTrace]:
    """``y = softmax(scale · q kᵀ) v``, optionally causal.

    With ``normalize`` the rows of q and k are L2-normalized first and the
    trace also records their squared distances; otherwise ``distances`` is None.
    """
    _check_qk(q, k)
    if v.shape[-2] != k.shape[-2]:
        raise ShapeError(f"keys and values differ in length: {k.shape} vs {v.shape}")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    mask = causal_mask(q.shape[-2], k.shape[-2]) if causal else None
    if normalize:
        q, k = l2_normalize_rows(q), l2_normalize_rows(k)
    scores = matmul(q, np.swapaxes(k, -1, -2))
    scores *= scale
    z = softmax_rows(scores, mask, out=scores)
    dist = pairwise_sq_distance(q, k) if normalize else None
    return matmul(z, v), AttentionTrace(dist, z)


def standard_sdpa_backward(
    grad: np.ndarray,
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    trace: AttentionTrace,
    scale: float | None = None,
    normalize: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(dq, dk, dv)`` for the raw (pre-normalization) inputs."""
    if trace is None or trace.weights is None:
        raise ValueError("standard_sdpa_backward: forward trace is required")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    z = trace.weights
    qn, kn = (l2_normalize_rows(q), l2_normalize_rows(k)) if normalize else (q, k)
    dz, dv = matmul_backward(grad, z, v)
    ds = softmax_rows_backward(dz, z, out=dz)
    ds *= scale
    dqn = matmul(ds, kn)
    dkn = matmul(np.swapaxes(ds, -1, -2), qn)
    if normalize:
        return l2_normalize_rows_backward(dqn, q), l2_normalize_rows_backward(dkn, k), dv
    return dqn, dkn, dv


def projection_sdpa(
    q: np.ndarray,
    k: np.ndarray,
    sigma2: float = 1.0,
    causal: bool = False,
    normalize: bool = False,
) -> tuple[np.ndarray, AttentionTrace]:
    """``y_i = Σ_j z_ij k_j`` with Gaussian distance weights ``z``.

    The key rows double as the value rows. With ``normalize`` both q and k are
    L2-normalized first, and the output is a combination of the normalized keys.
    """
    _check_qk(q, k)
    if normalize:
        q, k = l2_normalize_rows(q), l2_normalize_rows(k)
    D = pairwise_sq_distance(q, k)
    z = gaussian_weights(D, sigma2, causal)
    return matmul(z, k), AttentionTrace(D, z)


def projection_sdpa_backward(
    grad: np.ndarray,
    q: np.ndarray,
    k: np.ndarray,
    trace: AttentionTrace,
    sigma2: float = 1.0,
    normalize: bool = False,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Returns ``(dq, dk, dsigma2)`` for the raw (pre-normalization) inputs."""
    if trace is None or trace.distances is None:
        raise ValueError("projection_sdpa_backward: forward trace is required")
    qn, kn = (l2_normalize_rows(q), l2_normalize_rows(k)) if normalize else (q, k)
    z, D = trace.weights, trace.distances
    dz, dkn = matmul_backward(grad, z, kn)
    dD, dsigma2 = gaussian_weights_backward(dz, z, D, sigma2, out=dz)
    dqn, dkn_dist = pairwise_sq_distance_backward(dD, qn, kn)
    dkn = dkn + dkn_dist
    if normalize:
        return l2_normalize_rows_backward(dqn, q), l2_normalize_rows_backward(dkn, k), dsigma2
    return dqn, dkn, dsigma2


def equivalence_residual(
    q: np.ndarray, k: np.ndarray, sigma2: float = 1.0, scale: float = 1.0
) -> float:
    """Max-abs gap between standard SDPA on normalized rows (v = k) and projection SDPA."""
    qn, kn = l2_normalize_rows(q), l2_normalize_rows(k)
    y_std, _ = standard_sdpa(qn, kn, kn, scale=scale)
    y_proj, _ = projection_sdpa(q, k, sigma2=sigma2, normalize=True)
    return float(np.max(np.abs(y_std - y_proj)))


# ---------------------------------------------------------------------------
# multi-head wrapper
# ---------------------------------------------------------------------------


def xavier_uniform(rng: RngState, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng_uniform(rng, (fan_in, fan_out), -bound, bound)


@dataclass
class AttentionParams:
    W_q: Parameter
    W_k: Parameter
    W_v: Parameter | None  # absent for the projection variant (keys are values)
    W_out: Parameter
    sigma2: Parameter | None = None  # only when sigma2 is learned

    @classmethod
    def init(cls, config: AttentionConfig, d_model: int, rng: RngState) -> "AttentionParams":
        d = config.d_model
        w_q = Parameter(xavier_uniform(rng, d_model, d))
        w_k = Parameter(xavier_uniform(rng, d_model, d))
        w_v = Parameter(xavier_uniform(rng, d_model, d)) if config.variant is Variant.STANDARD else None
        w_out = Parameter(xavier_uniform(rng, d, d_model))
        s2 = Parameter(np.array([config.sigma2])) if config.learn_sigma2 else None
        return cls(w_q, w_k, w_v, w_out, s2)

    def named_parameters(self):
        yield "W_q", self.W_q
        yield "W_k", self.W_k
        if self.W_v is not None:
            yield "W_v", self.W_v
        yield "W_out", self.W_out
        if self.sigma2 is not None:
            yield "sigma2", self.sigma2


def split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    """[..., T, H*hd] -> [..., H, T, hd] (head h owns columns h*hd:(h+1)*hd)."""
    *lead, t, d = x.shape
    if d % num_heads:
        raise ShapeError(f"feature dim {d} not divisible by {num_heads} heads")
    return np.swapaxes(x.reshape(*lead, t, num_heads, d // num_heads), -2, -3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`split_heads`."""
    *lead, h, t, hd = x.shape
    return np.swapaxes(x, -2, -3).reshape(*lead, t, h * hd)


@dataclass
class MHACache:
    x_q: np.ndarray
    x_kv: np.ndarray
    q: np.ndarray  # split heads
    k: np.ndarray
    v: np.ndarray | None
    trace: AttentionTrace  # arrays with a head axis
    concat: np.ndarray
    sigma2: float = field(default=1.0)


def _sigma2_of(params: AttentionParams, config: AttentionConfig) -> float:
    if params.sigma2 is not None:
        s2 = float(params.sigma2.value[0])
        if not s2 > 0:
            raise FloatingPointError(f"learned sigma2 left the positive range: {s2}")
        return s2
    return config.sigma2


def mha_forward(
    x_q: np.ndarray, x_kv: np.ndarray, params: AttentionParams, config: AttentionConfig
) -> tuple[np.ndarray, MHACache]:
    d_model = x_q.shape[-1]
    if params.W_q.shape != (d_model, config.d_model):
        raise ShapeError(
            f"W_q shape {params.W_q.shape} inconsistent with d_model={d_model}, "
            f"{config.num_heads} heads x {config.head_dim}"
        )
    if x_kv.shape[-1] != d_model:
        raise ShapeError(f"query/context widths differ: {x_q.shape} vs {x_kv.shape}")
    h = config.num_heads
    q = split_heads(linear(x_q, params.W_q.value), h)
    k = split_heads(linear(x_kv, params.W_k.value), h)
    sigma2 = _sigma2_of(params, config)
    if config.variant is Variant.STANDARD:
        if params.W_v is None:
            raise ShapeError("standard variant needs W_v")
        v = split_heads(linear(x_kv, params.W_v.value), h)
        y, trace = standard_sdpa(
            q, k, v, config.effective_scale, config.causal, config.normalize_rows
        )
    else:
        v = None
        y, trace = projection_sdpa(q, k, sigma2, config.causal, config.normalize_rows)
    concat = merge_heads(y)
    out = linear(concat, params.W_out.value)
    return out, MHACache(x_q, x_kv, q, k, v, trace, concat, sigma2)


def multi_head_attention(
    x_q: np.ndarray, x_kv: np.ndarray, params: AttentionParams, config: AttentionConfig
) -> tuple[np.ndarray, list[AttentionTrace]]:
    """Project, slice into heads, attend per head, concatenate, recombine with ``W_out``."""
    out, cache = mha_forward(x_q, x_kv, params, config)
    return out, [cache.trace.head(i) for i in range(config.num_heads)]


def mha_backward(
    grad: np.ndarray, cache: MHACache, params: AttentionParams, config: AttentionConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Accumulates parameter gradients; returns ``(dx_q, dx_kv)``."""
    d_concat, dw_out = matmul_backward(grad, cache.concat, params.W_out.value)
    params.W_out.accumulate(dw_out)
    dy = split_heads(d_concat, config.num_heads)
    if config.variant is Variant.STANDARD:
        dq, dk, dv = standard_sdpa_backward(
            dy, cache.q, cache.k, cache.v, cache.trace,
            config.effective_scale, config.normalize_rows,
        )
    else:
        dq, dk, ds2 = projection_sdpa_backward(
            dy, cache.q, cache.k, cache.trace, cache.sigma2, config.normalize_rows
        )
        if params.sigma2 is not None:
            params.sigma2.accumulate(np.array([ds2]))
    dx_q, dw_q = matmul_backward(merge_heads(dq), cache.x_q, params.W_q.value)
    dx_kv, dw_k = matmul_backward(merge_heads(dk), cache.x_kv, params.W_k.value)
    params.W_q.accumulate(dw_q)
    params.W_k.accumulate(dw_k)
    if config.variant is Variant.STANDARD:
        dx_v, dw_v = matmul_backward(merge_heads(dv), cache.x_kv, params.W_v.value)
        params.W_v.accumulate(dw_v)
        dx_kv = dx_kv + dx_v
    return dx_q, dx_kv


__all__ = [
    "AttentionConfig",
    "AttentionParams",
    "AttentionTrace",
    "MHACache",
    "MaskShapeError",
    "Variant",
    "causal_mask",
    "equivalence_residual",
    "gaussian_weights",
    "gaussian_weights_backward",
    "merge_heads",
    "mha_backward",
    "mha_forward",
    "multi_head_attention",
    "pairwise_sq_distance",
    "pairwise_sq_distance_backward",
    "projection_sdpa",
    "projection_sdpa_backward",
    "split_heads",
    "standard_sdpa",
    "standard_sdpa_backward",
    "xavier_uniform",
]
