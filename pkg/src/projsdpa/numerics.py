"""Dense float64 array arithmetic with paired forward/backward functions.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every
differentiable operation ``op`` has a matching ``op_backward`` that takes the
upstream gradient plus whatever the forward pass saved, and returns the
vector-Jacobian products for each differentiable input. Callers compose these
by hand; there is no graph engine.

All row-wise operations act on the last axis and accept any number of leading
batch axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(ValueError):
    """A row cannot be normalized (zero norm, or fully masked)."""


def as_tensor(x) -> np.ndarray:
    """Coerce ``x`` to a float64 array (no copy when already float64)."""
    return np.asarray(x, dtype=DTYPE)


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: expected shape {b.shape}, got {a.shape}")


def sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape`` by summing leading axes."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over the last two axes; leading axes are batch axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def matmul_backward(
    grad: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """For ``C = A @ B``: ``dA = G Bᵀ`` and ``dB = Aᵀ G``, summed over broadcast axes."""
    expected = np.broadcast_shapes(a.shape[:-2], b.shape[:-2]) + (a.shape[-2], b.shape[-1])
    if grad.shape != expected:
        raise ShapeError(f"matmul_backward: upstream {grad.shape} != output {expected}")
    da = np.matmul(grad, np.swapaxes(b, -1, -2))
    db = np.matmul(np.swapaxes(a, -1, -2), grad)
    return sum_to_shape(da, a.shape), sum_to_shape(db, b.shape)


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------


def softmax_rows(x: np.ndarray, mask: np.ndarray | None = None, out: np.ndarray | None = None) -> np.ndarray:
    """Row softmax with max subtraction.

    ``mask`` (broadcastable boolean, True = keep) excludes entries from both
    the max and the normalizer; excluded entries come out as exact zeros.
    ``out`` may be ``x`` itself to reuse its buffer.
    """
    if mask is None:
        e = np.subtract(x, x.max(axis=-1, keepdims=True), out=out)
    else:
        e = np.where(mask, x, -np.inf)
        m = e.max(axis=-1, keepdims=True)
        if not np.all(np.isfinite(m)):
            raise DegenerateRowError("softmax_rows: a row has every entry masked")
        e -= m
        if out is not None:
            out[...] = e
            e = out
    np.exp(e, out=e)  # exp(−inf) = 0 on masked entries
    e /= e.sum(axis=-1, keepdims=True)
    return e


def softmax_rows_backward(grad: np.ndarray, y: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """VJP of the row softmax given its output ``y``; ``out`` may be ``grad``."""
    _check_same_shape(grad, y, "softmax_rows_backward")
    out = np.subtract(grad, np.einsum("...j,...j->...", grad, y)[..., None], out=out)
    out *= y
    return out


# ---------------------------------------------------------------------------
# row normalizations
# ---------------------------------------------------------------------------

_MIN_ROW_NORM = 1e-12


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """Scale every row to unit Euclidean norm."""
    norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    if np.any(norms < _MIN_ROW_NORM):
        raise DegenerateRowError("l2_normalize_rows: row with norm < 1e-12")
    return x / norms


def l2_normalize_rows_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    _check_same_shape(grad, x, "l2_normalize_rows_backward")
    norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    y = x / norms
    return (grad - y * (grad * y).sum(axis=-1, keepdims=True)) / norms


@dataclass
class LayerNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gain: np.ndarray


def layer_norm_rows(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5
) -> tuple[np.ndarray, LayerNormCache]:
    """Per-row standardization followed by an affine ``gain``/``bias``.

    Uses the biased (population) variance. Returns the output and the cache
    needed by :func:`layer_norm_rows_backward`.
    """
    n = x.shape[-1]
    if n < 2:
        raise ShapeError(f"layer_norm_rows needs at least 2 columns, got {n}")
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm_rows: gain/bias must have shape ({n},)")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gain + bias, LayerNormCache(xhat, inv_std, gain)


def layer_norm_rows_backward(
    grad: np.ndarray, cache: LayerNormCache
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(dx, dgain, dbias)``."""
    _check_same_shape(grad, cache.xhat, "layer_norm_rows_backward")
    n = grad.shape[-1]
    flat_g = grad.reshape(-1, n)
    flat_xhat = cache.xhat.reshape(-1, n)
    dgain = (flat_g * flat_xhat).sum(axis=0)
    dbias = flat_g.sum(axis=0)
    gx = grad * cache.gain
    dx = cache.inv_std * (
        gx
        - gx.mean(axis=-1, keepdims=True)
        - cache.xhat * (gx * cache.xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# elementwise / lookup
# ---------------------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    _check_same_shape(grad, x, "relu_backward")
    return grad * (x > 0)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """``x @ w + b`` with ``w`` of shape (in, out)."""
    y = matmul(x, w)
    return y if b is None else y + b


def linear_backward(
    grad: np.ndarray, x: np.ndarray, w: np.ndarray, has_bias: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Returns ``(dx, dw, db)``; ``db`` is None when ``has_bias`` is False."""
    dx, dw = matmul_backward(grad, x, w)
    db = grad.reshape(-1, grad.shape[-1]).sum(axis=0) if has_bias else None
    return dx, dw, db


def embedding_lookup(table: np.ndarray, ids: np.ndarray) -> np.ndarray:
    return table[ids]


def embedding_backward(grad: np.ndarray, ids: np.ndarray, vocab_size: int) -> np.ndarray:
    """Scatter-add rows of ``grad`` into a (vocab_size, d) table gradient."""
    d = grad.shape[-1]
    out = np.zeros((vocab_size, d), dtype=DTYPE)
    np.add.at(out, ids.reshape(-1), grad.reshape(-1, d))
    return out


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class Parameter:
    """A learnable tensor and its accumulated gradient."""

    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.value = as_tensor(self.value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {self.value.shape}")
        self.grad += g


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def finite_difference_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``x`` is perturbed in place and restored after each coordinate, so ``f``
    may close over the same buffer.
    """
    if h <= 0:
        raise ValueError("finite_difference_grad: h must be positive")
    grad = np.zeros_like(x, dtype=DTYPE)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"finite_difference_grad: non-finite f near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """``‖a − n‖ / max(‖a‖, ‖n‖, floor)``.

    The floor keeps gradients that are zero up to finite-difference round-off
    from producing huge ratios out of noise.
    """
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), floor)
    return diff / scale


# ---------------------------------------------------------------------------
# RNG
# ---------------------------------------------------------------------------


class RngState:
    """Counter-based (Philox) random stream; identical seeds give identical draws."""

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def spawn(self, key: int) -> "RngState":
        """Independent child stream derived from (seed, key)."""
        return RngState((self.seed * 1_000_003 + int(key)) % 2**64)


def rng_uniform(state: RngState, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """Uniform draws on ``[low, high)``."""
    u = state.generator.random(shape, dtype=DTYPE)
    if low == 0.0 and high == 1.0:
        return u
    return low + (high - low) * u


def rng_normal(state: RngState, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Standard normals by the Box-Muller transform of paired uniforms."""
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    n = math.prod(shape)
    m = (n + 1) // 2
    u1 = 1.0 - state.generator.random(m, dtype=DTYPE)  # (0, 1]
    u2 = state.generator.random(m, dtype=DTYPE)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
    return mean + std * z.reshape(shape)


def rng_integers(state: RngState, low: int, high: int, shape) -> np.ndarray:
    return state.generator.integers(low, high, size=shape)


def rng_permutation(state: RngState, n: int) -> np.ndarray:
    return state.generator.permutation(n)
