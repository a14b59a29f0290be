"""Whole-model finite-difference audit of the hand-written backward pass."""

from __future__ import annotations

import numpy as np

from .model import ModelConfig, TransformerParams, backward, forward, forward_with_cache
from .numerics import RngState, finite_difference_grad, relative_error, rng_integers
from .training import cross_entropy_loss

AUDIT_FLOOR = 1e-6


def micro_config(variant: str = "standard", seed: int = 0, **overrides) -> ModelConfig:
    """d_model=8, 2 heads, one encoder and one decoder layer, vocab 11, length 4."""
    base = dict(
        d_model=8, num_heads=2, num_encoder_layers=1, num_decoder_layers=1, ff_dim=16,
        src_vocab=11, tgt_vocab=11, max_len=4, variant=variant,
        sigma2_self=1.0, sigma2_cross=1.0, seed=seed,
    )
    base.update(overrides)
    return ModelConfig(**base)


def gradient_audit(
    config: ModelConfig, seed: int = 0, batch: int = 2, seq_len: int | None = None, h: float = 1e-5,
    floor: float = AUDIT_FLOOR,
) -> dict[str, float]:
    """Relative error of the analytic gradient of every parameter against central differences.

    The loss is the token cross-entropy on a random batch (targets exclude
    padding so every position contributes). Gradient norms below ``floor``
    are compared in absolute terms against the floor: with sharp kernels
    (small σ² on unit rows) some weights are exactly one-hot and their query
    maps get gradients near 1e-8, where central differences at h = 1e-5 only
    resolve round-off.
    """
    params = TransformerParams.init(config)
    t = config.max_len if seq_len is None else min(seq_len, config.max_len)
    rng = RngState(seed)
    src = rng_integers(rng, 0, config.src_vocab, (batch, t))
    tgt_in = rng_integers(rng, 0, config.tgt_vocab, (batch, t))
    tgt_out = rng_integers(rng, 1, config.tgt_vocab, (batch, t))

    logits, cache = forward_with_cache(src, tgt_in, params, config)
    _, grad = cross_entropy_loss(logits, tgt_out)
    params.zero_grads()
    backward(grad, cache, params, config)

    def loss(_):
        return cross_entropy_loss(forward(src, tgt_in, params, config), tgt_out)[0]

    report = {}
    for name, p in params.named_parameters():
        numeric = finite_difference_grad(loss, p.value, h)
        report[name] = relative_error(p.grad, numeric, floor)
    return report
