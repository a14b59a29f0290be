"""Standard and projection scaled dot-product attention on numpy, with a toy transformer."""

from .attention import (
    AttentionConfig,
    AttentionParams,
    AttentionTrace,
    Variant,
    equivalence_residual,
    gaussian_weights,
    multi_head_attention,
    pairwise_sq_distance,
    projection_sdpa,
    standard_sdpa,
)
from .model import ModelConfig, TransformerParams, forward, greedy_decode, parameter_count
from .numerics import Parameter, RngState, finite_difference_grad

__version__ = "0.1.0"
