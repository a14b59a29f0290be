"""
Residual connections and dimensional collapse
=============================================

Stacking distance-weighted averaging layers without a residual path keeps
pulling the rows toward each other. The effective rank of the activations
(exp of the entropy of the singular value spectrum) makes this visible.
"""

import numpy as np

from projsdpa.attention import projection_sdpa
from projsdpa.training import effective_rank_probe

rng = np.random.default_rng(3)
x0 = rng.standard_normal((16, 8))

print("layer   no residual   with residual")
plain, resid = x0.copy(), x0.copy()
for layer in range(9):
    print(f"{layer:5d}   {effective_rank_probe(plain):11.3f}   {effective_rank_probe(resid):13.3f}")
    plain, _ = projection_sdpa(plain, plain, sigma2=4.0)
    y, _ = projection_sdpa(resid, resid, sigma2=4.0)
    resid = resid + y
    resid = (resid - resid.mean(1, keepdims=True)) / resid.std(1, keepdims=True)
