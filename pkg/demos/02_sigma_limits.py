"""
What sigma2 does to the attention weights
=========================================
"""

import numpy as np

from projsdpa.attention import pairwise_sq_distance, projection_sdpa

rng = np.random.default_rng(1)
q, k = rng.standard_normal((5, 3)), rng.standard_normal((7, 3))
D = pairwise_sq_distance(q, k)

# Very wide kernel: every key gets the same share.
_, wide = projection_sdpa(q, k, sigma2=1e8)
print("sigma2=1e8, max |z - 1/7| =", np.abs(wide.weights - 1 / 7).max())

# Very narrow kernel: all mass on the nearest key (a hard lookup).
_, narrow = projection_sdpa(q, k, sigma2=1e-6)
print("sigma2=1e-6, argmax matches nearest key:", np.array_equal(narrow.weights.argmax(1), D.argmin(1)))
print("             smallest winning weight:", narrow.weights.max(1).min())

# In between, each output slides from the key centroid toward its nearest key.
centroid, nearest = k.mean(0), k[D.argmin(1)]
print("\n sigma2   max weight   |y - centroid|   |y - nearest key|")
for sigma2 in (1e3, 10.0, 1.0, 0.1, 0.01):
    y, tr = projection_sdpa(q, k, sigma2=sigma2)
    to_c = np.linalg.norm(y - centroid, axis=1).mean()
    to_n = np.linalg.norm(y - nearest, axis=1).mean()
    print(f"{sigma2:7g}   {tr.weights.max():.3f}        {to_c:.3f}            {to_n:.3f}")

# The weights are computed in log space relative to each row's closest key,
# so tiny sigma2 values with large distances stay finite.
far_q, far_k = 50 * rng.standard_normal((3, 3)), 50 * rng.standard_normal((4, 3))
_, tr = projection_sdpa(far_q, far_k, sigma2=1e-3)
print("\nfar-apart rows at sigma2=1e-3: finite =", np.isfinite(tr.weights).all(), " row sums =", tr.weights.sum(1))
