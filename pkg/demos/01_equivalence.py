"""
Standard attention and distance-weighted attention agree on the unit sphere
===========================================================================

Softmax over dot products and a Gaussian over squared distances give the same
weights once queries and keys have unit norm, because |q - k|^2 = 2 - 2 q.k
and the constant drops out of the row normalization.
"""

import numpy as np

from projsdpa import equivalence_residual, projection_sdpa, standard_sdpa
from projsdpa.numerics import l2_normalize_rows

rng = np.random.default_rng(0)
q = l2_normalize_rows(rng.standard_normal((6, 4)))
k = l2_normalize_rows(rng.standard_normal((9, 4)))

# Standard form with the keys reused as values and a temperature of 1.
y_std, tr_std = standard_sdpa(q, k, k, scale=1.0)

# Distance form: the output is a convex combination of key rows.
y_proj, tr_proj = projection_sdpa(q, k, sigma2=1.0)

print("max |weights difference|:", np.abs(tr_std.weights - tr_proj.weights).max())
print("max |output difference|: ", np.abs(y_std - y_proj).max())

# The match holds for any sigma2 as long as the softmax scale is 1/sigma2.
for sigma2 in (0.05, 0.5, 2.0):
    print(f"sigma2={sigma2:<5} scale=1/sigma2 residual={equivalence_residual(q, k, sigma2, 1 / sigma2):.1e}"
          f"   scale=1 residual={equivalence_residual(q, k, sigma2, 1.0):.1e}")

# Without the unit-norm condition the two forms part ways: the distance form
# penalizes keys with large norm, the dot-product form rewards them.
q_raw, k_raw = 3 * rng.standard_normal((6, 4)), 3 * rng.standard_normal((9, 4))
y_a, _ = standard_sdpa(q_raw, k_raw, k_raw, scale=1.0)
y_b, _ = projection_sdpa(q_raw, k_raw, sigma2=1.0)
print("unnormalized rows, max |output difference|:", np.abs(y_a - y_b).max())
