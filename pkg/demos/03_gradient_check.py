"""
Checking hand-written backward passes against finite differences
================================================================

Every operation has a forward function and a paired backward function. The
audit below perturbs each parameter of a small model one entry at a time.
"""

import numpy as np

from projsdpa.attention import projection_sdpa, projection_sdpa_backward
from projsdpa.numerics import finite_difference_grad
from projsdpa.gradcheck import gradient_audit, micro_config
from projsdpa.numerics import relative_error

rng = np.random.default_rng(2)
q, k = rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, (5, 3))
upstream = rng.uniform(-1, 1, (4, 3))

y, trace = projection_sdpa(q, k, sigma2=0.7)
dq, dk, dsigma2 = projection_sdpa_backward(upstream, q, k, trace, sigma2=0.7)

loss = lambda qq: float((projection_sdpa(qq, k, 0.7)[0] * upstream).sum())  # noqa: E731
print("kernel dq relative error:", relative_error(dq, finite_difference_grad(loss, q)))
loss_s = lambda s: float((projection_sdpa(q, k, float(s[0]))[0] * upstream).sum())  # noqa: E731
print("kernel dsigma2 relative error:",
      relative_error(np.atleast_1d(dsigma2), finite_difference_grad(loss_s, np.array([0.7]))))

# Whole model, both variants. The projection model has no value maps.
for variant in ("standard", "projection"):
    report = gradient_audit(micro_config(variant), seed=0)
    worst = max(report, key=report.get)
    print(f"\n{variant}: {len(report)} parameter arrays, worst {worst} at {report[worst]:.2e}")
