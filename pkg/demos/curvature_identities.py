"""Pointwise and integral curvature identities on random symmetric metrics.

On CP^1 the traceless part of the curvature operator and the traceless
Ricci tensor have the same norm at every point.  In every dimension the
mean of |Ric - omega|^2 equals the mean of (R - n)^2, because Ric - omega
is exact.  For n = 2 the ratio of the Q0 and Ric0 integrals is printed as
an exploratory table.
"""
import numpy as np

from krflow.functionals import l2_pinching
from krflow.geometry import perturbed_profile, ricci_lower_bound, uniform_grid

rng = np.random.default_rng(0)
grid = uniform_grid(12.0, 256)
for n in (1, 2):
    print(f"n = {n}")
    print(f"  {'int|Ric0|^2':>12} {'int(R-n)^2':>12} {'int|Q0|^2':>12} {'Q0/Ric0':>8}")
    shown = 0
    while shown < 5:
        P = perturbed_profile(n, grid, 0.02, "random", seed=int(rng.integers(2**31)))
        if ricci_lower_bound(P) <= 0:
            continue
        l2 = l2_pinching(P.geometry)
        print(f"  {l2['l2_ric0']:12.5e} {l2['l2_scalar']:12.5e} {l2['l2_Q0']:12.5e} {l2['l2_Q0'] / l2['l2_ric0']:8.5f}")
        shown += 1
