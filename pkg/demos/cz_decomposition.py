"""
Calderon-Zygmund decomposition without doubling
===============================================

On a hyperbolic end the measure ``e^r dr dtheta`` is not doubling, yet the
adapted dyadic cells still support a stopping-time decomposition
``u = good + sum of bad pieces``.  The good part is bounded by a multiple of
the threshold, each bad piece has mean zero on its cell and the selected cells
have total measure at most ``||u||_1 / lambda``.
"""

import numpy as np

from lp_ends import cz_cover as cz
from lp_ends.warp_geometry import make_warp

w = make_warp("hyperbolic", (1.0,), r_range=(0.5, 11.0))
family = cz.make_family(w, 1, n=2, R_max=9.0, n0=8, k_max=3)

rng = np.random.default_rng(0)
u = cz.random_cell_function(family, rng, 3)
lam = 1.0
u = u.scaled(8.0 * lam / u.sup())

dec = cz.cz_decompose(u, lam, 8.0, family)
report = cz.verify_cz(dec)
print("selected cells:", dec.k.size)
print(f"total selected measure {float(dec.nu.sum()):.4g} <= ||u||_1 / lambda = {u.l1() / lam:.4g}")
for name in cz.CZ_CHECKS:
    chk = report[name]
    print(f"{name:16s} value {chk.value:10.4g}  threshold {chk.threshold:10.4g}  {'ok' if chk.passed else 'FAIL'}")

# global doubling fails: the ball ratio grows with the radius
for rho in (1.0, 2.0, 4.0):
    print(f"doubling ratio at radius {rho}: {cz.doubling_ratio(w, 1.0, 2, 5.0, rho):.3g}")
