"""
Truncated kernels and their uniform bounds
==========================================

The kernel ``K_M`` sums ``2^(2k) ahat(2^k |z|)`` for ``k <= M``, cut off near
the diagonal.  The error from replacing ``theta - theta'`` by its warped
version decays geometrically in ``k``, and the operator norms at ``M = 6`` and
``M = 12`` agree once each grid resolves its own finest scale.
"""

import numpy as np

from lp_ends import singular_kernels as sk
from lp_ends.warp_geometry import make_warp

fam = sk.make_symbol_family(12)
zeta = sk.make_zeta()
w = make_warp("hyperbolic", (1.0,), r_range=(1.0, 10.0))

print("ahat(0) =", float(sk.radial_hat(fam, np.array([0.0]))[0]), "(3 pi / 2 =", 1.5 * np.pi, ")")

bounds = [sk.remainder_schur(fam, zeta, k, None, w, 2.0, r_range=(1, 9)) for k in range(2, 9)]
ratio = np.exp(np.polyfit(np.arange(2, 9), np.log(bounds), 1)[0])
print("remainder Schur bounds k=2..8:", np.round(bounds, 5))
print("geometric decay ratio        :", round(float(ratio), 4))

for M in (6, 12):
    kern = sk.kernel_KM(fam, zeta, M, w)
    grid = sk.build_kernel_grid(kern, 2.0, 64 * 2.0**-M, 128)
    print(f"M = {M:2d}: L2 norm {sk.l2_norm_estimate(grid):.4f}, symbol constant {sk.symbol_cz_bound(kern, samples=1500).constant:.4g}")
