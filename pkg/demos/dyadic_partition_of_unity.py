"""
A smooth dyadic partition of unity
==================================

The cutoff ``psi`` equals 1 below 1 and 0 above 2.  Its dyadic differences
``phi(lam) = psi(lam / 2) - psi(lam)`` live on the annuli ``[2^(k-1), 2^(k+1)]``
and sum with ``psi`` to exactly 1 up to the top scale.
"""

import numpy as np

from lp_ends.dyadic_partition import build_cutoffs, eval_cutoff, partition_residual

c = build_cutoffs(smoothness=1)

# the pieces on a few sample points
lam = np.array([0.5, 1.0, 1.35, 1.9, 2.5, 3.9])
print("psi :", np.round(eval_cutoff(c, "psi", lam), 6))
print("phi :", np.round(eval_cutoff(c, "phi", lam), 6))

# phi(2^-k lam) for consecutive k overlap; farther apart they are disjoint
k_lam = np.linspace(0, 64, 20001)
blocks = [eval_cutoff(c, "phi", k_lam / 2.0**k) for k in range(6)]
print("max overlap of neighbours  :", max(np.max(a * b) for a, b in zip(blocks, blocks[1:])))
print("max overlap two scales away:", max(np.max(a * b) for a, b in zip(blocks, blocks[2:])))

# the partition sums to one on [0, 2^(K+1)]
K = 10
grid = np.linspace(0.0, 2.0 ** (K + 1), 200001)
print("residual with K = 10:", partition_residual(c, grid, K).residual)
