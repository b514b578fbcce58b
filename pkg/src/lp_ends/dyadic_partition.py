"""Smooth dyadic cutoffs.

``psi`` equals 1 on ``[0, 1]`` and 0 on ``[2, inf)``; in between it is one
minus the normalized running integral of the bump ``exp(-s / (t (1 - t)))``,
where ``s`` is the smoothness order.  From it::

    phi0(l) = psi(l)
    phi(l)  = psi(l / 2) - psi(l)          supported in [1, 4]
    phi1(l) = psi(l / 4) (1 - psi(2 l))    equal to 1 on [1, 4], supported in [1/2, 8]

so that ``phi0(l) + sum_{k=0}^{K} phi(2^-k l) = psi(2^-(K+1) l)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DomainError

CUTOFF_NAMES = ("psi", "phi0", "phi", "phi1")
_QUAD_ORDER = 96


@lru_cache(maxsize=None)
def _nodes():
    x, w = leggauss(_QUAD_ORDER)
    return 0.5 * (x + 1.0), 0.5 * w


def _bump(t, s):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t > 0) & (t < 1)
    ti = t[inside]
    out[inside] = np.exp(-s / (ti * (1.0 - ti)))
    return out


def _partial_integral(t, s):
    """int_0^t bump for t in [0, 1/2], by scaled Gauss-Legendre."""
    x, w = _nodes()
    t = np.asarray(t, dtype=float)
    return t * (_bump(t[..., None] * x, s) @ w)


@dataclass(frozen=True)
class DyadicCutoffs:
    """The cutoffs ``psi, phi0, phi, phi1`` for a given smoothness order."""

    smoothness: int
    _total: float = field(repr=False)

    def _ramp(self, t):
        # normalized running integral on [0, 1]; symmetric evaluation keeps
        # both plateaus exact
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        s = float(self.smoothness)
        lo = t <= 0.5
        out = np.empty_like(t)
        out[lo] = _partial_integral(t[lo], s) / self._total
        out[~lo] = 1.0 - _partial_integral(1.0 - t[~lo], s) / self._total
        return out

    def psi(self, lam):
        lam = np.asarray(lam, dtype=float)
        out = np.where(lam <= 1.0, 1.0, 0.0)
        mid = (lam > 1.0) & (lam < 2.0)
        if np.any(mid):
            out[mid] = 1.0 - self._ramp(lam[mid] - 1.0)
        return out if out.ndim else float(out)

    def phi0(self, lam):
        return self.psi(lam)

    def phi(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.psi(lam / 2.0) - self.psi(lam)

    def phi1(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.psi(lam / 4.0) * (1.0 - self.psi(2.0 * lam))

    def __call__(self, which: str, lam):
        return getattr(self, _check_name(which))(lam)


def _check_name(which):
    if which not in CUTOFF_NAMES:
        raise DomainError(f"unknown cutoff {which!r}")
    return which


@lru_cache(maxsize=None)
def build_cutoffs(smoothness: int = 1) -> DyadicCutoffs:
    """Cutoffs built from the bump ``exp(-smoothness / (t (1 - t)))``."""
    if int(smoothness) != smoothness or smoothness < 1:
        raise DomainError("smoothness must be an integer >= 1")
    s = float(smoothness)
    half = float(_partial_integral(np.array(0.5), s))
    return DyadicCutoffs(int(smoothness), 2.0 * half)


def eval_cutoff(c: DyadicCutoffs, which: str, lam):
    """Evaluate one cutoff; negative arguments are rejected."""
    lam_a = np.asarray(lam, dtype=float)
    if np.any(lam_a < 0):
        raise DomainError("cutoffs are defined on [0, inf)")
    return c(which, lam)


@dataclass(frozen=True)
class PartitionResidual:
    residual: float
    beyond: np.ndarray

    def __float__(self):
        return self.residual


def partial_sum(c: DyadicCutoffs, lam, K: int):
    """``phi0(l) + sum_{k=0}^{K} phi(2^-k l)``."""
    lam = np.asarray(lam, dtype=float)
    # psi at each dyadic scale, shared by neighbouring phi terms
    psi = [np.asarray(c.psi(lam * 2.0**-j), dtype=float) for j in range(K + 2)]
    total = psi[0].copy()
    for k in range(K + 1):
        total = total + (psi[k + 1] - psi[k])
    return total


def partition_residual(c: DyadicCutoffs, lam_grid, K: int) -> PartitionResidual:
    """Max of ``|1 - partial_sum|`` over grid points in ``[0, 2^(K+1)]``.

    Points beyond ``2^(K+1)`` are not part of the residual; they are returned
    in ``beyond``.
    """
    lam = np.atleast_1d(np.asarray(lam_grid, dtype=float))
    if np.any(lam < 0):
        raise DomainError("cutoffs are defined on [0, inf)")
    top = 2.0 ** (K + 1)
    inside = lam <= top
    res = 0.0
    if np.any(inside):
        res = float(np.max(np.abs(1.0 - partial_sum(c, lam[inside], K))))
    return PartitionResidual(res, lam[~inside])
