"""Dyadic cells adapted to ``dnu = w(r)^(1-n) dr dtheta`` and the
Calderon-Zygmund stopping time built on them.

Cells of level ``k`` (``k+ = max(k, 0)``)::

    P_(i,m)(k) = 2^-k+ (i, i+1]  x  2^-k w(floor(2^-k+ i)) (m + [0,1)^(n-1))

with ``i >= 2^k+ R``.  The angular side uses ``w`` at the integer part of the
left radial endpoint, which keeps the family nested: the parent of
``(k, i, m)`` is ``(k-1, i // 2, m // 2)`` for ``k >= 1`` and
``(k-1, i, m // 2)`` for ``k <= 0``.

Functions handed to the decomposition are piecewise constant on the cells of
one fine level ``K_f`` (:class:`CellFunction`).  Every coarser cell is an
exact union of fine cells, so averages, measures and the stopping rule are
computed without quadrature error beyond the 1-D radial integrals.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DomainError, InvalidIndex, NoParent, OutOfDomain
from .warp_geometry import Warp

_GL_X, _GL_W = leggauss(24)
_GL_X64, _GL_W64 = leggauss(64)


def _kp(k):
    return np.maximum(np.asarray(k), 0)


def unit_ball_volume(d: int) -> float:
    """Volume of the Euclidean unit ball in ``R^d`` (``d = 0`` gives 1)."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


# ---------------------------------------------------------------------------
# single cells


@dataclass(frozen=True, eq=False)
class PartitionCell:
    k: int
    i: int
    m: tuple
    warp: Warp = field(repr=False)
    R: int = field(repr=False)

    @property
    def kplus(self) -> int:
        return max(self.k, 0)

    @property
    def base(self) -> int:
        """Integer part of the left radial endpoint."""
        return self.i >> self.kplus

    @property
    def r_lo(self) -> float:
        return self.i * 2.0**-self.kplus

    @property
    def r_hi(self) -> float:
        return (self.i + 1) * 2.0**-self.kplus

    @property
    def width(self) -> float:
        """Angular side length."""
        return 2.0**-self.k * float(self.warp(float(self.base)))

    @property
    def theta_lo(self) -> np.ndarray:
        return self.width * np.asarray(self.m, dtype=float)

    def contains(self, r: float, theta) -> bool:
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        m = np.asarray(self.m, dtype=float)
        # edges are m * width on both sides so neighbouring cells share them exactly
        lo, hi = self.width * m, self.width * (m + 1.0)
        return bool(self.r_lo < r <= self.r_hi and np.all(th >= lo) and np.all(th < hi))

    def vertices(self) -> np.ndarray:
        """Corners of the closed cell, shape ``(2^n, n)``."""
        lo = self.theta_lo
        ang = [(x, x + self.width) for x in lo]
        return np.array([(r,) + th for r in (self.r_lo, self.r_hi) for th in itertools.product(*ang)])

    def contains_cell(self, other: "PartitionCell") -> bool:
        """Closed-box inclusion of ``other`` in ``self`` (with roundoff slack)."""
        tol = 1e-12 * max(1.0, abs(self.r_hi))
        if other.r_lo < self.r_lo - tol or other.r_hi > self.r_hi + tol:
            return False
        tw = 1e-12 * max(1.0, self.width)
        lo, olo = self.theta_lo, other.theta_lo
        return bool(np.all(olo >= lo - tw) and np.all(olo + other.width <= lo + self.width + tw))


def cell(k: int, i: int, m, w: Warp, R: int) -> PartitionCell:
    mv = (int(m),) if np.isscalar(m) else tuple(int(x) for x in m)
    if int(R) != R or R < 0:
        raise DomainError("R must be a nonnegative integer")
    if i < (1 << max(k, 0)) * R:
        raise InvalidIndex(f"i={i} below 2^k+ R at level {k}")
    return PartitionCell(int(k), int(i), mv, w, int(R))


def _radial_integral(w: Warp, k, i, n: int):
    """``int (w(base)/w(r))^(n-1) dr`` over the radial interval, vectorized."""
    k = np.asarray(k)
    i = np.asarray(i, dtype=np.int64)
    kp = _kp(k)
    h = 2.0**-kp
    lo = i * h
    base = (i >> kp).astype(float)
    r = lo[..., None] + 0.5 * h[..., None] * (_GL_X + 1.0) if np.ndim(h) else lo[..., None] + 0.5 * h * (_GL_X + 1.0)
    wb = w(base)
    vals = (wb[..., None] / w(r)) ** (n - 1)
    return 0.5 * h * (vals @ _GL_W)


def cell_measures(w: Warp, k, i, n: int):
    """Vectorized ``nu`` of cells ``(k, i, *)`` (independent of ``m``)."""
    k = np.asarray(k)
    return 2.0 ** (-k * (n - 1.0)) * _radial_integral(w, k, i, n)


def cell_measure(c: PartitionCell, n: int) -> float:
    return float(cell_measures(c.warp, np.array(c.k), np.array(c.i), n))


def parent(c: PartitionCell, n0: int | None = None) -> PartitionCell:
    """The level ``k-1`` cell containing ``c``."""
    if n0 is not None and c.k <= -n0:
        raise NoParent(f"level {c.k} is the coarsest level")
    i2 = c.i >> 1 if c.k >= 1 else c.i
    m2 = tuple(x >> 1 for x in c.m)
    return PartitionCell(c.k - 1, i2, m2, c.warp, c.R)


# ---------------------------------------------------------------------------
# families


@dataclass(frozen=True, eq=False)
class AdmissibleFamily:
    """The cell family on ``Omega = (R, inf) x R^(n-1)`` for a given warp.

    ``C2`` bounds ``w(r)/w(r')`` over unit separations (measure bounds);
    ``C3`` bounds ``nu(parent)/nu(cell)`` over the sampled levels and radii.
    """

    warp: Warp
    R: int
    n: int
    R_max: float | None
    n0: int
    C2: float
    C3: float
    levels: tuple

    def cell(self, k, i, m) -> PartitionCell:
        return cell(k, i, m, self.warp, self.R)

    def measures(self, k, i):
        return cell_measures(self.warp, k, i, self.n)

    def eps(self, k: int) -> float:
        """Diameter bound ``2^-k+ + sqrt(n-1) 2^-k sup w`` for level ``k`` cells."""
        return 2.0 ** -max(k, 0) + math.sqrt(self.n - 1) * 2.0**-k * self.warp.sup

    def locate(self, point, k: int) -> PartitionCell:
        return locate(point, k, self)


def measure_parent_ratios(w: Warp, R: int, R_max: float, n: int, k_lo: int, k_hi: int) -> np.ndarray:
    """``nu(parent)/nu(cell)`` for every radial index in ``(R, R_max)`` and level in ``(k_lo, k_hi]``."""
    out = []
    for k in range(k_lo + 1, k_hi + 1):
        kp = max(k, 0)
        i = np.arange((1 << kp) * R, int(math.ceil((1 << kp) * R_max)), dtype=np.int64)
        ip = i >> 1 if k >= 1 else i
        out.append(cell_measures(w, np.full(i.shape, k - 1), ip, n) / cell_measures(w, np.full(i.shape, k), i, n))
    return np.concatenate(out) if out else np.ones(1)


def make_family(w: Warp, R: int, n: int = 2, R_max: float | None = None, n0: int = 0, k_max: int = 8) -> AdmissibleFamily:
    """Family with constants measured over ``[R, R_max]`` and levels ``-n0 .. k_max``."""
    if int(R) != R or R < 0:
        raise DomainError("R must be a nonnegative integer")
    top = R_max if R_max is not None else R + 8.0
    ratios = measure_parent_ratios(w, int(R), top, n, -n0, k_max)
    C3 = float(max(np.max(ratios), np.max(1.0 / ratios)))
    return AdmissibleFamily(w, int(R), int(n), R_max, int(n0), float(w.C_diag), C3, (-n0, k_max))


def locate(point, k: int, family: AdmissibleFamily) -> PartitionCell:
    """The level-``k`` cell containing ``(r, theta)`` (radial intervals are open on the left)."""
    r = float(point[0])
    th = np.atleast_1d(np.asarray(point[1:] if len(point) > 2 else point[1], dtype=float))
    if th.size != family.n - 1:
        raise DomainError(f"point needs {family.n - 1} angular coordinates")
    if not r > family.R or (family.R_max is not None and r > family.R_max):
        raise OutOfDomain(f"r = {r} outside ({family.R}, {family.R_max}]")
    kp = max(k, 0)
    i = int(math.ceil(r * 2**kp)) - 1
    i = max(i, (1 << kp) * family.R)
    width = 2.0**-k * float(family.warp(float(i >> kp)))
    m = []
    for x in th:
        j = math.floor(x / width)
        # the quotient can land one ulp across an edge
        if x < j * width:
            j -= 1
        elif x >= (j + 1) * width:
            j += 1
        m.append(int(j))
    return family.cell(k, i, tuple(m))


# ---------------------------------------------------------------------------
# piecewise-constant functions on a fine level


@dataclass(frozen=True, eq=False)
class CellFunction:
    """Sparse piecewise-constant function on the level-``K`` cells.

    ``i`` has shape ``(c,)``, ``m`` shape ``(c, n-1)``; cells not listed carry 0.
    """

    family: AdmissibleFamily
    K: int
    i: np.ndarray
    m: np.ndarray
    values: np.ndarray

    @property
    def nu(self) -> np.ndarray:
        return self.family.measures(np.full(self.i.shape, self.K), self.i)

    def l1(self) -> float:
        return float(np.sum(np.abs(self.values) * self.nu))

    def integral(self):
        return np.sum(self.values * self.nu)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def scaled(self, c) -> "CellFunction":
        return CellFunction(self.family, self.K, self.i, self.m, c * self.values)

    def centers(self):
        kp = max(self.K, 0)
        r = (self.i + 0.5) * 2.0**-kp
        width = 2.0**-self.K * self.family.warp((self.i >> kp).astype(float))
        theta = (self.m + 0.5) * width[:, None]
        return r, theta

    @classmethod
    def from_cells(cls, family, K, i, m, values) -> "CellFunction":
        i = np.asarray(i, dtype=np.int64).ravel()
        m = np.asarray(m, dtype=np.int64).reshape(i.size, family.n - 1)
        values = np.asarray(values).ravel()
        keep = values != 0
        return cls(family, int(K), i[keep], m[keep], values[keep])

    @classmethod
    def from_callable(cls, f: Callable, family: AdmissibleFamily, K: int, r_range, theta_range) -> "CellFunction":
        """Sample ``f(r, theta)`` at cell centers of every level-``K`` cell meeting the box."""
        kp = max(K, 0)
        i_lo = max(int(math.floor(r_range[0] * 2**kp)), (1 << kp) * family.R)
        i_hi = int(math.ceil(r_range[1] * 2**kp))
        ii, mm, vv = [], [], []
        for i in range(i_lo, i_hi):
            width = 2.0**-K * float(family.warp(float(i >> kp)))
            ranges = [range(int(math.floor(theta_range[0] / width)), int(math.ceil(theta_range[1] / width)))] * (family.n - 1)
            for mv in itertools.product(*ranges):
                r = (i + 0.5) * 2.0**-kp
                th = (np.asarray(mv) + 0.5) * width
                ii.append(i)
                mm.append(mv)
                vv.append(f(r, th if family.n > 2 else th[0]))
        return cls.from_cells(family, K, ii, mm, vv)


def ancestor_indices(K: int, i: np.ndarray, m: np.ndarray, k: int):
    """Indices at level ``k <= K`` of the cells containing level-``K`` cells."""
    shift_r = max(K, 0) - max(k, 0)
    shift_m = K - k
    return i >> shift_r, m >> shift_m


def _group(i, m):
    key = np.column_stack([i, m])
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    return uniq[:, 0], uniq[:, 1:], inv.ravel()


def conditional_expectation(u: CellFunction, k: int) -> CellFunction:
    """Cell averages of ``u`` at level ``k`` (``k <= u.K``)."""
    if k > u.K:
        raise DomainError("expectation level must not exceed the fine level")
    ik, mk = ancestor_indices(u.K, u.i, u.m, k)
    gi, gm, inv = _group(ik, mk)
    nu = u.family.measures(np.full(gi.shape, k), gi)
    avg = np.bincount(inv, weights=(u.values * u.nu).real, minlength=gi.size)
    if np.iscomplexobj(u.values):
        avg = avg + 1j * np.bincount(inv, weights=(u.values * u.nu).imag, minlength=gi.size)
    return CellFunction(u.family, k, gi, gm, avg / nu)


def expectation_error(u: CellFunction, k: int) -> float:
    """``||E_k u - u||_{L^1(nu)}``, computed exactly on the fine cells."""
    E = conditional_expectation(u, k)
    ik, mk = ancestor_indices(u.K, u.i, u.m, k)
    _, _, inv = _group(ik, mk)
    nu_f = u.nu
    err = float(np.sum(np.abs(u.values - E.values[inv]) * nu_f))
    covered = np.bincount(inv, weights=nu_f, minlength=E.i.size)
    rest = np.maximum(E.family.measures(np.full(E.i.shape, k), E.i) - covered, 0.0)
    return err + float(np.sum(np.abs(E.values) * rest))


# ---------------------------------------------------------------------------
# decomposition


@dataclass(frozen=True, eq=False)
class CZDecomposition:
    """Output of the stopping time.

    Selected cells are indexed by ``j``; ``owner[f]`` is the selected cell
    containing fine cell ``f`` of ``u`` (``-1`` on the good set).  The good
    part equals ``u`` off the selected cells and the average ``avg[j]`` on
    cell ``j``; the bad piece ``u_j`` is ``u - avg[j]`` on cell ``j``.
    """

    lam: float
    D: float
    n0: int
    family: AdmissibleFamily
    u: CellFunction
    k: np.ndarray
    i: np.ndarray
    m: np.ndarray
    nu: np.ndarray
    avg: np.ndarray
    owner: np.ndarray
    r_c: np.ndarray
    theta_c: np.ndarray
    t: np.ndarray
    large: np.ndarray
    nu_star: np.ndarray
    C: float
    C0: float
    C1: float
    C_D: float
    ceiling: float

    @property
    def count(self) -> int:
        return int(self.k.size)

    def cells(self) -> list:
        return [self.family.cell(int(k), int(i), tuple(m)) for k, i, m in zip(self.k, self.i, self.m)]

    @property
    def D_required(self) -> float:
        return 2.0 * self.C1**2

    def good_values(self) -> np.ndarray:
        """Good part on the fine cells of ``u``."""
        out = self.u.values.astype(np.result_type(self.u.values, self.avg)).copy()
        bad = self.owner >= 0
        out[bad] = self.avg[self.owner[bad]]
        return out

    def good_l1(self) -> float:
        good = self.owner < 0
        return float(np.sum(np.abs(self.u.values[good]) * self.u.nu[good]) + np.sum(np.abs(self.avg) * self.nu))

    def piece_l1(self) -> np.ndarray:
        """``||u_j||_{L^1(nu)}`` per selected cell."""
        nu_f = self.u.nu
        bad = self.owner >= 0
        o = self.owner[bad]
        stored = np.bincount(o, weights=np.abs(self.u.values[bad] - self.avg[o]) * nu_f[bad], minlength=self.count)
        covered = np.bincount(o, weights=nu_f[bad], minlength=self.count)
        rest = np.maximum(self.nu - covered, 0.0)
        return stored + np.abs(self.avg) * rest

    def piece_integrals(self) -> np.ndarray:
        nu_f = self.u.nu
        bad = self.owner >= 0
        o = self.owner[bad]
        vals = self.u.values[bad] * nu_f[bad]
        s = np.bincount(o, weights=vals.real, minlength=self.count).astype(complex)
        if np.iscomplexobj(vals):
            s += 1j * np.bincount(o, weights=vals.imag, minlength=self.count)
        out = s - self.avg * self.nu
        return out if np.iscomplexobj(self.u.values) else out.real

    def table(self) -> list[dict]:
        """One row per selected cell."""
        return [
            {"k": int(k), "i": int(i), "m": tuple(int(x) for x in m), "nu": float(nu), "t": float(t), "nu_star": float(ns)}
            for k, i, m, nu, t, ns in zip(self.k, self.i, self.m, self.nu, self.t, self.nu_star)
        ]


def start_level(norm1: float, lam: float, C2: float, n: int) -> int:
    """Minimal ``n0 >= 0`` with ``C2^(1-n) 2^(n0 (n-1)) > ||u||_1 / lam``."""
    target = norm1 / lam
    n0 = 0
    while C2 ** (1 - n) * 2.0 ** (n0 * (n - 1)) <= target:
        n0 += 1
    return n0


def enlarged_measure(w: Warp, R: float, n: int, r_c: float, t: float, D: float, large: bool) -> float:
    """``nu`` of the enlarged set around ``(r_c, theta_c)`` intersected with ``r > R``.

    Small regime: ``|r - r_c| + |theta - theta_c| / w(r_c) <= D t``.
    Large regime: ``|r - r_c| <= 2`` and ``|theta - theta_c| / w(r_c) <= D t``.
    """
    V = unit_ball_volume(n - 1)
    wc = float(w(r_c))
    ext = 2.0 if large else D * t
    total = 0.0
    for a, b in ((max(R, r_c - ext), r_c), (max(R, r_c), r_c + ext)):
        if b <= a:
            continue
        r = 0.5 * (a + b) + 0.5 * (b - a) * _GL_X64
        half = np.full_like(r, D * t) if large else D * t - np.abs(r - r_c)
        total += 0.5 * (b - a) * float(np.sum(_GL_W64 * w(r) ** (1 - n) * V * (wc * half) ** (n - 1)))
    return total


def doubling_ceiling(D: float, n: int, C: float, C2: float, C_diag: float) -> float:
    """Explicit bound on ``nu(Q*)/nu(Q)`` from the measure bounds and slow variation.

    ``4 V_(n-1) D^n (2 + 2 C sqrt(n-1))^n C2^(n-1) C_diag^((n-1)(D+2))``; it is
    below ``c D^n exp(2 (n-1) C_diag D)`` with ``c = 4 V (2+2C sqrt(n-1))^n C2^(n-1)``.
    """
    V = unit_ball_volume(n - 1)
    return 4.0 * V * D**n * (2.0 + 2.0 * C * math.sqrt(n - 1)) ** n * C2 ** (n - 1) * C_diag ** ((n - 1) * (D + 2.0))


def cz_decompose(u: CellFunction, lam: float, D: float = 8.0, family: AdmissibleFamily | None = None) -> CZDecomposition:
    """Stopping-time decomposition of ``u`` at threshold ``lam``.

    Levels are swept from ``1 - n0`` up to the fine level; at each level the
    cells with ``nu``-average of ``|u|`` at least ``lam`` and not inside an
    already selected cell are selected, in lexicographic ``(i, m)`` order.
    Beyond the fine level nothing new can be selected because ``u`` is
    constant on fine cells.
    """
    fam = family or u.family
    n = fam.n
    if not lam > 0:
        raise DomainError("threshold must be positive")
    if not D > 1:
        raise DomainError("enlargement factor must exceed 1")
    norm1 = u.l1()
    if not np.isfinite(norm1) or norm1 == 0.0:
        raise DomainError("u must be integrable and nonzero")
    n0 = start_level(norm1, lam, fam.C2, n)
    K = u.K
    nu_f = u.nu
    absw = np.abs(u.values) * nu_f
    owner = np.full(u.i.size, -1, dtype=np.int64)
    sel_k, sel_i, sel_m, sel_nu, sel_avg = [], [], [], [], []
    cplx = np.iscomplexobj(u.values)
    for k in range(1 - n0, K + 1):
        ik, mk = ancestor_indices(K, u.i, u.m, k)
        gi, gm, inv = _group(ik, mk)
        nu = fam.measures(np.full(gi.shape, k), gi)
        mass = np.bincount(inv, weights=absw, minlength=gi.size)
        blocked = np.bincount(inv, weights=(owner >= 0).astype(float), minlength=gi.size) > 0
        pick = np.flatnonzero((mass >= lam * nu) & ~blocked)
        if pick.size == 0:
            continue
        sv = u.values * nu_f
        s = np.bincount(inv, weights=sv.real, minlength=gi.size)
        if cplx:
            s = s + 1j * np.bincount(inv, weights=sv.imag, minlength=gi.size)
        base = len(sel_k)
        slot = np.full(gi.size, -1, dtype=np.int64)
        slot[pick] = base + np.arange(pick.size)
        newly = slot[inv]
        owner = np.where((owner < 0) & (newly >= 0), newly, owner)
        sel_k.extend([k] * pick.size)
        sel_i.extend(gi[pick])
        sel_m.extend(gm[pick])
        sel_nu.extend(nu[pick])
        sel_avg.extend(s[pick] / nu[pick])

    k_a = np.array(sel_k, dtype=np.int64)
    i_a = np.array(sel_i, dtype=np.int64)
    m_a = np.array(sel_m, dtype=np.int64).reshape(-1, n - 1)
    nu_a = np.array(sel_nu, dtype=float)
    avg_a = np.array(sel_avg, dtype=complex if cplx else float)

    w = fam.warp
    kp = np.maximum(k_a, 0)
    r_c = i_a * 2.0**-kp
    base = (i_a >> kp).astype(float)
    wb = w(base) if k_a.size else np.zeros(0)
    theta_c = (2.0 ** -k_a.astype(float) * wb)[:, None] * m_a
    observed = float(np.max(wb / w(r_c))) if k_a.size else 1.0
    C = max(fam.C2, observed)
    t = 2.0**-kp + C * 2.0 ** -k_a.astype(float) * math.sqrt(n - 1)
    large = t > 1.0
    t = np.where(large, np.maximum(2.0, t), t)
    nu_star = np.array([enlarged_measure(w, fam.R, n, rc, tj, D, bool(lg)) for rc, tj, lg in zip(r_c, t, large)])
    C_D = float(np.max(nu_star / nu_a)) if k_a.size else 0.0

    # C0: parent comparability over the levels and radii actually used
    C0 = fam.C3
    if k_a.size:
        ip = np.where(k_a >= 1, i_a >> 1, i_a)
        ratio = fam.measures(k_a - 1, ip) / nu_a
        C0 = max(C0, float(np.max(ratio)))
    C1 = fam.C2**2
    ceiling = doubling_ceiling(D, n, C, fam.C2, w.C_diag)
    return CZDecomposition(lam, D, n0, fam, u, k_a, i_a, m_a, nu_a, avg_a, owner, r_c, theta_c, t, large, nu_star, C, C0, C1, C_D, ceiling)


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class CZCheck:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class CZReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name) -> CZCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


CZ_CHECKS = ("sum", "linf", "mean_zero", "support", "measure", "l1", "inclusion_small", "inclusion_large", "doubling")


def _box_dist(cl: PartitionCell, r_c, th_c, w_c):
    v = cl.vertices()
    dr = np.abs(v[:, 0] - r_c)
    dth = np.linalg.norm(v[:, 1:] - th_c[None, :], axis=1) / w_c
    return dr, dth


def verify_cz(dec: CZDecomposition, u: CellFunction | None = None, lam: float | None = None) -> CZReport:
    """Check the nine output properties of a decomposition."""
    u = dec.u if u is None else u
    lam = dec.lam if lam is None else lam
    fam = dec.family
    w = fam.warp
    nu_f = u.nu
    norm1 = u.l1()
    checks = []

    # u = good + sum of pieces, on stored cells and on the rest of each selected cell
    good = dec.good_values()
    bad = dec.owner >= 0
    pieces = np.zeros_like(good)
    pieces[bad] = u.values[bad] - dec.avg[dec.owner[bad]]
    res = float(np.sum(np.abs(u.values - good - pieces) * nu_f))
    covered = np.bincount(dec.owner[bad], weights=nu_f[bad], minlength=dec.count)
    rest = np.maximum(dec.nu - covered, 0.0)
    res += float(np.sum(np.abs(0.0 - dec.avg - (-dec.avg)) * rest))
    rel = res / norm1
    checks.append(CZCheck("sum", rel, 1e-12, rel <= 1e-12))

    sup_good = float(np.max(np.abs(good))) if good.size else 0.0
    sup_bad = float(np.max(np.abs(dec.avg))) if dec.count else 0.0
    on_A = ~bad
    sup_A = float(np.max(np.abs(u.values[on_A]))) if np.any(on_A) else 0.0
    linf = max(sup_good, sup_bad)
    ok = linf <= dec.C0 * lam * (1 + 1e-12) and sup_A < lam
    checks.append(CZCheck("linf", linf / lam, dec.C0, ok, f"good-set sup / lam = {sup_A / lam:.6g}"))

    means = np.abs(dec.piece_integrals()) if dec.count else np.zeros(0)
    mz = float(np.max(means)) if means.size else 0.0
    checks.append(CZCheck("mean_zero", mz, 1e-12, mz <= 1e-12))

    # every fine cell owned by j lies in Q_j
    sup_ok, bad_cell = True, ""
    if dec.count:
        for j in np.unique(dec.owner[bad]):
            Q = fam.cell(int(dec.k[j]), int(dec.i[j]), tuple(dec.m[j]))
            members = np.flatnonzero(dec.owner == j)
            ik, mk = ancestor_indices(u.K, u.i[members], u.m[members], int(dec.k[j]))
            if np.any(ik != dec.i[j]) or np.any(mk != dec.m[j][None, :]):
                sup_ok, bad_cell = False, f"cell {j}"
                break
            for f in members[:: max(1, members.size // 8)]:
                if not Q.contains_cell(fam.cell(u.K, int(u.i[f]), tuple(u.m[f]))):
                    sup_ok, bad_cell = False, f"cell {j}"
                    break
    checks.append(CZCheck("support", 0.0 if sup_ok else 1.0, 0.0, sup_ok, bad_cell))

    meas = float(np.sum(dec.nu)) * lam / norm1
    checks.append(CZCheck("measure", meas, 1.0, meas <= 1.0 + 1e-12))

    l1 = (dec.good_l1() + float(np.sum(dec.piece_l1()))) / norm1
    checks.append(CZCheck("l1", l1, 3.0, l1 <= 3.0 + 1e-12))

    worst_small, worst_large, fail_small, fail_large = 0.0, 0.0, "", ""
    for j, Q in enumerate(dec.cells()):
        wc = float(w(dec.r_c[j]))
        dr, dth = _box_dist(Q, dec.r_c[j], dec.theta_c[j], wc)
        if dec.large[j]:
            v = max(float(np.max(dr)), float(np.max(dth)) / dec.t[j])
            if v > worst_large:
                worst_large = v
            if v > 1 + 1e-12 and not fail_large:
                fail_large = f"cell {j} (k={Q.k}, i={Q.i})"
        else:
            v = float(np.max(dr + dth)) / dec.t[j]
            if v > worst_small:
                worst_small = v
            if (v > 1 + 1e-12 or dec.t[j] > 1) and not fail_small:
                fail_small = f"cell {j} (k={Q.k}, i={Q.i})"
    checks.append(CZCheck("inclusion_small", worst_small, 1.0, not fail_small, fail_small))
    checks.append(CZCheck("inclusion_large", worst_large, 1.0, not fail_large, fail_large))

    ok = bool(np.isfinite(dec.C_D) and dec.C_D <= dec.ceiling)
    checks.append(CZCheck("doubling", dec.C_D, dec.ceiling, ok))
    return CZReport(tuple(checks))


# ---------------------------------------------------------------------------
# diagnostics


def diamond_measure(w: Warp, R: float, n: int, r_c: float, rho: float) -> float:
    """``nu`` of ``{|r - r_c| + |theta - theta_c| / w(r_c) <= rho, r > R}``."""
    return enlarged_measure(w, R, n, r_c, rho, 1.0, False)


def doubling_ratio(w: Warp, R: float, n: int, r_c: float, rho: float) -> float:
    """``nu(B(2 rho)) / nu(B(rho))`` for the metric-adapted diamonds."""
    return diamond_measure(w, R, n, r_c, 2 * rho) / diamond_measure(w, R, n, r_c, rho)


def random_cell_function(family: AdmissibleFamily, rng: np.random.Generator, K: int, r_span=(None, None), patches: int = 3) -> CellFunction:
    """A few rectangular patches of random values on level-``K`` cells."""
    kp = max(K, 0)
    lo = family.R + 0.5 if r_span[0] is None else r_span[0]
    hi = (family.R_max if family.R_max is not None else family.R + 4.0) - 0.5 if r_span[1] is None else r_span[1]
    cells = {}
    for _ in range(patches):
        r0 = rng.uniform(lo, hi - 0.25)
        nr = int(rng.integers(1, max(2, 2**kp // 2) + 1))
        i0 = int(math.floor(r0 * 2**kp))
        i0 = max(i0, (1 << kp) * family.R)
        nm = int(rng.integers(1, 2 ** max(K, 0) + 2))
        m0 = int(rng.integers(-4, 5))
        amp = float(np.exp(rng.normal(0.0, 1.0)))
        spiky = rng.random() < 0.5
        for i in range(i0, i0 + nr):
            for mv in itertools.product(range(m0, m0 + nm), repeat=family.n - 1):
                v = amp * rng.normal()
                if spiky and rng.random() < 0.1:
                    v *= 20.0
                cells[(i,) + tuple(mv)] = cells.get((i,) + tuple(mv), 0.0) + v
    keys = sorted(cells)
    i = np.array([k[0] for k in keys], dtype=np.int64)
    m = np.array([k[1:] for k in keys], dtype=np.int64)
    return CellFunction.from_cells(family, K, i, m, [cells[k] for k in keys])
