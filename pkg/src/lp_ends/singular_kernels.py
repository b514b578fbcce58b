"""Properly supported kernels built from dyadically rescaled symbols.

The symbols are radial in the frequency variable and independent of the base
point::

    a_k(r, theta, rho, eta) = c_k g(rho^2 + |eta|^2)

where ``g`` is a smooth bump supported in ``[c, C]`` assembled from the dyadic
cutoffs.  Their partial Fourier transform is radial, so everything reduces to
the one-variable profile ``ahat(|z|)``, tabulated once by Hankel quadrature.
The kernel of level ``M`` is::

    K_M(r, th, r', th') = sum_{k<=M} 2^(kn) ahat_k(2^k (r - r', (th - th') / w(r))) zeta(r - r', th - th')

acting against ``dnu = w(r')^(1-n) dr' dth'``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, special
from scipy.interpolate import CubicSpline

from .dyadic_partition import build_cutoffs
from .errors import DomainError, PreconditionError, ResolutionError
from .warp_geometry import TemperateWeight, Warp

Z_MAX = 1024.0
_TABLE_STEP = 1.0 / 32.0


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in ``R^n`` (``n = 1`` gives 2)."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


# ---------------------------------------------------------------------------
# profile and its derivatives


def _psi_derivs(c, x):
    """``psi``, ``psi'``, ``psi''`` at ``x``."""
    x = np.asarray(x, dtype=float)
    s = float(c.smoothness)
    v = np.asarray(c.psi(x), dtype=float)
    t = x - 1.0
    inside = (t > 0) & (t < 1)
    d1 = np.zeros_like(x)
    d2 = np.zeros_like(x)
    ti = t[inside]
    q = ti * (1.0 - ti)
    b = np.exp(-s / q)
    d1[inside] = -b / c._total
    d2[inside] = -b * s * (1.0 - 2.0 * ti) / q**2 / c._total
    return v, d1, d2


@dataclass(frozen=True, eq=False)
class SymbolFamily:
    """Radial symbols ``a_k = amplitude[k] * g(rho^2 + |eta|^2)``, ``k = 0..K_sym``.

    ``g(s) = psi(2 s / C) (1 - psi(s / c))`` is supported in ``c <= s <= C``.
    ``seminorms`` maps ``(l, beta)`` (orders in ``rho`` and ``eta_1``) to the
    sup of the corresponding derivative; ``bounds`` are the constants with
    ``bounds[0] <= |rho| + |eta| <= bounds[1]`` on the support.
    """

    K_sym: int
    annulus: tuple
    smoothness: int
    n: int
    amplitudes: np.ndarray
    seminorms: dict = field(repr=False)
    bounds: tuple = ()

    @property
    def zero(self) -> bool:
        return not np.any(self.amplitudes)

    def amplitude(self, k: int) -> float:
        return float(self.amplitudes[k]) if 0 <= k <= self.K_sym else 0.0

    def profile(self, s, order: int = 0):
        """``g`` and its derivatives in ``s = rho^2 + |eta|^2``."""
        c, C = self.annulus
        cut = build_cutoffs(self.smoothness)
        s = np.asarray(s, dtype=float)
        A, A1, A2 = _psi_derivs(cut, 2.0 * s / C)
        B0, B1, B2 = _psi_derivs(cut, s / c)
        B0, B1, B2 = 1.0 - B0, -B1, -B2
        A1, A2 = A1 * 2.0 / C, A2 * 4.0 / C**2
        B1, B2 = B1 / c, B2 / c**2
        if order == 0:
            return A * B0
        if order == 1:
            return A1 * B0 + A * B1
        return A2 * B0 + 2.0 * A1 * B1 + A * B2

    def __call__(self, k: int, r, theta, rho, eta):
        """``a_k(r, theta, rho, eta)`` (``eta`` scalar or last axis of length ``n-1``)."""
        eta = np.asarray(eta, dtype=float)
        e2 = eta**2 if self.n == 2 else np.sum(eta**2, axis=-1)
        return self.amplitude(k) * self.profile(np.asarray(rho) ** 2 + e2)

    def derivative(self, k: int, rho, eta, l: int, beta: int):
        """Exact ``d_rho^l d_eta1^beta a_k`` for ``l + beta <= 2`` (``n = 2`` variables)."""
        rho = np.asarray(rho, dtype=float)
        eta = np.asarray(eta, dtype=float)
        s = rho**2 + eta**2
        g0, g1, g2 = self.profile(s, 0), self.profile(s, 1), self.profile(s, 2)
        table = {
            (0, 0): g0,
            (1, 0): 2 * rho * g1,
            (0, 1): 2 * eta * g1,
            (2, 0): 2 * g1 + 4 * rho**2 * g2,
            (0, 2): 2 * g1 + 4 * eta**2 * g2,
            (1, 1): 4 * rho * eta * g2,
        }
        if (l, beta) not in table:
            raise DomainError("derivatives up to total order 2 are available")
        return self.amplitude(k) * table[(l, beta)]

    def hat(self, k: int, z):
        """``ahat_k(|z|)``; zero beyond the tabulated range."""
        if self.zero or self.amplitude(k) == 0.0:
            return np.zeros_like(np.asarray(z, dtype=float))
        return self.amplitude(k) * radial_hat(self, z)


@lru_cache(maxsize=16)
def _unit_seminorms(annulus: tuple, smoothness: int, n: int, samples: int) -> tuple:
    c, C = annulus
    rad = np.sqrt(np.linspace(c, C, samples))
    ang = np.linspace(0.0, 2 * np.pi, 97)
    R_, A_ = np.meshgrid(rad, ang)
    rho, eta = R_ * np.cos(A_), R_ * np.sin(A_)
    unit = SymbolFamily(0, annulus, smoothness, n, np.ones(1), {})
    return tuple(
        (key, float(np.max(np.abs(unit.derivative(0, rho, eta, *key)))))
        for key in ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
    )


def _seminorm_table(fam: SymbolFamily, samples: int = 1201) -> dict:
    # the family is a fixed profile times amplitudes, so one profile suffices
    amp = float(np.max(np.abs(fam.amplitudes)))
    return {key: amp * v for key, v in _unit_seminorms(tuple(fam.annulus), fam.smoothness, fam.n, samples)}


def make_symbol_family(K_sym: int, annulus=(1.0, 4.0), smoothness: int = 1, n: int = 2, amplitudes=None) -> SymbolFamily:
    """Default family ``a_k(rho, eta) = g(rho^2 + eta^2)`` with ``g`` a bump on ``annulus``."""
    c, C = float(annulus[0]), float(annulus[1])
    if not (0 < c < C):
        raise DomainError("annulus must satisfy 0 < c < C")
    if K_sym < 0 or n < 2:
        raise DomainError("K_sym >= 0 and n >= 2 required")
    amps = np.ones(K_sym + 1) if amplitudes is None else np.broadcast_to(np.asarray(amplitudes, dtype=float), (K_sym + 1,)).copy()
    bounds = (math.sqrt(c), math.sqrt(n * C))
    fam = SymbolFamily(int(K_sym), (c, C), int(smoothness), int(n), amps, {}, bounds)
    fam.seminorms.update(_seminorm_table(fam))
    return fam


def finite_difference_derivative(fam: SymbolFamily, k: int, rho, eta, l: int, beta: int, h: float = 1e-4):
    """Central differences for the orders in :meth:`SymbolFamily.derivative`."""
    f = lambda a, b: fam(k, 0.0, 0.0, a, b)
    if (l, beta) == (0, 0):
        return f(rho, eta)
    if (l, beta) == (1, 0):
        return (f(rho + h, eta) - f(rho - h, eta)) / (2 * h)
    if (l, beta) == (0, 1):
        return (f(rho, eta + h) - f(rho, eta - h)) / (2 * h)
    if (l, beta) == (2, 0):
        return (f(rho + h, eta) - 2 * f(rho, eta) + f(rho - h, eta)) / h**2
    if (l, beta) == (0, 2):
        return (f(rho, eta + h) - 2 * f(rho, eta) + f(rho, eta - h)) / h**2
    if (l, beta) == (1, 1):
        return (f(rho + h, eta + h) - f(rho + h, eta - h) - f(rho - h, eta + h) + f(rho - h, eta - h)) / (4 * h * h)
    raise DomainError("unsupported derivative order")


# ---------------------------------------------------------------------------
# radial Fourier transform


@lru_cache(maxsize=16)
def _hat_table(annulus: tuple, smoothness: int, n: int):
    fam = SymbolFamily(0, annulus, smoothness, n, np.ones(1), {})
    a, b = math.sqrt(annulus[0]), math.sqrt(annulus[1])
    z = np.arange(0.0, Z_MAX + _TABLE_STEP / 2, _TABLE_STEP)
    nu = n / 2.0 - 1.0
    out = np.empty_like(z)
    chunk = 2048
    for start in range(0, z.size, chunk):
        zz = z[start : start + chunk]
        nodes = int(160 + 0.6 * zz[-1] * (b - a))
        x, wq = leggauss(nodes)
        rho = 0.5 * (a + b) + 0.5 * (b - a) * x
        wq = 0.5 * (b - a) * wq
        g = fam.profile(rho**2)
        arg = zz[:, None] * rho[None, :]
        if n == 2:
            J = special.j0(arg)
            out[start : start + chunk] = 2.0 * math.pi * ((J * (g * rho)) @ wq)
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                J = special.jv(nu, arg) / np.where(arg > 0, arg, 1.0) ** nu
            J[arg == 0] = 1.0 / (2**nu * math.gamma(nu + 1))
            out[start : start + chunk] = (2 * math.pi) ** (n / 2) * ((J * (g * rho ** (n - 1))) @ wq)
    return CubicSpline(z, out), float(np.max(np.abs(out[-z.size // 16 :])))


def radial_hat(fam: SymbolFamily, z):
    """Unit-amplitude ``ahat`` at radius ``|z|`` (array of radii or of vectors)."""
    spline, _ = _hat_table(tuple(fam.annulus), fam.smoothness, fam.n)
    z = np.abs(np.asarray(z, dtype=float))
    out = np.zeros_like(z)
    m = z <= Z_MAX
    out[m] = spline(z[m])
    return out


def hat_table_tail(fam: SymbolFamily) -> float:
    """Largest ``|ahat|`` on the last sixteenth of the tabulated range."""
    return _hat_table(tuple(fam.annulus), fam.smoothness, fam.n)[1]


def fft_hat(fam: SymbolFamily, xi_half: float, N: int, z_max: float | None = None):
    """``ahat`` along the first axis via a 4x zero-padded 2-D FFT (``n = 2``).

    The symbol is sampled on ``N x N`` points of ``[-xi_half, xi_half)^2``.
    Returns ``(z, values)`` for ``0 <= z <= z_max``.  Raises
    :class:`ResolutionError` if ``z_max`` exceeds the alias-free range.
    """
    if fam.n != 2:
        raise DomainError("FFT transform is implemented for n = 2")
    d = 2.0 * xi_half / N
    alias_free = math.pi / d
    if z_max is None:
        z_max = 0.5 * alias_free
    if z_max > alias_free:
        need = int(math.ceil(2.0 * xi_half * z_max / math.pi))
        raise ResolutionError(f"grid of {N} points resolves |z| <= {alias_free:.4g}", required_size=need)
    if xi_half < math.sqrt(fam.annulus[1]):
        raise ResolutionError("frequency box does not contain the symbol support", required_size=N)
    xi = -xi_half + d * np.arange(N)
    X, Y = np.meshgrid(xi, xi, indexing="ij")
    a = fam.profile(X**2 + Y**2)
    P = 4 * N
    pad = np.zeros((P, P))
    pad[:N, :N] = a
    F = np.fft.fft2(pad) * d * d
    zax = 2.0 * math.pi * np.fft.fftfreq(P, d=d)
    # shift for the grid origin at -xi_half: e^{-i xi0 (z1 + z2)}
    phase = np.exp(1j * xi_half * zax)
    row = (F[:, 0] * phase * phase[0]).real
    keep = (zax >= 0) & (zax <= z_max)
    order = np.argsort(zax[keep])
    return zax[keep][order], row[keep][order]


# ---------------------------------------------------------------------------
# cutoff near the diagonal


@lru_cache(maxsize=8)
def _ramp_table(smoothness: int):
    # the cutoff quadrature is exact but slow; zeta only needs a smooth profile
    t = np.linspace(0.0, 1.0, 4097)
    return CubicSpline(t, build_cutoffs(smoothness).psi(1.0 + t))


@dataclass(frozen=True)
class Zeta:
    """Radial cutoff, 1 for ``|x| <= inner`` and 0 for ``|x| >= outer``."""

    inner: float = 0.5
    outer: float = 1.0
    smoothness: int = 1

    def radial(self, rho):
        rho = np.asarray(rho, dtype=float)
        t = (rho - self.inner) / (self.outer - self.inner)
        out = np.where(t <= 0.0, 1.0, 0.0)
        mid = (t > 0.0) & (t < 1.0)
        if np.any(mid):
            out[mid] = _ramp_table(self.smoothness)(t[mid])
        return out


    def __call__(self, s, sigma):
        sigma = np.asarray(sigma, dtype=float)
        s2 = sigma**2 if sigma.ndim == np.ndim(s) else np.sum(sigma**2, axis=-1)
        return self.radial(np.sqrt(np.asarray(s, dtype=float) ** 2 + s2))


def make_zeta(inner: float = 0.5, outer: float = 1.0, smoothness: int = 1) -> Zeta:
    if not 0 < inner < outer <= 1.0:
        raise DomainError("need 0 < inner < outer <= 1")
    return Zeta(inner, outer, smoothness)


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True, eq=False)
class ProperKernel:
    fam: SymbolFamily
    zeta: Zeta
    M: int
    warp: Warp
    transposed: bool = False

    @property
    def n(self) -> int:
        return self.fam.n

    def term(self, k: int, r, theta, rp, thetap):
        """The ``k``-th summand of the kernel."""
        r, theta, rp, thetap = (np.asarray(x, dtype=float) for x in (r, theta, rp, thetap))
        if self.transposed:
            r, theta, rp, thetap = rp, thetap, r, theta
        s = r - rp
        d = theta - thetap
        if self.n == 2:
            scaled = np.hypot(s, d / self.warp(r))
        else:
            scaled = np.sqrt(s**2 + np.sum(d**2, axis=-1) / self.warp(r) ** 2)
        return 2.0 ** (k * self.n) * self.fam.hat(k, 2.0**k * scaled) * self.zeta(s, d)

    def __call__(self, r, theta, rp, thetap):
        total = 0.0
        for k in range(self.M + 1):
            total = total + self.term(k, r, theta, rp, thetap)
        return total

    def radial_sum(self, z):
        """``sum_{k<=M} 2^(kn) ahat_k(2^k |z|)``."""
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for k in range(self.M + 1):
            out += 2.0 ** (k * self.n) * self.fam.hat(k, 2.0**k * z)
        return out

    def b(self, r, rho_hat, eta_hat, W: Callable | None = None):
        """Weighted symbol ``b_{M,W}(r, rho_hat, eta_hat)`` (``n = 2``)."""
        rho_hat, eta_hat = np.asarray(rho_hat, dtype=float), np.asarray(eta_hat, dtype=float)
        val = self.radial_sum(np.hypot(rho_hat, eta_hat)) * self.zeta(rho_hat, eta_hat)
        if W is not None:
            val = val * W(r) / W(np.asarray(r) - rho_hat)
        return val

    def rho_remainder(self, r, s, d):
        """``zeta(s, d) - zeta(s, d / w(r))``."""
        return self.zeta(s, d) - self.zeta(s, np.asarray(d) / self.warp(r))

    def J(self, k: int, r, theta, rp, thetap):
        r, theta, rp, thetap = (np.asarray(x, dtype=float) for x in (r, theta, rp, thetap))
        s, d = r - rp, theta - thetap
        scaled = np.hypot(s, d / self.warp(r))
        return 2.0 ** (k * self.n) * self.fam.hat(k, 2.0**k * scaled) * self.rho_remainder(r, s, d)

    def transpose(self) -> "ProperKernel":
        return ProperKernel(self.fam, self.zeta, self.M, self.warp, not self.transposed)


def kernel_KM(fam: SymbolFamily, zeta: Zeta, M: int, w: Warp) -> ProperKernel:
    if M < 0:
        raise DomainError("M must be >= 0")
    return ProperKernel(fam, zeta, int(M), w)


# ---------------------------------------------------------------------------
# remainder Schur bounds


def _weight_fn(W, w: Warp, n: int, p: float):
    expo = 0.0 if math.isinf(p) else (1.0 - n) / p
    base = (lambda r: np.ones_like(np.asarray(r, dtype=float))) if W is None else W
    return lambda r: base(r) * w(r) ** expo


_ALPHA_X, _ALPHA_W = leggauss(96)


def _rho_grid():
    fine = np.linspace(0.0, 2.0, 257)
    coarse = 2.0 * 1.01 ** np.arange(1, int(math.log(Z_MAX / 2.0) / math.log(1.01)) + 2)
    return np.concatenate([fine, coarse])


def _angular_profile(zeta: Zeta, w: Warp, W_p, n: int, R: float, r: float, rho: np.ndarray, column: bool):
    """``B(r, rho)``: the sphere integral of ``|rho-remainder| x weight`` at radius ``rho``."""
    rho = rho[:, None]
    a_max = np.where(rho[:, 0] <= 1.0, math.pi / 2, np.arcsin(np.minimum(1.0, 1.0 / np.maximum(rho[:, 0], 1e-300))))
    room = (r - R) / np.maximum(rho[:, 0], 1e-300)
    if column:
        # r_other = r + s > R  <=>  sin(alpha) < room
        lo = -a_max
        hi = np.minimum(a_max, np.arcsin(np.clip(room, -1.0, 1.0)))
    else:
        # r_other = r - s > R  <=>  sin(alpha) > -room
        lo = np.maximum(-a_max, np.arcsin(np.clip(-room, -1.0, 1.0)))
        hi = a_max
    span = np.maximum(hi - lo, 0.0)[:, None]
    alpha = lo[:, None] + 0.5 * span * (_ALPHA_X + 1.0)
    wts = 0.5 * span * _ALPHA_W
    s = -rho * np.sin(alpha)
    sig = rho * np.cos(alpha)
    other = r + s if column else r - s
    w_scale = w(other) if column else w(np.full_like(s, r))
    rem = np.abs(zeta.radial(np.sqrt(s**2 + (w_scale * sig) ** 2)) - zeta.radial(np.sqrt(s**2 + sig**2)))
    if column:
        ratio = W_p(other) / W_p(r) * (w(other) / w(r)) ** (n - 1)
    else:
        ratio = W_p(r) / W_p(other) * (w(r) / w(other)) ** (n - 1)
    jac = np.cos(alpha) ** (n - 2) if n > 2 else 1.0
    return sphere_area(n - 1) * np.sum(wts * rem * ratio * jac, axis=1)


@lru_cache(maxsize=64)
def _profiles(zeta: Zeta, w: Warp, W_key, n: int, p: float, R: float, r_samples: tuple):
    W_p = _weight_fn(W_key, w, n, p)
    rho = _rho_grid()
    rows = np.array([_angular_profile(zeta, w, W_p, n, R, r, rho, False) for r in r_samples])
    cols = np.array([_angular_profile(zeta, w, W_p, n, R, r, rho, True) for r in r_samples])
    return rho, rows, cols


_PANEL_X, _PANEL_W = leggauss(8)


def remainder_schur(fam: SymbolFamily, zeta: Zeta, k: int, W=None, w: Warp | None = None, p: float = 2.0,
                    r_range: tuple | None = None, samples: int = 33, detail: bool = False):
    """Schur bound ``max(sup row, sup column)`` of the weighted remainder kernel at level ``k``.

    The kernel is taken on ``L^p(dr dtheta)`` after conjugation by
    ``W w^((1-n)/p)``; rows and columns are integrated in the scaled variables
    ``(r - r', (theta - theta') / w(r))``.
    """
    if w is None:
        raise DomainError("a warp is required")
    if k > fam.K_sym:
        raise DomainError("k exceeds the family length")
    R, R_max = r_range if r_range is not None else (w.r_range[0], w.r_range[1])
    n = fam.n
    amp = fam.amplitude(k)
    if amp == 0.0:
        return (0.0, 0.0, 0.0) if detail else 0.0
    r_s = tuple(float(x) for x in np.linspace(R, R_max, samples + 1)[1:])
    rho, rows, cols = _profiles(zeta, w, W, n, float(p), float(R), r_s)
    hi = min(rho[-1], Z_MAX * 2.0**-k)
    width = 0.5 * 2.0**-k
    edges = np.arange(0.0, hi + width, width)
    edges[-1] = min(edges[-1], hi)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    x = (mid + half * _PANEL_X).ravel()
    q = (half * _PANEL_W).ravel()
    kern = 2.0 ** (k * n) * np.abs(fam.hat(k, 2.0**k * x)) * x ** (n - 1) * q
    row = max(float(np.dot(kern, np.interp(x, rho, b))) for b in rows)
    col = max(float(np.dot(kern, np.interp(x, rho, b))) for b in cols)
    return (max(row, col), row, col) if detail else max(row, col)


def remainder_support_floor(zeta: Zeta, w: Warp, r_samples, count: int = 20000, seed: int = 0) -> float:
    """Measured lower bound of ``|r - r'| + |theta - theta'| / w(r)`` where the remainder is nonzero."""
    rng = np.random.default_rng(seed)
    best = np.inf
    for r in np.atleast_1d(r_samples):
        wr = float(w(r))
        s = rng.uniform(-1, 1, count)
        d = rng.uniform(-1, 1, count) * max(1.0, wr)
        rem = zeta(s, d) - zeta(s, d / wr)
        nz = np.abs(rem) > 0
        if np.any(nz):
            best = min(best, float(np.min(np.abs(s[nz]) + np.abs(d[nz]) / wr)))
    return best


# ---------------------------------------------------------------------------
# derivative bound of the weighted symbol


@dataclass(frozen=True)
class SymbolBound:
    constant: float
    M: int
    samples: int
    passed: bool


def symbol_cz_bound(kern: ProperKernel, W=None, samples: int = 4000, seed: int = 0, r_range=None) -> SymbolBound:
    """Smallest ``C`` with ``|grad b_{M,W}| <= C (|rho| + |eta|)^(-n-1)`` on samples.

    Samples have ``|rho| + |eta|`` log-uniform in ``[2^-M, 1)``; gradients are
    central differences with a step proportional to the radius.
    """
    rng = np.random.default_rng(seed)
    lo = 2.0 ** -kern.M
    l1 = np.exp(rng.uniform(math.log(lo), 0.0, samples))
    ang = rng.uniform(0, 2 * np.pi, samples)
    # point on the l1 sphere of radius l1 in direction ang
    c, s = np.cos(ang), np.sin(ang)
    scale = l1 / (np.abs(c) + np.abs(s))
    rho, eta = scale * c, scale * s
    rr = r_range or (kern.warp.r_range[0] + 1.0, kern.warp.r_range[1] - 1.0)
    r = rng.uniform(rr[0], rr[1], samples)
    h = 1e-4 * l1
    gr = (kern.b(r, rho + h, eta, W) - kern.b(r, rho - h, eta, W)) / (2 * h)
    ge = (kern.b(r, rho, eta + h, W) - kern.b(r, rho, eta - h, W)) / (2 * h)
    C = float(np.max(np.hypot(gr, ge) * l1 ** (kern.n + 1)))
    return SymbolBound(C, kern.M, samples, bool(np.isfinite(C)))


def term_profile(kern: ProperKernel, z: float) -> np.ndarray:
    """Gradient magnitudes of each summand ``2^(kn) ahat(2^k |z|)`` at radius ``z``."""
    h = 1e-5 * z
    out = []
    for k in range(kern.M + 1):
        f = lambda x: 2.0 ** (k * kern.n) * kern.fam.hat(k, 2.0**k * x)
        out.append(abs(float(f(np.array(z + h)) - f(np.array(z - h)))) / (2 * h))
    return np.array(out)


# ---------------------------------------------------------------------------
# discretized operator (n = 2)


def max_step(fam: SymbolFamily, M: int) -> float:
    """Largest grid step resolving the frequencies ``|xi| <= 2^M sqrt(C)`` with a 1.25 margin."""
    return math.pi / (1.25 * 2.0**M * math.sqrt(fam.annulus[1]))


@dataclass(frozen=True, eq=False)
class KernelGrid:
    """``W(r) B_M W(r)^-1`` on a box ``(r0, r0 + L) x (0, w(r0) L)``, ``N x N`` cells.

    Applications cost one FFT convolution in ``theta`` per pair of radial rows.
    """

    kern: ProperKernel
    r0: float
    L: float
    N: int
    r: np.ndarray
    theta: np.ndarray
    nu: np.ndarray
    weight: np.ndarray
    T: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def cell_nu(self) -> np.ndarray:
        """Quadrature weight of each cell, shape ``(N, N)``."""
        return np.repeat(self.nu[:, None], self.N, axis=1)

    def apply(self, u):
        u = np.asarray(u)
        U = np.fft.rfft(u, n=2 * self.N, axis=1)
        out = np.einsum("eij,je->ie", self.T, U)
        return np.fft.irfft(out, n=2 * self.N, axis=1)[:, : self.N] if not np.iscomplexobj(u) else self._complex(u)

    def _complex(self, u):
        return self.apply(u.real) + 1j * self.apply(u.imag)

    def apply_adjoint(self, v):
        """Adjoint with respect to the ``nu``-weighted inner product."""
        v = np.asarray(v)
        if np.iscomplexobj(v):
            return self.apply_adjoint(v.real) + 1j * self.apply_adjoint(v.imag)
        x = v * self.nu[:, None]
        X = np.fft.rfft(x, n=2 * self.N, axis=1)
        out = np.einsum("eij,ie->je", np.conj(self.T), X)
        return np.fft.irfft(out, n=2 * self.N, axis=1)[:, : self.N] / self.nu[:, None]

    def inner(self, u, v) -> float:
        return float(np.sum(u * np.conj(v) * self.nu[:, None]).real)

    def lp_norm(self, u, p: float) -> float:
        a = np.abs(u)
        if math.isinf(p):
            return float(np.max(a))
        return float(np.sum(a**p * self.nu[:, None]) ** (1.0 / p))

    def scaled_coords(self):
        """Cell centers in ``(r - r0, theta / w(r0))``."""
        return np.meshgrid(self.r - self.r0, self.theta / float(self.kern.warp(self.r0)), indexing="ij")


def build_kernel_grid(kern: ProperKernel, r0: float, L: float, N: int = 128, W=None) -> KernelGrid:
    """Sample ``kern`` on the box and precompute its ``theta`` transforms."""
    if kern.n != 2:
        raise DomainError("the discretized operator is implemented for n = 2")
    h = L / N
    hmax = max_step(kern.fam, kern.M)
    if h > hmax:
        raise ResolutionError(f"step {h:.4g} exceeds {hmax:.4g}", required_size=int(math.ceil(L / hmax)))
    w = kern.warp
    w0 = float(w(r0))
    r = r0 + (np.arange(N) + 0.5) * h
    ht = w0 * h
    theta = (np.arange(N) + 0.5) * ht
    d = np.zeros(2 * N)
    d[:N] = np.arange(N) * ht
    d[N + 1 :] = (np.arange(1, N) - N) * ht
    # zeta only sees unscaled differences, so it is tabulated on (i - j, d)
    dr = (np.arange(2 * N - 1) - (N - 1)) * h
    zt = kern.zeta(dr[:, None], d[None, :])
    idx = np.arange(N)[:, None] - np.arange(N)[None, :] + (N - 1)
    scale = w(r)[None, :, None] if kern.transposed else w(r)[:, None, None]
    G = kern.radial_sum(np.hypot(dr[idx][:, :, None], d[None, None, :] / scale)) * zt[idx]
    G[:, :, N] = 0.0
    nu = w(r) ** (1 - kern.n) * h * ht
    Wv = np.ones(N) if W is None else np.asarray(W(r), dtype=float)
    G = G * (Wv[:, None] / Wv[None, :] * nu[None, :])[:, :, None]
    T = np.ascontiguousarray(np.fft.rfft(G, axis=2).transpose(2, 0, 1))
    return KernelGrid(kern, float(r0), float(L), int(N), r, theta, nu, Wv, T)


@dataclass(frozen=True, eq=False)
class ConvolutionGrid:
    """Translation-invariant operator for a constant warp ``w = 1``: one 2-D FFT per application."""

    kern: ProperKernel
    L: float
    N: int
    Kh: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def nu(self) -> np.ndarray:
        return np.full(self.N, self.h * self.h)

    @property
    def cell_nu(self) -> np.ndarray:
        return np.full((self.N, self.N), self.h * self.h)

    def apply(self, u):
        P = 2 * self.N
        U = np.fft.fft2(u, s=(P, P))
        out = np.fft.ifft2(self.Kh * U)[: self.N, : self.N]
        return out if np.iscomplexobj(u) else out.real

    def apply_adjoint(self, v):
        P = 2 * self.N
        V = np.fft.fft2(v, s=(P, P))
        out = np.fft.ifft2(np.conj(self.Kh) * V)[: self.N, : self.N]
        return out if np.iscomplexobj(v) else out.real

    inner = KernelGrid.inner
    lp_norm = KernelGrid.lp_norm

    def scaled_coords(self):
        x = (np.arange(self.N) + 0.5) * self.h
        return np.meshgrid(x, x, indexing="ij")


def build_convolution_grid(kern: ProperKernel, L: float, N: int) -> ConvolutionGrid:
    if kern.n != 2 or np.any(kern.warp(np.linspace(*kern.warp.r_range, 9)) != 1.0):
        raise DomainError("the convolution form needs n = 2 and w = 1")
    h = L / N
    hmax = max_step(kern.fam, kern.M)
    if h > hmax:
        raise ResolutionError(f"step {h:.4g} exceeds {hmax:.4g}", required_size=int(math.ceil(L / hmax)))
    P = 2 * N
    off = np.fft.fftfreq(P, d=1.0 / P) * h
    X, Y = np.meshgrid(off, off, indexing="ij")
    Rr = np.hypot(X, Y)
    K = kern.radial_sum(Rr) * kern.zeta.radial(Rr) * h * h
    return ConvolutionGrid(kern, float(L), int(N), np.fft.fft2(K))


def apply_BM(grid: KernelGrid, u):
    return grid.apply(u)


def l2_norm_estimate(grid: KernelGrid, iterations: int = 30, tol: float = 1e-6, seed: int = 0) -> float:
    """Operator norm on ``L^2(nu)`` by power iteration on ``B* B``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((grid.N, grid.N))
    x /= math.sqrt(grid.inner(x, x))
    est = 0.0
    for _ in range(iterations):
        y = grid.apply_adjoint(grid.apply(x))
        nrm = math.sqrt(max(grid.inner(y, y), 0.0))
        if nrm == 0.0:
            return 0.0
        new = math.sqrt(nrm)
        x = y / nrm
        if est > 0 and abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return est


# ---------------------------------------------------------------------------
# scans


@dataclass(frozen=True)
class OperatorScan:
    tag: str
    grid: tuple
    values: np.ndarray
    corpus_size: int

    @property
    def max(self) -> float:
        return float(np.max(self.values)) if self.values.size else 0.0


def weak11_scan(grid: KernelGrid, corpus: Sequence, lambdas=None, norm: float | None = None, tag: str = "weak11") -> OperatorScan:
    """Max over ``lambda`` of ``lambda nu(|Bu| > lambda) / ||u||_1`` per corpus member.

    The operator is divided by its measured ``L^2(nu)`` norm (``norm``).
    """
    nrm = l2_norm_estimate(grid) if norm is None else norm
    out = []
    for u in corpus:
        l1 = grid.lp_norm(u, 1.0)
        if nrm == 0.0 or l1 == 0.0:
            out.append(0.0)
            continue
        v = np.abs(grid.apply(u)) / nrm
        cell = grid.cell_nu.ravel()
        vals = v.ravel()
        if lambdas is None:
            # the distribution function only jumps at the sampled values
            order = np.argsort(vals)[::-1]
            mass = np.cumsum(cell[order])
            lam = vals[order]
            # nu(|Bu| > lam_j) = mass of strictly larger values
            prev = np.concatenate([[0.0], mass[:-1]])
            out.append(float(np.max(lam * prev)) / l1)
        else:
            lam = np.asarray(lambdas, dtype=float)
            meas = np.array([np.sum(cell[vals > t]) for t in lam])
            out.append(float(np.max(lam * meas)) / l1)
    return OperatorScan(tag, tuple(lambdas) if lambdas is not None else (), np.array(out), len(out))


def lp_scan(grid: KernelGrid, corpus: Sequence, p_list: Sequence[float], tag: str = "lp") -> OperatorScan:
    """``max_u ||W B W^-1 u||_p / ||u||_p`` for each ``p`` in ``(1, 2]``."""
    ps = [float(p) for p in p_list]
    if any(not (1.0 < p <= 2.0) for p in ps):
        raise DomainError("p must lie in (1, 2]")
    outs = [grid.apply(u) for u in corpus]
    vals = []
    for p in ps:
        best = 0.0
        for u, v in zip(corpus, outs):
            nu_ = grid.lp_norm(u, p)
            if nu_ > 0:
                best = max(best, grid.lp_norm(v, p) / nu_)
        vals.append(best)
    return OperatorScan(tag, tuple(ps), np.array(vals), len(corpus))


def kernel_corpus(grid: KernelGrid, rng: np.random.Generator, size: int = 24) -> list:
    """Wave packets at the multiplier peaks, bumps and smooth random fields on the grid."""
    X, Y = grid.scaled_coords()
    L = grid.L
    out = []
    peaks = [math.sqrt(2.0) * 2.0**k for k in range(grid.kern.M + 1)]
    peaks = [f for f in peaks if 6 * math.pi / f <= L and f * grid.h <= 1.5]
    for f in peaks:
        for _ in range(2):
            x0, y0 = rng.uniform(0.4 * L, 0.6 * L, 2)
            s = L / 6.5
            a = rng.uniform(0, 2 * np.pi)
            env = np.exp(-((X - x0) ** 2 + (Y - y0) ** 2) / (2 * s * s))
            out.append(env * np.cos(f * (np.cos(a) * X + np.sin(a) * Y)))
    while len(out) < size:
        kind = len(out) % 2
        if kind == 0:
            x0, y0 = rng.uniform(0.2 * L, 0.8 * L, 2)
            s = L * 2.0 ** rng.uniform(-6, -2)
            out.append(np.exp(-((X - x0) ** 2 + (Y - y0) ** 2) / (2 * s * s)))
        else:
            F = rng.standard_normal((grid.N, grid.N))
            kx = np.fft.fftfreq(grid.N)[:, None]
            ky = np.fft.fftfreq(grid.N)[None, :]
            damp = np.exp(-(kx**2 + ky**2) * (grid.N / 8.0) ** 2)
            out.append(np.fft.ifft2(np.fft.fft2(F) * damp).real)
    return out


def bump(grid: KernelGrid, width: float, center=None) -> np.ndarray:
    """``L^1(nu)``-normalized indicator of a square of side ``width`` (scaled coordinates)."""
    X, Y = grid.scaled_coords()
    if center is None:
        c = (grid.N // 2 + 0.5) * grid.h
        center = (c, c)
    cx, cy = center
    half = max(width, grid.h) / 2 * (1 + 1e-9)
    u = ((np.abs(X - cx) <= half) & (np.abs(Y - cy) <= half)).astype(float)
    return u / grid.lp_norm(u, 1.0)


# ---------------------------------------------------------------------------
# integral condition for translation-type kernels


def hormander_constant(n: int) -> float:
    """``|S^(n-1)| int_2^inf u^(n-1) (u-1)^(-n-1) du``."""
    val, _ = integrate.quad(lambda u: u ** (n - 1) * (u - 1.0) ** (-n - 1), 2.0, np.inf)
    return sphere_area(n) * val


@dataclass(frozen=True)
class HormanderResult:
    integral: float
    tail_bound: float
    C_H: float
    c_n: float

    @property
    def bound(self) -> float:
        return self.c_n * self.C_H

    @property
    def passed(self) -> bool:
        return self.integral <= self.bound


def _gradient_y(K, x, y, n, eps=1e-6):
    g = []
    for a in range(n):
        e = np.zeros(n)
        e[a] = eps * max(1.0, float(np.linalg.norm(y)) + 1.0)
        g.append((K(x, y + e) - K(x, y - e)) / (2 * e[a]))
    return np.sqrt(np.sum(np.square(g), axis=0))


def measure_gradient_constant(K: Callable, t: float, n: int, count: int = 4000, seed: int = 0) -> float:
    """``sup |d_y K(x, y)| |x - y|^(n+1)`` over ``|x| > 2t``, ``|y| < t`` samples."""
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((count, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    x = dirs * (2 * t * np.exp(rng.uniform(0, math.log(32.0), count)))[:, None]
    ydir = rng.standard_normal((count, n))
    ydir /= np.linalg.norm(ydir, axis=1, keepdims=True)
    y = ydir * (t * rng.uniform(0, 1, count) ** (1.0 / n))[:, None]
    best = 0.0
    for xi, yi in zip(x, y):
        g = float(_gradient_y(K, xi, yi, n))
        best = max(best, g * float(np.linalg.norm(xi - yi)) ** (n + 1))
    return best


def hormander_check(K: Callable, t: float, Y: Callable, n: int = 2, C_H: float | None = None,
                    outer: float = 64.0, radial_nodes: int = 48, angles: int = 256, seed: int = 0) -> HormanderResult:
    """``int_{|x| > 2t} |K(x, Y(x)) - K(x, 0)| dx`` on ``2t < |x| < outer t`` plus a tail bound.

    ``K(x, y)`` takes points of ``R^n`` (``n`` in {2, 3}).  ``C_H`` is measured
    when not given; a supplied ``C_H`` smaller than the measured gradient
    constant raises :class:`PreconditionError`.
    """
    if n not in (2, 3):
        raise DomainError("n must be 2 or 3")
    measured = measure_gradient_constant(K, t, n, seed=seed)
    if not np.isfinite(measured):
        raise PreconditionError("gradient bound is not finite")
    if C_H is None:
        C_H = measured
    elif measured > C_H * (1 + 1e-3):
        raise PreconditionError(f"measured gradient constant {measured:.4g} exceeds C_H = {C_H:.4g}")
    # radial panels, geometric in |x|
    edges = 2 * t * (outer / 2) ** np.linspace(0, 1, 17)
    gx, gw = leggauss(radial_nodes)
    rad, rw = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        rad.append(0.5 * (a + b) + 0.5 * (b - a) * gx)
        rw.append(0.5 * (b - a) * gw)
    rad, rw = np.concatenate(rad), np.concatenate(rw)
    if n == 2:
        phi = 2 * np.pi * np.arange(angles) / angles
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        dw = np.full(angles, 2 * np.pi / angles)
    else:
        cx, cw = leggauss(angles // 8)
        phi = 2 * np.pi * np.arange(angles // 4) / (angles // 4)
        ct, ph = np.meshgrid(cx, phi, indexing="ij")
        st = np.sqrt(1 - ct**2)
        dirs = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
        dw = (cw[:, None] * np.full(phi.size, 2 * np.pi / phi.size)[None, :]).ravel()
    total = 0.0
    for rho, wr in zip(rad, rw):
        x = rho * dirs
        y = np.array([np.asarray(Y(xi), dtype=float) for xi in x])
        vals = np.abs(K(x.T, y.T) - K(x.T, np.zeros_like(y.T)))
        total += wr * rho ** (n - 1) * float(np.dot(vals, dw))
    tail_int, _ = integrate.quad(lambda u: u ** (n - 1) * (u - 1.0) ** (-n - 1), outer, np.inf)
    tail = sphere_area(n) * C_H * tail_int
    return HormanderResult(float(total), float(tail), float(C_H), hormander_constant(n))


def shift_kernel(f: Callable) -> Callable:
    """``K(x, y) = f(x - y)`` for arrays with the coordinate axis first."""
    return lambda x, y: f(np.asarray(x) - np.asarray(y))
