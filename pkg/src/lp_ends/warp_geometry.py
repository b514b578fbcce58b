"""Warp profiles, temperate weights, the discretized end and its Laplacians.

The end is ``(R, R_max) x T^(n-1)`` with metric ``dr^2 + dtheta^2 / w(r)^2``.
Two measures live on it: the Riemannian one ``dg = w^(1-n) dr dtheta`` and
the flattened one ``dtg = dr dtheta``.  Separation of variables reduces the
Laplacian to one tridiagonal radial operator per angular wave vector ``m``::

    L_m u = -w^(n-1) d/dr ( w^(1-n) du/dr ) + |m|^2 w^2 u

discretized by conservative finite volumes on a cell-centered grid with
homogeneous Dirichlet data at both ends.  The modified operator is the
conjugate ``w^((1-n)/2) L w^((n-1)/2)``; after the diagonal similarity both
variants share one symmetric tridiagonal matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import make_interp_spline
from scipy.optimize import brentq

from .errors import DomainError, GridTooCoarse, InvalidMode, InvalidWarp, NotTemperate

WARP_KINDS = ("conical", "hyperbolic", "flat", "custom")
WEIGHT_KINDS = ("polynomial_s", "warp_power_γ", "constant")
_WEIGHT_ALIASES = {"polynomial": "polynomial_s", "warp_power": "warp_power_γ"}

# a custom profile whose unit-scale ratio exceeds this is rejected
SLOW_VARIATION_LIMIT = 1e3


# ---------------------------------------------------------------------------
# warps


@dataclass(frozen=True, eq=False)
class Warp:
    """A positive radial profile ``w`` with measured regularity constants.

    Attributes
    ----------
    kind, params
        How the warp was built.
    C_diag
        Largest ``w(r)/w(r')`` over ``|r - r'| <= 1`` on the sampling range.
    C_der
        Largest ``|w^(k)(r)| / w(r)`` for ``1 <= k <= k_max``.
    C_exp
        Smallest ``C >= 1`` with ``w(r) >= exp(-C r) / C`` on the range.
    sup
        Maximum of ``w`` on the range.
    """

    kind: str
    params: tuple
    r_range: tuple[float, float]
    k_max: int
    C_diag: float
    C_der: float
    C_exp: float
    sup: float
    _value: Callable = field(repr=False)
    _log_derivs: Callable = field(repr=False)

    def __call__(self, r):
        return self._value(np.asarray(r, dtype=float))

    def derivative(self, r, k: int):
        """k-th derivative of ``w`` at ``r`` (``k = 0`` returns ``w``)."""
        r = np.asarray(r, dtype=float)
        if k == 0:
            return self(r)
        return self(r) * _ratio_from_log(self._log_derivs(r, k), k)

    def derivative_ratio(self, r, k: int):
        """``w^(k)(r) / w(r)`` evaluated stably through ``log w``."""
        r = np.asarray(r, dtype=float)
        if k == 0:
            return np.ones_like(r)
        return _ratio_from_log(self._log_derivs(r, k), k)


def _ratio_from_log(g, k):
    # w^(k)/w from derivatives g1..gk of log w (complete Bell polynomials)
    g1 = g[0]
    if k == 1:
        return g1
    g2 = g[1]
    if k == 2:
        return g2 + g1**2
    g3 = g[2]
    if k == 3:
        return g3 + 3 * g1 * g2 + g1**3
    g4 = g[3]
    if k == 4:
        return g4 + 4 * g1 * g3 + 3 * g2**2 + 6 * g1**2 * g2 + g1**4
    raise DomainError("derivative order above 4 is not supported")


def _dense_grid(r_range, per_unit=128):
    a, b = float(r_range[0]), float(r_range[1])
    n = max(int(np.ceil((b - a) * per_unit)), 8) + 1
    return np.linspace(a, b, n)


def _slow_variation(logw, step):
    """exp of the largest |log w(r) - log w(r')| over |r - r'| <= 1."""
    J = min(int(np.floor(1.0 / step + 1e-9)), len(logw) - 1)
    best = 0.0
    for j in range(1, J + 1):
        best = max(best, float(np.max(np.abs(logw[j:] - logw[:-j]))))
    return float(np.exp(best))


def _exp_lower_constant(r, logw):
    def gap(C):
        return float(np.min(logw + C * r) + np.log(C))

    if gap(1.0) >= 0:
        return 1.0
    hi = 2.0
    while gap(hi) < 0:
        hi *= 2.0
        if hi > 1e8:
            return float("inf")
    return float(brentq(gap, 1.0, hi, xtol=1e-12))


def make_warp(
    kind: str,
    params: Sequence = (),
    r_range: tuple[float, float] = (1.0, 10.0),
    k_max: int = 3,
    validate: bool = True,
) -> Warp:
    """Build a warp and measure its constants by dense sampling of ``r_range``.

    Kinds: ``conical`` (``1/r``), ``hyperbolic`` (``exp(-a r)``, ``a`` defaults
    to 1), ``flat`` (constant, default 1) and ``custom``.  A custom warp takes
    either a single callable or a pair ``(r_samples, w_samples)``; its
    derivatives come from a quintic spline of ``log w``.
    """
    if kind not in WARP_KINDS:
        raise InvalidWarp(f"unknown warp kind {kind!r}")
    if not 1 <= k_max <= 4:
        raise InvalidWarp("k_max must lie in 1..4")
    a, b = float(r_range[0]), float(r_range[1])
    if not b > a:
        raise InvalidWarp("empty sampling range")
    params = tuple(params)

    if kind == "flat":
        c = float(params[0]) if params else 1.0
        if c <= 0:
            raise InvalidWarp("nonpositive profile value")
        value = lambda r: np.full(np.shape(r), c)
        logd = lambda r, k: [np.zeros(np.shape(r))] * k
    elif kind == "hyperbolic":
        rate = float(params[0]) if params else 1.0
        value = lambda r: np.exp(-rate * r)
        logd = lambda r, k: [np.full(np.shape(r), -rate)] + [np.zeros(np.shape(r))] * (k - 1)
    elif kind == "conical":
        if a <= 0:
            raise InvalidWarp("conical warp needs r > 0")
        value = lambda r: 1.0 / r
        # log w = -log r
        logd = lambda r, k: [(-1) ** j * _fact(j - 1) / r**j for j in range(1, k + 1)]
    else:
        value, logd = _custom_profile(params, a, b)

    r = _dense_grid((a, b))
    wv = value(r)
    if not np.all(np.isfinite(wv)) or np.any(wv <= 0):
        raise InvalidWarp("nonpositive profile value")
    logw = np.log(wv)
    C_diag = _slow_variation(logw, r[1] - r[0])
    if validate and kind == "custom" and C_diag > SLOW_VARIATION_LIMIT:
        raise InvalidWarp(f"slow-variation ratio {C_diag:.3g} exceeds {SLOW_VARIATION_LIMIT:g}")
    g = logd(r, k_max)
    C_der = max(float(np.max(np.abs(_ratio_from_log(g, k)))) for k in range(1, k_max + 1))
    C_exp = _exp_lower_constant(r, logw)
    return Warp(kind, params, (a, b), k_max, C_diag, C_der, C_exp, float(np.max(wv)), value, logd)


def _fact(j):
    out = 1
    for i in range(2, j + 1):
        out *= i
    return out


def _custom_profile(params, a, b):
    if len(params) == 1 and callable(params[0]):
        fn = params[0]
        rs = _dense_grid((a - 1.0, b + 1.0), per_unit=64)
        vals = np.asarray(fn(rs), dtype=float)
        value = lambda r: np.asarray(fn(r), dtype=float)
    elif len(params) == 2:
        rs = np.asarray(params[0], dtype=float)
        vals = np.asarray(params[1], dtype=float)
        if rs.ndim != 1 or rs.shape != vals.shape or len(rs) < 6:
            raise InvalidWarp("custom samples need matching 1-D arrays of length >= 6")
        value = None
    else:
        raise InvalidWarp("custom warp needs a callable or (r_samples, w_samples)")
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        raise InvalidWarp("nonpositive profile value")
    spl = make_interp_spline(rs, np.log(vals), k=5)
    if value is None:
        value = lambda r: np.exp(spl(r))
    derivs = [spl.derivative(j) for j in range(1, 5)]
    logd = lambda r, k: [d(r) for d in derivs[:k]]
    return value, logd


@dataclass(frozen=True)
class WarpReport:
    """Measured warp constants and the pass flag of each inequality."""

    constants: dict
    passes: dict
    limit: float

    @property
    def passed(self) -> bool:
        return all(self.passes.values())


def verify_warp(w: Warp, r_range: tuple[float, float], k_max: int = 3, limit: float = SLOW_VARIATION_LIMIT) -> WarpReport:
    """Measure boundedness, slow variation, derivative control and the
    exponential lower bound on a dense grid of ``r_range``.

    Each inequality passes when its measured constant is finite and at most
    ``limit``.
    """
    r = _dense_grid(r_range)
    wv = w(r)
    logw = np.log(wv)
    consts = {
        "bound": float(np.max(wv)),
        "C_diag": _slow_variation(logw, r[1] - r[0]),
        "C_der": max(float(np.max(np.abs(w.derivative_ratio(r, k)))) for k in range(1, k_max + 1)),
        "C_exp": _exp_lower_constant(r, logw),
    }
    passes = {key: bool(np.isfinite(v) and v <= limit) for key, v in consts.items()}
    return WarpReport(consts, passes, limit)


# ---------------------------------------------------------------------------
# temperate weights

_MOLLIFIER_NODES, _MOLLIFIER_WEIGHTS = leggauss(64)


def mollifier_weights():
    """Quadrature nodes and weights of the normalized bump ``c exp(-1/(1-s^2))``."""
    s = _MOLLIFIER_NODES
    om = np.exp(-1.0 / (1.0 - s**2))
    q = _MOLLIFIER_WEIGHTS * om
    return s, q / q.sum()


@dataclass(frozen=True, eq=False)
class TemperateWeight:
    """A radial weight ``W`` with its temperance constants.

    ``W(r') <= C W(r) (1 + |r - r'|)^M`` holds on the scanned range with the
    reported ``C`` and ``M``.  ``C_local`` bounds ``W(r)/W(r')`` for
    ``|r - r'| <= 1``; ``C_prime`` is the equivalence constant between ``W``
    and its mollification.
    """

    kind: str
    params: tuple
    r_range: tuple[float, float]
    C: float
    M: float
    C_local: float
    C_prime: float
    temperate: bool
    _value: Callable = field(repr=False)

    def __call__(self, r):
        return self._value(np.asarray(r, dtype=float))

    def smoothed(self, r):
        """Mollified weight ``int W(r - s) omega(s) ds``."""
        r = np.asarray(r, dtype=float)
        s, q = mollifier_weights()
        return np.tensordot(self._value(r[..., None] - s), q, axes=([-1], [0]))


def _temperance_scan(logW, step, d_max):
    J = min(int(round(d_max / step)), len(logW) - 1)
    d = step * np.arange(1, J + 1)
    g = np.array([np.max(np.abs(logW[j:] - logW[:-j])) for j in range(1, J + 1)])
    ratio = g / np.log1p(d)
    return d, g, ratio


def make_temperate_weight(
    kind: str,
    params: Sequence = (),
    warp: Warp | None = None,
    r_range: tuple[float, float] = (1.0, 33.0),
    require_temperate: bool = True,
) -> TemperateWeight:
    """Build a weight and certify temperance by a grid scan.

    With ``C = 1`` fixed, ``M`` is the largest ``log(W(r')/W(r)) / log(1+|r-r'|)``
    over the scan.  A weight is declared not temperate when ``M`` measured
    over the full window exceeds ``1.2 M_half + 0.05``, ``M_half`` being the
    value over separations up to half the window: a polynomial bound
    saturates, an exponential one keeps growing.  The scan window must be at
    least 32 long for the verdict to mean anything.

    ``require_temperate=False`` keeps non-temperate weights (for example
    powers of a hyperbolic warp), which still satisfy the local comparability
    used by properly supported kernels.
    """
    kind = _WEIGHT_ALIASES.get(kind, kind)
    if kind not in WEIGHT_KINDS:
        raise DomainError(f"unknown weight kind {kind!r}")
    params = tuple(params)
    if kind == "constant":
        c = float(params[0]) if params else 1.0
        if c <= 0:
            raise DomainError("weight must be positive")
        value = lambda r: np.full(np.shape(r), c)
    elif kind == "polynomial_s":
        s = float(params[0]) if params else 1.0
        value = lambda r: (1.0 + np.abs(r)) ** s
    else:
        if warp is None:
            raise DomainError("warp_power weight needs a warp")
        gamma = float(params[0]) if params else 1.0
        value = lambda r: warp(r) ** gamma

    a, b = float(r_range[0]), float(r_range[1])
    step = 1.0 / 16.0
    r = np.arange(a, b + 0.5 * step, step)
    W = value(r)
    if np.any(~np.isfinite(W)) or np.any(W <= 0):
        raise DomainError("weight must be positive and finite on the scan range")
    logW = np.log(W)
    window = b - a
    _, _, ratio = _temperance_scan(logW, step, window)
    n_half = max(1, int(round(0.5 * window / step)))
    M_full = float(np.max(ratio))
    M_half = float(np.max(ratio[:n_half]))
    temperate = not (M_full > 1.2 * M_half + 0.05)
    if require_temperate and not temperate:
        raise NotTemperate(f"{kind}{params}: temperance exponent keeps growing ({M_half:.3g} -> {M_full:.3g})")
    C_local = _slow_variation(logW, step)

    wt = TemperateWeight(kind, params, (a, b), 1.0, M_full, C_local, 1.0, temperate, value)
    inner = r[(r >= a + 1.0) & (r <= b - 1.0)]
    if inner.size == 0:
        inner = r
    ratio_s = wt.smoothed(inner) / value(inner)
    C_prime = float(max(np.max(ratio_s), np.max(1.0 / ratio_s)))
    return TemperateWeight(kind, params, (a, b), 1.0, M_full, C_local, C_prime, temperate, value)


def check_temperance(W: TemperateWeight, r: np.ndarray) -> float:
    """Largest ``W(r') / (C W(r) (1+|r-r'|)^M)`` over grid pairs (<= 1 when valid)."""
    r = np.asarray(r, dtype=float)
    lw = np.log(W(r))
    diff = lw[None, :] - lw[:, None] - W.M * np.log1p(np.abs(r[None, :] - r[:, None]))
    return float(np.exp(np.max(diff)) / W.C)


# ---------------------------------------------------------------------------
# discretized end


@dataclass(frozen=True, eq=False)
class ModelEnd:
    """Cell-centered radial grid times a uniform angular grid on ``T^(n-1)``.

    Grid functions are arrays of shape ``(N,) + (mode_count,) * (n - 1)``.
    """

    R: float
    R_max: float
    N: int
    n: int
    mode_count: int
    warp: Warp
    dr: float
    r: np.ndarray
    r_faces: np.ndarray
    dtheta: float
    dg_weights: np.ndarray
    dtg_weights: np.ndarray

    @property
    def shape(self) -> tuple:
        return (self.N,) + (self.mode_count,) * (self.n - 1)

    @property
    def angular_cell(self) -> float:
        return self.dtheta ** (self.n - 1)

    @property
    def theta(self) -> np.ndarray:
        return self.dtheta * np.arange(self.mode_count)

    def weights(self, measure: str) -> np.ndarray:
        """Radial quadrature weights; each angular node carries the same weight."""
        if measure == "dg":
            return self.dg_weights
        if measure in ("dtildeg", "dtg"):
            return self.dtg_weights
        raise DomainError(f"unknown measure {measure!r}")

    def volume(self, measure: str = "dg") -> float:
        return float(np.sum(self.weights(measure)) * self.mode_count ** (self.n - 1))

    def integrate(self, f, measure: str = "dg"):
        f = np.asarray(f)
        axes = tuple(range(1, self.n))
        return np.tensordot(self.weights(measure), f.sum(axis=axes) if axes else f, axes=1)

    def radial(self, values) -> np.ndarray:
        """Broadcast a radial profile to the full grid shape."""
        values = np.asarray(values)
        return values.reshape((self.N,) + (1,) * (self.n - 1))

    def wave_numbers(self) -> np.ndarray:
        """Integer FFT wave numbers along one angular axis."""
        return np.rint(np.fft.fftfreq(self.mode_count, 1.0 / self.mode_count)).astype(int)

    def mode_norms_sq(self) -> np.ndarray:
        """``|m|^2`` on the full angular FFT grid, shape ``(mode_count,)*(n-1)``."""
        k = self.wave_numbers()
        grids = np.meshgrid(*([k] * (self.n - 1)), indexing="ij")
        return sum(g.astype(int) ** 2 for g in grids)


def build_model_end(R: float, R_max: float, N: int, n: int = 2, mode_count: int = 64, w: Warp | None = None) -> ModelEnd:
    if N < 8:
        raise GridTooCoarse(f"N={N} < 8")
    if not R < R_max:
        raise DomainError("need R < R_max")
    if n < 2:
        raise DomainError("dimension n must be at least 2")
    if mode_count < 1:
        raise DomainError("mode_count must be positive")
    if w is None:
        w = make_warp("flat")
    dr = (R_max - R) / N
    r = R + (np.arange(N) + 0.5) * dr
    faces = R + np.arange(N + 1) * dr
    dtheta = 2 * np.pi / mode_count
    cell = dtheta ** (n - 1)
    dg = w(r) ** (1 - n) * dr * cell
    dtg = np.full(N, dr * cell)
    return ModelEnd(float(R), float(R_max), int(N), int(n), int(mode_count), w, dr, r, faces, dtheta, dg, dtg)


@dataclass(frozen=True, eq=False)
class SymmetricOperator:
    """One radial block of the (plain or modified) Laplacian.

    ``diag`` and ``off`` hold the symmetric tridiagonal matrix ``S`` shared by
    both variants.  The plain operator is ``mu^(-1/2) S mu^(1/2)`` with
    ``mu = w^(1-n)`` and is self-adjoint for the ``dg`` inner product; the
    modified operator is ``S`` itself, self-adjoint for ``dtg``.
    """

    variant: str
    m: tuple
    m2: int
    diag: np.ndarray
    off: np.ndarray
    mu: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.diag.size

    def symmetric_matrix(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def matrix(self) -> np.ndarray:
        """Dense matrix of the operator acting on nodal values."""
        S = self.symmetric_matrix()
        if self.variant == "modified":
            return S
        s = np.sqrt(self.mu)
        return S * (s[None, :] / s[:, None])

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Apply the operator along axis 0."""
        u = np.asarray(u)
        shape = (-1,) + (1,) * (u.ndim - 1)
        if self.variant == "plain":
            s = np.sqrt(self.mu).reshape(shape)
            v = u * s
        else:
            v = u
        out = self.diag.reshape(shape) * v
        if self.size > 1:
            out[:-1] += self.off.reshape((-1,) + (1,) * (u.ndim - 1)) * v[1:]
            out[1:] += self.off.reshape((-1,) + (1,) * (u.ndim - 1)) * v[:-1]
        if self.variant == "plain":
            out = out / s
        return out

    def inner(self, u, v) -> complex:
        """``<u, v>`` in the variant's measure (radial part only)."""
        return complex(np.sum(self.weights * np.asarray(u) * np.conj(np.asarray(v))))


def _tridiagonal(end: ModelEnd, m2: int):
    n = end.n
    a = end.warp(end.r_faces) ** (1 - n)
    wn = end.warp(end.r)
    mu = wn ** (1 - n)
    dr2 = end.dr**2
    T_diag = (a[:-1] + a[1:]) / dr2 + m2 * wn**2 * mu
    T_off = -a[1:-1] / dr2
    diag = T_diag / mu
    off = T_off / np.sqrt(mu[:-1] * mu[1:])
    return diag, off, mu


def assemble_operator(end: ModelEnd, variant: str, m=0, *, _allow_nyquist: bool = False) -> SymmetricOperator:
    """Finite-volume operator for angular wave vector ``m`` (int when n = 2).

    Dirichlet data enter through zero ghost values one cell beyond each end,
    so the flat ``m = 0`` block is ``tridiag(-1, 2, -1) / dr^2``.
    """
    if variant not in ("plain", "modified"):
        raise DomainError(f"unknown variant {variant!r}")
    mv = (int(m),) if np.isscalar(m) else tuple(int(x) for x in m)
    if len(mv) != end.n - 1:
        raise InvalidMode(f"mode needs {end.n - 1} components")
    half = end.mode_count / 2
    for x in mv:
        if abs(x) > half or (abs(x) == half and not _allow_nyquist):
            raise InvalidMode(f"mode {mv} out of range for mode_count={end.mode_count}")
    m2 = sum(x * x for x in mv)
    diag, off, mu = _tridiagonal(end, m2)
    if variant == "plain":
        weights = end.dg_weights / end.angular_cell
        mu_out = mu
    else:
        weights = end.dtg_weights / end.angular_cell
        mu_out = np.ones_like(mu)
    return SymmetricOperator(variant, mv, m2, diag, off, mu_out, weights)
