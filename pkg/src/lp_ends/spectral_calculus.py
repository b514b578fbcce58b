"""Exact functional calculus on the discretized end.

Every function of the Laplacian is applied through the eigendecomposition of
the per-mode symmetric tridiagonal matrices: Fourier analysis in the angle,
projection on radial eigenvectors, multiplication, synthesis.  On top of that
sit the dyadic blocks ``A_0 = phi0(P)``, ``A_k = phi(2^-(k-1) P)``, the square
function and the norm-comparison statistics.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .dyadic_partition import DyadicCutoffs
from .errors import AdmissibilityError, DomainError, EigenFailure
from .warp_geometry import ModelEnd, SymmetricOperator, TemperateWeight, assemble_operator

EIG_RESIDUAL_TOL = 1e-8


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True, eq=False)
class ModeSpectrum:
    """Eigenpairs of one radial block.

    ``Q`` holds orthonormal eigenvectors of the symmetric matrix; eigenvectors
    of the operator itself are ``Q / sqrt(mu)``.
    """

    m2: int
    variant: str
    evals: np.ndarray
    Q: np.ndarray
    sqrt_mu: np.ndarray
    weights: np.ndarray
    residual: float

    def eigenvectors(self) -> np.ndarray:
        """Eigenvectors of the operator, orthonormal in its radial measure."""
        V = self.Q / self.sqrt_mu[:, None]
        return V / np.sqrt(self.weights / self.sqrt_mu**2)[:, None]

    def gram(self) -> np.ndarray:
        V = self.eigenvectors()
        return (V * self.weights[:, None]).T @ V


def eigendecompose(op: SymmetricOperator) -> ModeSpectrum:
    """Full eigendecomposition of one radial block, ascending eigenvalues."""
    try:
        if op.size == 1:
            lam = op.diag.copy()
            Q = np.ones((1, 1))
        else:
            lam, Q = eigh_tridiagonal(op.diag, op.off)
    except (LinAlgError, ValueError) as exc:
        raise EigenFailure(op.m, str(exc)) from exc
    SQ = op.diag[:, None] * Q
    if op.size > 1:
        SQ[:-1] += op.off[:, None] * Q[1:]
        SQ[1:] += op.off[:, None] * Q[:-1]
    res = float(np.max(np.linalg.norm(SQ - Q * lam[None, :], axis=0)))
    scale = max(1.0, float(np.max(np.abs(op.diag)) + 2 * float(np.max(np.abs(op.off), initial=0.0))))
    if not np.all(np.isfinite(lam)) or res > EIG_RESIDUAL_TOL * scale:
        raise EigenFailure(op.m, f"eigen-residual {res:.3g} too large")
    return ModeSpectrum(op.m2, op.variant, lam, Q, np.sqrt(op.mu), op.weights, res)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """All radial blocks needed to act on grid functions of ``end``.

    Blocks are shared between wave vectors with equal ``|m|^2``.  The Nyquist
    row of an even angular grid is included so that every Fourier
    coefficient has an operator to act on.
    """

    end: ModelEnd
    variant: str
    modes: dict
    groups: tuple

    @property
    def lambda_max(self) -> float:
        return max(float(ms.evals[-1]) for ms in self.modes.values())

    @property
    def lambda_min(self) -> float:
        return min(float(ms.evals[0]) for ms in self.modes.values())

    @property
    def measure(self) -> str:
        return "dg" if self.variant == "plain" else "dtildeg"

    def mode(self, m=0) -> ModeSpectrum:
        mv = (m,) if np.isscalar(m) else tuple(m)
        return self.modes[sum(int(x) ** 2 for x in mv)]


def build_spectrum(end: ModelEnd, variant: str = "modified", max_workers: int | None = None) -> Spectrum:
    """Eigendecompose every distinct ``|m|^2`` block of ``end``."""
    m2_grid = end.mode_norms_sq().ravel()
    values = np.unique(m2_grid)
    comps = {}
    k = end.wave_numbers()
    for mv in itertools.product(k, repeat=end.n - 1):
        comps.setdefault(int(sum(x * x for x in mv)), mv)

    def work(m2):
        op = assemble_operator(end, variant, comps[int(m2)], _allow_nyquist=True)
        return int(m2), eigendecompose(op)

    if max_workers and max_workers > 1 and len(values) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as ex:
            results = list(ex.map(work, values))
    else:
        results = [work(v) for v in values]
    modes = dict(results)
    groups = tuple((int(v), np.flatnonzero(m2_grid == v)) for v in values)
    return Spectrum(end, variant, modes, groups)


# ---------------------------------------------------------------------------
# functional calculus


def _angular_axes(end):
    return tuple(range(1, end.n))


def spectral_coefficients(s: Spectrum, u) -> list:
    """Per-group eigen-coefficients of ``u``: list of ``(m2, idx, C)``."""
    end = s.end
    u = np.asarray(u)
    if u.shape != end.shape:
        raise DomainError(f"grid function has shape {u.shape}, expected {end.shape}")
    uh = np.fft.fftn(u, axes=_angular_axes(end)).reshape(end.N, -1)
    out = []
    for m2, idx in s.groups:
        ms = s.modes[m2]
        out.append((m2, idx, ms.Q.T @ (ms.sqrt_mu[:, None] * uh[:, idx])))
    return out


def synthesize(s: Spectrum, coeffs: list, multiplier: Callable | None = None, real: bool = False):
    """Inverse of :func:`spectral_coefficients`, optionally after multiplying
    coefficients by ``multiplier(evals)``."""
    end = s.end
    out = np.empty((end.N, end.mode_count ** (end.n - 1)), dtype=complex)
    for m2, idx, C in coeffs:
        ms = s.modes[m2]
        if multiplier is not None:
            C = np.asarray(multiplier(ms.evals))[:, None] * C
        out[:, idx] = (ms.Q @ C) / ms.sqrt_mu[:, None]
    res = np.fft.ifftn(out.reshape(end.shape), axes=_angular_axes(end))
    return res.real if real else res


def apply_spectral(f: Callable, s: Spectrum, u):
    """``f(P) u`` for a vectorized scalar map ``f`` on the spectrum."""
    u = np.asarray(u)
    probe = np.asarray(f(np.array([s.lambda_min])))
    real = np.isrealobj(u) and np.isrealobj(probe)
    return synthesize(s, spectral_coefficients(s, u), f, real=real)


def apply_operator(s: Spectrum, u):
    """Direct (matrix) application of the operator, mode by mode."""
    end = s.end
    uh = np.fft.fftn(np.asarray(u), axes=_angular_axes(end)).reshape(end.N, -1)
    out = np.empty_like(uh, dtype=complex)
    comps = {}
    for mv in itertools.product(end.wave_numbers(), repeat=end.n - 1):
        comps.setdefault(int(sum(x * x for x in mv)), mv)
    for m2, idx in s.groups:
        op = assemble_operator(end, s.variant, comps[m2], _allow_nyquist=True)
        out[:, idx] = op.apply(uh[:, idx])
    res = np.fft.ifftn(out.reshape(end.shape), axes=_angular_axes(end))
    return res.real if np.isrealobj(u) else res


def eigenfunction(s: Spectrum, m=0, j: int = 0) -> np.ndarray:
    """Real eigenfunction ``v_j(r) cos(m . theta)``, unit ``L^2`` norm in the variant's measure."""
    end = s.end
    mv = (m,) if np.isscalar(m) else tuple(m)
    ms = s.mode(mv)
    v = ms.Q[:, j] / ms.sqrt_mu
    th = end.theta
    grids = np.meshgrid(*([th] * (end.n - 1)), indexing="ij")
    phase = sum(mi * g for mi, g in zip(mv, grids))
    u = end.radial(v) * np.cos(phase)[None, ...]
    return u / lp_norm(end, u, 2, s.measure)


# ---------------------------------------------------------------------------
# norms


def lp_norm(end: ModelEnd, u, p: float, measure: str = "dg", W: TemperateWeight | Callable | None = None) -> float:
    """Midpoint-quadrature ``L^p`` norm of ``W(r) u`` (``p = inf`` allowed)."""
    u = np.abs(np.asarray(u))
    if W is not None:
        u = u * end.radial(W(end.r))
    if np.isinf(p):
        return float(np.max(u))
    wts = end.radial(end.weights(measure))
    return float(np.sum(wts * u**p) ** (1.0 / p))


def weighted_norm(end: ModelEnd, u, p: float, W: TemperateWeight | None = None, measure: str = "dg") -> float:
    """``||W(r) u||_{L^p}`` in ``dg`` or ``dtildeg`` for ``1 < p < inf``."""
    if not (1 < p < np.inf):
        raise DomainError("p must lie in (1, inf)")
    if not np.all(np.isfinite(u)):
        raise DomainError("grid function has non-finite values")
    return lp_norm(end, u, p, measure, W)


# ---------------------------------------------------------------------------
# dyadic blocks


def choose_K(lambda_max: float) -> int:
    """Least ``K >= 0`` with ``2^K >= lambda_max``; then ``sum_{k<=K} A_k = 1``."""
    K = 0
    while 2.0**K < lambda_max:
        K += 1
    return K


def block_multiplier(c: DyadicCutoffs, k: int) -> Callable:
    if k < 0:
        raise DomainError("block index must be >= 0")
    if k == 0:
        return c.phi0
    scale = 2.0 ** -(k - 1)
    return lambda lam: c.phi(scale * np.asarray(lam))


def dyadic_block(c: DyadicCutoffs, s: Spectrum, u, k: int):
    """``A_k u``."""
    return apply_spectral(block_multiplier(c, k), s, u)


@dataclass(frozen=True, eq=False)
class DyadicBlockSet:
    K: int
    blocks: np.ndarray
    variant: str
    weight: object = None

    def total(self):
        return self.blocks.sum(axis=0)


def dyadic_blocks(c: DyadicCutoffs, s: Spectrum, u, K: int | None = None) -> DyadicBlockSet:
    """All blocks ``A_0 u .. A_K u`` from one spectral analysis."""
    if K is None:
        K = choose_K(s.lambda_max)
    u = np.asarray(u)
    end = s.end
    coeffs = spectral_coefficients(s, u)
    # every multiplier evaluated once on the concatenated spectrum
    evals = np.concatenate([s.modes[m2].evals for m2, _, _ in coeffs])
    table = np.stack([np.asarray(block_multiplier(c, k)(evals), dtype=float) for k in range(K + 1)])
    out = np.empty((K + 1, end.N, end.mode_count ** (end.n - 1)), dtype=complex)
    off = 0
    for m2, idx, C in coeffs:
        ms = s.modes[m2]
        T = table[:, off:off + ms.evals.size]
        off += ms.evals.size
        out[:, :, idx] = np.matmul(ms.Q, T[:, :, None] * C[None]) / ms.sqrt_mu[None, :, None]
    res = np.fft.ifftn(out.reshape((K + 1,) + end.shape), axes=tuple(a + 1 for a in _angular_axes(end)))
    return DyadicBlockSet(K, res.real if np.isrealobj(u) else res, s.variant)


def corpus_blocks(c: DyadicCutoffs, s: Spectrum, corpus: Sequence, K: int | None = None) -> list:
    """:func:`dyadic_blocks` for every corpus member, for reuse across statistics."""
    return [dyadic_blocks(c, s, u, K) for u in corpus]


def square_function(c: DyadicCutoffs, s: Spectrum, u, K: int | None = None, blocks: DyadicBlockSet | None = None):
    """Pointwise ``(sum_k |A_k u|^2)^(1/2)``."""
    if blocks is None:
        if K is not None and 2.0 ** (K + 1) < s.lambda_max:
            warnings.warn(f"square function truncated: 2^(K+1) = {2.0 ** (K + 1):g} < lambda_max = {s.lambda_max:.4g}")
        blocks = dyadic_blocks(c, s, u, K)
    return np.sqrt(np.sum(np.abs(blocks.blocks) ** 2, axis=0))


def _members(end, corpus):
    for idx, u in enumerate(corpus):
        if lp_norm(end, u, 2) == 0.0:
            warnings.warn(f"corpus member {idx} has zero norm; skipped")
            continue
        yield idx, np.asarray(u)


def equivalence_stats(c: DyadicCutoffs, s: Spectrum, corpus: Sequence, p: float, W: TemperateWeight | None = None,
                      K: int | None = None, blocks: Sequence | None = None) -> dict:
    """Range over the corpus of ``||W S_P u||_p / ||W u||_p``.

    The measure is ``dg`` for the plain operator and ``dtildeg`` for the
    modified one.  ``blocks`` may carry precomputed :class:`DyadicBlockSet`
    values, one per corpus member.
    """
    end = s.end
    ratios = []
    for idx, u in _members(end, corpus):
        S = square_function(c, s, u, K, None if blocks is None else blocks[idx])
        ratios.append(weighted_norm(end, S, p, W, s.measure) / weighted_norm(end, u, p, W, s.measure))
    ratios = np.array(ratios)
    if ratios.size == 0:
        raise DomainError("corpus has no nonzero member")
    return {"ratio_min": float(ratios.min()), "ratio_max": float(ratios.max()), "ratios": ratios}


def remainder_stats(c: DyadicCutoffs, s: Spectrum, corpus: Sequence, p: float, M: int, K: int | None = None,
                    blocks: Sequence | None = None) -> dict:
    """Worst ``||u||_p / (||S_P u||_p + ||(P+i)^-M u||_2)`` in ``dg``."""
    if p < 2:
        raise DomainError("remainder estimate needs p >= 2")
    if s.variant != "plain":
        raise DomainError("remainder estimate is stated for the plain operator")
    end = s.end
    lhs, rhs = [], []
    for idx, u in _members(end, corpus):
        S = square_function(c, s, u, K, None if blocks is None else blocks[idx])
        res = apply_spectral(lambda lam: (lam + 1j) ** (-float(M)), s, u)
        lhs.append(lp_norm(end, u, p, "dg"))
        rhs.append(lp_norm(end, S, p, "dg") + lp_norm(end, res, 2, "dg"))
    lhs, rhs = np.array(lhs), np.array(rhs)
    ratio = lhs / rhs
    return {"lhs": lhs, "rhs": rhs, "ratio": float(ratio.max()), "ratios": ratio}


def block_sum_stats(c: DyadicCutoffs, s: Spectrum, corpus: Sequence, p: float, K: int | None = None,
                    blocks: Sequence | None = None) -> dict:
    """Worst ``||u||_p`` against the block-sum bound.

    The right side is ``(sum_{k>=1} ||A_k u||_p^2)^(1/2)`` plus
    ``||A_0 u||_p`` in ``dtildeg`` for the modified operator, or plus
    ``||u||_2`` in ``dg`` for the plain one.  Also records whether
    ``||S_P u||_p <= (sum_k ||A_k u||_p^2)^(1/2)`` on every member.
    """
    if p < 2:
        raise DomainError("block-sum estimate needs p >= 2")
    end = s.end
    meas = s.measure
    lhs, rhs, ordering = [], [], True
    for idx, u in _members(end, corpus):
        bs = dyadic_blocks(c, s, u, K) if blocks is None else blocks[idx]
        norms = np.array([lp_norm(end, b, p, meas) for b in bs.blocks])
        ell2 = float(np.sqrt(np.sum(norms[1:] ** 2)))
        tail = norms[0] if s.variant == "modified" else lp_norm(end, u, 2, "dg")
        lhs.append(lp_norm(end, u, p, meas))
        rhs.append(ell2 + tail)
        S = np.sqrt(np.sum(np.abs(bs.blocks) ** 2, axis=0))
        ordering &= lp_norm(end, S, p, meas) <= float(np.sqrt(np.sum(norms**2))) * (1 + 1e-12)
    lhs, rhs = np.array(lhs), np.array(rhs)
    ratio = lhs / rhs
    return {"lhs": lhs, "rhs": rhs, "ratio": float(ratio.max()), "ratios": ratio, "ordering_ok": bool(ordering)}


def almost_orthogonality_check(c: DyadicCutoffs, s: Spectrum, k1: int, k2: int) -> float:
    """Operator norm of ``A_k1 A_k2``: the largest ``|m1(l) m2(l)|`` over the spectrum."""
    f1, f2 = block_multiplier(c, k1), block_multiplier(c, k2)
    return max(float(np.max(np.abs(f1(ms.evals) * f2(ms.evals)))) for ms in s.modes.values())


# ---------------------------------------------------------------------------
# Rademacher functions


def rademacher(k: int, t):
    """``f_k(t) = f_0(2^k t)`` with ``f_0 = +1`` on ``[0, 1/2]`` and ``-1`` on ``(1/2, 1)``."""
    x = np.mod(np.asarray(t, dtype=float) * 2.0**k, 1.0)
    return np.where(x <= 0.5, 1.0, -1.0)


@dataclass(frozen=True)
class RademacherDraw:
    k_max: int
    a: np.ndarray | None = None

    def f(self, k: int, t):
        return rademacher(k, t)

    def midpoints(self) -> np.ndarray:
        """Midpoints of the ``2^(k_max+1)`` dyadic intervals on which all ``f_k`` are constant."""
        n = 2 ** (self.k_max + 1)
        return (np.arange(n) + 0.5) / n


def rademacher_gram(k_max: int) -> np.ndarray:
    """Exact ``int_0^1 f_j f_k dt`` by enumeration of dyadic intervals."""
    t = RademacherDraw(k_max).midpoints()
    F = np.stack([rademacher(k, t) for k in range(k_max + 1)])
    return F @ F.T / t.size


def rademacher_sum(draw: RademacherDraw, blocks: DyadicBlockSet, t: float):
    """``sum_{k<=k_max} f_k(t) A_k u``."""
    if not 0 <= t < 1:
        raise DomainError("t must lie in [0, 1)")
    kk = min(draw.k_max, blocks.K)
    signs = np.array([rademacher(k, t) for k in range(kk + 1)])
    return np.tensordot(signs, blocks.blocks[: kk + 1], axes=1)


def khintchine_ratio(a, p: float) -> float:
    """``(sum |a_k|^2)^(1/2) / ||sum a_k f_k||_{L^p[0,1]}``, computed exactly.

    With ``L = len(a)`` every ``f_k`` is constant on the ``2^L`` dyadic
    intervals of length ``2^-L``, so the ``L^p`` norm is a finite average.
    """
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0 or a.size > 16:
        raise DomainError("coefficient vector length must lie in 1..16")
    if not np.any(a != 0):
        raise DomainError("coefficient vector is zero")
    if not p > 0:
        raise DomainError("p must be positive")
    L = a.size
    t = (np.arange(2**L) + 0.5) / 2**L
    F = np.zeros_like(t)
    for k in range(L):
        F += a[k] * rademacher(k, t)
    Fp = float(np.max(np.abs(F))) if np.isinf(p) else float(np.mean(np.abs(F) ** p) ** (1.0 / p))
    return float(np.linalg.norm(a)) / Fp


# ---------------------------------------------------------------------------
# localization and commutators


def admissible(n: int, p: float) -> bool:
    """``0 <= n/2 - n/p <= 1``."""
    x = n / 2.0 - n / p
    return bool(-1e-15 <= x <= 1.0 + 1e-15)


def annulus_cutoff(c: DyadicCutoffs, r, r_in: float, r_out: float, ramp: float):
    """Smooth radial bump: 1 on ``[r_in, r_out]``, 0 outside ``[r_in - ramp, r_out + ramp]``."""
    r = np.asarray(r, dtype=float)
    return c.psi(1.0 + (r_in - r) / ramp) * c.psi(1.0 + (r - r_out) / ramp)


def localization_stats(c: DyadicCutoffs, s: Spectrum, corpus: Sequence, p: float, chi, K: int | None = None,
                       blocks: Sequence | None = None) -> dict:
    """Worst ``||(1-chi) u||_p`` against ``(sum_k ||(1-chi) A_k u||_p^2)^(1/2) + ||u||_2``.

    ``chi`` is a radial profile on the nodes or a full grid function.
    """
    end = s.end
    if not admissible(end.n, p) or p < 2:
        raise AdmissibilityError(f"(n, p) = ({end.n}, {p}) violates 0 <= n/2 - n/p <= 1")
    chi = np.asarray(chi, dtype=float)
    one_minus = 1.0 - (end.radial(chi) if chi.shape == (end.N,) else chi)
    lhs, rhs = [], []
    for idx, u in _members(end, corpus):
        bs = dyadic_blocks(c, s, u, K) if blocks is None else blocks[idx]
        norms = np.array([lp_norm(end, one_minus * b, p, "dg") for b in bs.blocks[1:]])
        lhs.append(lp_norm(end, one_minus * u, p, "dg"))
        rhs.append(float(np.sqrt(np.sum(norms**2))) + lp_norm(end, u, 2, "dg"))
    lhs, rhs = np.array(lhs), np.array(rhs)
    ratio = lhs / rhs
    return {"lhs": lhs, "rhs": rhs, "ratio": float(ratio.max()), "ratios": ratio}


def resolved(end: ModelEnd, h: float, factor: float = 2.0) -> bool:
    """A semiclassical scale ``h`` is resolved when ``h >= factor * dr``."""
    return h >= factor * end.dr * (1 - 1e-12)


def commutator_norms_by_mode(c: DyadicCutoffs, s: Spectrum, chi_r, h: float) -> float:
    """Exact ``L^2`` operator norm of ``[phi(h^2 P), chi]`` for radial ``chi``.

    A radial multiplier preserves angular modes, so the norm is the largest
    spectral norm among the radial blocks (computed in the symmetric frame,
    where both the variant's measure and the multiplier are diagonal).
    """
    chi_r = np.asarray(chi_r, dtype=float)
    best = 0.0
    for ms in s.modes.values():
        F = (ms.Q * c.phi(h * h * ms.evals)[None, :]) @ ms.Q.T
        C = F * chi_r[None, :] - chi_r[:, None] * F
        best = max(best, float(np.linalg.norm(C, 2)))
    return best


def commutator_order(c: DyadicCutoffs, s: Spectrum, chi, h_list: Sequence[float], corpus: Sequence | None = None) -> dict:
    """Norms of ``[phi(h^2 P), chi]`` per ``h`` and the fitted log-log slope.

    With ``corpus=None`` and radial ``chi`` the exact operator norm is used;
    otherwise the norm is the largest ratio ``||[F, chi] u|| / ||u||`` over
    the corpus.  Unresolved scales (``h < 2 dr``) are dropped with a warning.
    """
    end = s.end
    chi = np.asarray(chi, dtype=float)
    kept, norms = [], []
    for h in h_list:
        if not resolved(end, h):
            warnings.warn(f"h = {h:g} is below grid resolution (dr = {end.dr:g}); excluded from the fit")
            continue
        if corpus is None and chi.shape == (end.N,):
            val = commutator_norms_by_mode(c, s, chi, h)
        else:
            chig = end.radial(chi) if chi.shape == (end.N,) else chi
            f = lambda lam, h=h: c.phi(h * h * np.asarray(lam))
            val = 0.0
            for _, u in _members(end, corpus or []):
                cu = apply_spectral(f, s, chig * u) - chig * apply_spectral(f, s, u)
                val = max(val, lp_norm(end, cu, 2, s.measure) / lp_norm(end, u, 2, s.measure))
        kept.append(float(h))
        norms.append(float(val))
    kept, norms = np.array(kept), np.array(norms)
    slope = float("nan")
    if kept.size >= 2 and np.all(norms > 0):
        slope = float(np.polyfit(np.log(kept), np.log(norms), 1)[0])
    return {"h": kept, "norms": norms, "slope": slope}
