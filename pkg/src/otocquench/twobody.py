"""Two-particle relative motion with a contact interaction.

Relative coordinate ``y = (x1 - x2)/sqrt(2)``; the pair interaction
``g delta(x1 - x2)`` becomes ``alpha delta(y)`` with ``alpha = g/sqrt(2)``.
Even relative states satisfy

    2 / Gamma(1/4 - E/2) + alpha / Gamma(3/4 - E/2) = 0

(unit trap).  Odd states do not feel the interaction.  An exact even
eigenvector expands in the even oscillator states as
``c_k = -alpha psi(0) phi_2k(0) / (2k + 1/2 - E)``, with ``psi(0)`` fixed
by the digamma form of the normalisation.  A trap of strength ``gamma`` is a
dilation of the unit trap with coupling ``alpha/sqrt(gamma)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq
from scipy.special import digamma, gammaln, rgamma

from . import hobasis


class ConventionError(RuntimeError):
    """Root not bracketed where the interaction convention says it must be."""


@dataclass(frozen=True)
class RelSpectrum:
    g: float
    energies: np.ndarray
    trap: float = 1.0

    @property
    def shifts(self) -> np.ndarray:
        j = np.arange(len(self.energies))
        return self.energies - self.trap * (2 * j + 0.5)


def _even_condition(E: float, alpha: float) -> float:
    return 2.0 * rgamma(0.25 - 0.5 * E) + alpha * rgamma(0.75 - 0.5 * E)


def rel_even_energies(g: float, count: int, trap: float = 1.0) -> RelSpectrum:
    if g < 0 or not np.isfinite(g):
        raise ValueError("g must be finite and non-negative")
    if count < 1:
        raise ValueError("count must be >= 1")
    j = np.arange(count)
    if g == 0:
        return RelSpectrum(g, trap * (2 * j + 0.5), trap)
    alpha = g / np.sqrt(2.0) / np.sqrt(trap)
    out = np.empty(count)
    for n in j:
        lo, hi = 2 * n + 0.5, 2 * n + 1.5
        scale = abs(_even_condition(hi, alpha))
        f = lambda E: _even_condition(E, alpha) / scale
        if not f(lo) * f(hi) < 0:
            raise ConventionError(f"even level {n} not bracketed in ({lo}, {hi})")
        out[n] = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return RelSpectrum(g, trap * out, trap)


def rel_odd_energies(count: int, trap: float = 1.0) -> np.ndarray:
    return trap * (2 * np.arange(count) + 1.5)


def phi_even_at_origin(count: int) -> np.ndarray:
    """``phi_{2k}(0)`` for the unit-frequency orbitals."""
    k = np.arange(count)
    log = 0.5 * (gammaln(2 * k + 1) - 2 * gammaln(k + 1) - 2 * k * np.log(2.0))
    return (-1.0) ** k * np.exp(log) * np.pi ** -0.25


def even_expansion(alpha: float, energies: np.ndarray, n_coeff: int) -> np.ndarray:
    """Columns: exact even eigenvectors (unit trap) in ``phi_0, phi_2, ...``."""
    energies = np.atleast_1d(energies)
    if alpha == 0:
        out = np.zeros((n_coeff, len(energies)))
        idx = np.rint((energies - 0.5) / 2).astype(int)
        out[idx, np.arange(len(energies))] = 1.0
        return out
    phi0 = phi_even_at_origin(n_coeff)
    k = np.arange(n_coeff)[:, None]
    E = energies[None, :]
    psi0 = np.sqrt(2.0 / (alpha * (digamma(0.25 - 0.5 * E) - digamma(0.75 - 0.5 * E))))
    return -alpha * psi0 * phi0[:, None] / (2 * k + 0.5 - E)


def dilation_matrix(n_rows: int, n_cols: int, gamma: float) -> np.ndarray:
    """``D_mn = <phi_m | gamma^(1/4) phi_n(sqrt(gamma) .)>`` by exact quadrature."""
    a = np.sqrt(0.5 * (1.0 + gamma))
    q = (n_rows + n_cols) // 2 + 8
    s, log_w = hobasis.gauss_hermite(q)
    F1 = hobasis.hermite_functions(n_rows, s / a, 0.5 * log_w)
    F2 = hobasis.hermite_functions(n_cols, np.sqrt(gamma) * s / a, 0.5 * log_w)
    return gamma ** 0.25 / a * (F1.T @ F2)


def exact_even_projections(g: float, d: int, trap: float = 1.0, n_tail: int = 300):
    """Energies and ``P``-projections of the lowest ``d`` exact even states.

    ``P`` is the span of the unit-frequency states ``phi_0 .. phi_{2d-2}``.
    """
    spec = rel_even_energies(g, d, trap)
    alpha_eff = g / np.sqrt(2.0) / np.sqrt(trap)
    if trap == 1.0:
        return spec, even_expansion(alpha_eff, spec.energies, d)
    n_coeff = d + n_tail
    coeff = even_expansion(alpha_eff, spec.energies / trap, n_coeff)
    D = dilation_matrix(2 * d - 1, 2 * n_coeff - 1, trap)[::2, ::2]
    return spec, D @ coeff


@dataclass(frozen=True)
class EffectiveInteraction:
    g: float
    trap: float
    d: int
    V_eff: np.ndarray
    H0: np.ndarray
    energies: np.ndarray


class RankDeficientError(ValueError):
    pass


def effective_interaction(g: float, d: int, rel_spectrum: RelSpectrum | None = None,
                          trap: float = 1.0) -> EffectiveInteraction:
    """Hermitian effective interaction on the lowest ``d`` even relative states.

    The exact eigenvectors are projected into the model space, symmetrically
    orthogonalised, and ``H_eff = U diag(E) U^T``.  ``V_eff = H_eff - P h P``.
    """
    H0 = hobasis.h_gamma(2 * d, trap)[::2, ::2]
    if g == 0:
        E = rel_even_energies(0.0, d, trap).energies
        return EffectiveInteraction(g, trap, d, np.zeros((d, d)), H0, E)
    spec, M = exact_even_projections(g, d, trap)
    if rel_spectrum is not None and len(rel_spectrum.energies) >= d:
        if not np.allclose(rel_spectrum.energies[:d], spec.energies, rtol=0, atol=1e-10):
            raise ValueError("supplied spectrum does not match the interaction strength")
    X, sv, Zt = np.linalg.svd(M)
    if sv.min() < 1e-8:
        raise RankDeficientError(
            f"projected exact states are nearly dependent (smallest singular value "
            f"{sv.min():.1e}); reduce d={d}")
    U = X @ Zt
    H_eff = (U * spec.energies) @ U.T
    H_eff = 0.5 * (H_eff + H_eff.T)
    return EffectiveInteraction(g, trap, d, H_eff - H0, H0, spec.energies)


@dataclass(frozen=True)
class BracketTable:
    """Oscillator brackets ``<n1 n2 | N n>`` for ``R = (x1+x2)/sqrt2, y = (x1-x2)/sqrt2``.

    ``shells[s][n1, Ncm]`` holds the bracket with ``n2 = s - n1`` and
    ``n = s - Ncm``; brackets vanish off-shell.
    """
    n_max: int
    shells: tuple

    def get(self, n1: int, n2: int, N: int, n: int) -> float:
        s = n1 + n2
        if s != N + n or s > self.n_max or min(n1, n2, N, n) < 0:
            return 0.0
        return float(self.shells[s][n1, N])


def _bracket(n1: int, n2: int, N: int, n: int) -> float:
    S = 0
    for a in range(max(0, n1 - n), min(N, n1) + 1):
        b = n1 - a
        S += math.comb(N, a) * math.comb(n, b) * (-1) ** (n - b)
    if S == 0:
        return 0.0
    ratio = (math.factorial(n1) * math.factorial(n2)) / (
        math.factorial(N) * math.factorial(n) * 2 ** (N + n))
    return S * math.sqrt(ratio)


def moshinsky_brackets(n_max: int) -> BracketTable:
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    shells = []
    for s in range(n_max + 1):
        T = np.empty((s + 1, s + 1))
        for n1 in range(s + 1):
            for N in range(s + 1):
                T[n1, N] = _bracket(n1, s - n1, N, s - N)
        shells.append(T)
    return BracketTable(n_max, tuple(shells))


@lru_cache(maxsize=16)
def lab_frame_interaction(g: float, gamma: float, n_pair_max: int, n_orb: int) -> np.ndarray:
    """Lab-frame ``W[n1,n2,n3,n4]`` of the effective interaction.

    One relative-frame ``V_eff`` (even states up to ``n_pair_max`` quanta) is
    shared by every pair CM quantum number, which keeps the interaction
    translation invariant; pairs with more CM quanta see it restricted to the
    relative states that still fit under ``n_pair_max``.
    """
    d = n_pair_max // 2 + 1
    V = effective_interaction(g, d, trap=gamma).V_eff
    table = moshinsky_brackets(n_pair_max)
    W = np.zeros((n_orb * n_orb, n_orb * n_orb))
    for Ncm in range(n_pair_max + 1):
        r_count = (n_pair_max - Ncm) // 2 + 1
        T = np.zeros((n_orb * n_orb, r_count))
        for r in range(r_count):
            s = Ncm + 2 * r
            n1 = np.arange(s + 1)
            keep = (n1 < n_orb) & (s - n1 < n_orb)
            T[n1[keep] * n_orb + (s - n1[keep]), r] = table.shells[s][n1[keep], Ncm]
        W += T @ V[:r_count, :r_count] @ T.T
    W = W.reshape(n_orb, n_orb, n_orb, n_orb)
    W.setflags(write=False)
    return W


@dataclass(frozen=True)
class GridSolution:
    y: np.ndarray
    h: float
    energies: np.ndarray
    states: np.ndarray   # columns, normalised with sum(v^2) h = 1
    parity: np.ndarray


def rel_grid_solve(g: float, count: int, trap: float = 1.0, L: float = 12.0,
                   h: float = 1e-3) -> GridSolution:
    """Finite-difference relative problem; the delta is ``alpha/h`` on the origin site.

    Returns the lowest ``count`` states of each parity, sorted by energy.
    Used as an independent check of the transcendental spectrum.
    """
    n_half = int(round(L / h))
    y = h * np.arange(-n_half, n_half + 1)
    diag = 1.0 / h ** 2 + 0.5 * trap ** 2 * y ** 2
    diag[n_half] += g / np.sqrt(2.0) / h
    off = np.full(len(y) - 1, -0.5 / h ** 2)
    w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, 2 * count + 1))
    v = v / np.sqrt(h)
    par = np.sign(np.sum(v[n_half + 1:n_half + 50] * v[n_half - 1:n_half - 50:-1], axis=0))
    return GridSolution(y, h, w, v, par)


def rel_grid_even_energies(g: float, count: int, trap: float = 1.0, L: float = 12.0,
                           h: float = 1e-3) -> np.ndarray:
    """Richardson-extrapolated even energies from grids ``h`` and ``h/2``."""
    coarse = rel_grid_solve(g, count, trap, L, h)
    fine = rel_grid_solve(g, count, trap, L, h / 2)
    e1 = coarse.energies[coarse.parity > 0][:count]
    e2 = fine.energies[fine.parity > 0][:count]
    return (4.0 * e2 - e1) / 3.0
