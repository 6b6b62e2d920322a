"""Squared commutator C(t) = D + I - 2 Re F after a quench, and its time averages.

Convention: C(t) = || (A(t) B - B A(t)) psi ||^2 (non-negative form), with

    D(t) = || A(t) B psi ||^2
    I(t) = || B A(t) psi ||^2
    F(t) = < B A(t) psi | A(t) B psi >

All routines work in the eigenbasis of the final Hamiltonian: ``A`` and
``B`` are matrices there, ``c`` the overlaps of the initial state.
"""
from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .spectral import ResonanceReport, tolerance_partition

_GEMM_BUDGET = 2 ** 24   # complex entries per time chunk


class UnderResolvedWarning(UserWarning):
    pass


class ConditionError(RuntimeError):
    pass


@dataclass(frozen=True)
class OtocSeries:
    times: np.ndarray
    D: np.ndarray
    I: np.ndarray
    F: np.ndarray
    C: np.ndarray
    labels: tuple = ("A", "B")

    def identity_residual(self) -> float:
        return float(np.max(np.abs(self.C - (self.D + self.I - 2 * self.F.real)))) if len(self.C) else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,ReD,ImD,ReI,ImI,ReF,ImF,C\n")
        for row in zip(self.times, self.D.real, self.D.imag, self.I.real, self.I.imag,
                       self.F.real, self.F.imag, self.C):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()


def _op(M):
    return M.tocsr() if sp.issparse(M) else np.asarray(M)


def _vectors(A, B, c):
    A, B = _op(A), _op(B)
    c = np.asarray(c)
    if A.shape != B.shape or A.shape[0] != len(c):
        raise ValueError("operators and overlaps are not in one basis")
    return A, B, c, B @ c


def _col_norms2(B) -> np.ndarray:
    if sp.issparse(B):
        return np.asarray(abs(B).power(2).sum(axis=0)).ravel()
    return np.sum(np.abs(B) ** 2, axis=0)


def otoc_series(energies, A, B, c, times) -> OtocSeries:
    """D, I, F, C on a time grid from matrix-vector products (O(d^2) per point)."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        raise ValueError("empty time grid")
    A, B, c, u = _vectors(A, B, c)
    E = np.asarray(energies, dtype=float)
    d = len(E)
    out = {k: np.empty(len(times), dtype=complex) for k in "DIF"}
    C = np.empty(len(times))
    step = max(1, _GEMM_BUDGET // max(d, 1))
    for a in range(0, len(times), step):
        t = times[a:a + step]
        ph = np.exp(-1j * np.outer(E, t))          # e^{-iEt}
        w = ph.conj() * (A @ (ph * u[:, None]))     # A(t) B psi
        v = ph.conj() * (A @ (ph * c[:, None]))     # A(t) psi
        z = B @ v                                   # B A(t) psi
        out["D"][a:a + step] = np.sum(np.abs(w) ** 2, axis=0)
        out["I"][a:a + step] = np.sum(np.abs(z) ** 2, axis=0)
        out["F"][a:a + step] = np.sum(z.conj() * w, axis=0)
        C[a:a + step] = np.sum(np.abs(w - z) ** 2, axis=0)
    return OtocSeries(times, out["D"], out["I"], out["F"], C)


def otoc_series_bruteforce(energies, A, B, c, times) -> OtocSeries:
    """Literal quadruple sums over eigenstates; test oracle for small d only."""
    E = np.asarray(energies, dtype=float)
    A, B, c = (np.asarray(x, dtype=complex) for x in (A, B, c))
    if len(E) > 60:
        raise ValueError("quadruple sums are limited to d <= 60")
    Ad, Bd = A.conj().T, B.conj().T
    AA, BB = Ad @ A, Bd @ B
    b = B @ c
    D, I, F = [], [], []
    for t in np.atleast_1d(times):
        ph = np.exp(-1j * (E[:, None] - E[None, :]) * t)      # e^{-i E_ab t}
        # D: sum c_j* c_k e^{-i E_mn t} B+_jn <A+A>_nm B_mk
        D.append(np.einsum("j,k,mn,jn,nm,mk->", c.conj(), c, ph, Bd, AA, B))
        # I and F share the phase e^{-i(E_kj + E_nm) t}
        I.append(np.einsum("j,k,kj,nm,jn,nm,mk->", c.conj(), c, ph, ph, Ad, BB, A))
        F.append(np.einsum("j,k,kj,nm,jn,nm,mk->", c.conj(), b, ph, ph, Ad, Bd, A))
    D, I, F = (np.array(x) for x in (D, I, F))
    return OtocSeries(np.atleast_1d(times), D, I, F, (D + I - 2 * F.real).real)


@dataclass(frozen=True)
class TimeAverage:
    value: float
    method: str
    D: float = math.nan
    I: float = math.nan
    F: complex = math.nan
    params: dict = field(default_factory=dict)


def relevant_span(energies, A, B, c, floor: float = 1e-10) -> float:
    """Spread of the levels that carry weight in c, Bc, Ac or ABc."""
    A, B, c, u = _vectors(A, B, c)
    mask = np.zeros(len(c), dtype=bool)
    for v in (c, u, A @ c, A @ u):
        a = np.abs(v)
        if a.max() > 0:
            mask |= a > floor * a.max()
    E = np.asarray(energies)[mask]
    return float(E.max() - E.min()) if len(E) else 0.0


def window_average(energies, A, B, c, T: float = 200 * np.pi, dt: float | None = None) -> TimeAverage:
    """Trapezoidal mean of C(t) over [0, T]."""
    if T <= 0:
        raise ValueError("T must be positive")
    span = relevant_span(energies, A, B, c)
    dt_max = np.pi / (4 * span) if span > 0 else T
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1 + 1e-12):
        warnings.warn(f"dt={dt:g} does not resolve the fastest Bohr frequency "
                      f"(need dt <= {dt_max:g})", UnderResolvedWarning, stacklevel=2)
    n = int(np.ceil(T / dt))
    t = np.linspace(0.0, T, n + 1)
    s = otoc_series(energies, A, B, c, t)
    mean = lambda y: np.trapezoid(y, t) / T
    return TimeAverage(float(mean(s.C)), "window", float(mean(s.D.real)), float(mean(s.I.real)),
                       complex(mean(s.F)), {"T": T, "dt": float(t[1] - t[0]), "points": n + 1})


def exact_time_average(energies, A, B, c, tol: float = 1e-8) -> TimeAverage:
    """Infinite-time average from the Bohr-frequency classes of the pairs (n, m).

    With ``A(t)_nm = A_nm exp(i w_nm t)`` both ``A(t)B psi`` and
    ``B A(t) psi`` are sums over distinct frequencies ``w`` of fixed vectors
    ``beta_w`` and ``B gamma_w``; the average of ``C`` is
    ``sum_w ||beta_w - B gamma_w||^2``.  Singleton classes are summed in
    closed form, larger ones through sparse class matrices.  No condition on
    the spectrum is assumed.
    """
    A, B, c, u = _vectors(A, B, c)
    E = np.asarray(energies, dtype=float)
    d = len(E)
    if sp.issparse(A):
        coo = A.tocoo()
        n, m, a = coo.row, coo.col, coo.data
    else:
        n, m = np.nonzero(A)
        a = A[n, m]
    labels, _, merged = tolerance_partition(E[n] - E[m], tol)
    if merged:
        warnings.warn(f"tolerance {tol:g} chains distinct Bohr frequencies", UserWarning, stacklevel=2)
    sizes = np.bincount(labels)
    single = sizes[labels] == 1
    BB = _col_norms2(B)                            # (B^+ B)_nn
    Bdiag = B.diagonal() if sp.issparse(B) else np.diag(B)
    # singleton: beta = a u_m e_n, gamma = a c_m e_n
    s_n, s_a, s_u, s_c = n[single], a[single], u[m[single]], c[m[single]]
    w2 = np.abs(s_a) ** 2
    D = float(np.sum(w2 * np.abs(s_u) ** 2))
    I = float(np.sum(w2 * np.abs(s_c) ** 2 * BB[s_n]))
    F = complex(np.sum(w2 * np.conj(s_c) * np.conj(Bdiag[s_n]) * s_u))
    multi = ~single
    if np.any(multi):
        _, cols = np.unique(labels[multi], return_inverse=True)
        ncls = int(cols.max()) + 1
        rows = n[multi]
        beta = sp.csc_matrix((a[multi] * u[m[multi]], (rows, cols)), shape=(d, ncls))
        gam = sp.csc_matrix((a[multi] * c[m[multi]], (rows, cols)), shape=(d, ncls))
        step = max(1, _GEMM_BUDGET // max(d, 1))
        if sp.issparse(B):
            # class columns in chunks bounded by the expected fill of B @ gamma
            D += float(np.sum(np.abs(beta.data) ** 2))
            fill = max(1.0, B.nnz / max(d, 1))
            budget = max(1, int(_GEMM_BUDGET / fill))
            ptr = gam.indptr
            k = 0
            while k < ncls:
                stop = int(np.searchsorted(ptr, ptr[k] + budget, side="right")) - 1
                stop = min(ncls, max(stop, k + 1))
                G = B @ gam[:, k:stop]
                I += float(np.sum(np.abs(G.data) ** 2))
                # sum conj(G) beta = conj(sum G conj(beta)); keeps G in its own format
                F += complex(np.conj(G.multiply(beta[:, k:stop].conj().tocsr()).sum()))
                k = stop
        else:
            for k in range(0, ncls, step):
                bk = beta[:, k:k + step].toarray()
                gk = B @ gam[:, k:k + step].toarray()
                D += float(np.sum(np.abs(bk) ** 2))
                I += float(np.sum(np.abs(gk) ** 2))
                F += complex(np.sum(gk.conj() * bk))
    C = D + I - 2 * F.real
    return TimeAverage(float(C), "exact_resonance", D, I, F, {"tol": tol, "classes": int(len(sizes))})


@dataclass(frozen=True)
class KMatrix:
    K: np.ndarray

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.K + self.K.conj().T))[0])


def k_matrix(A, B) -> KMatrix:
    """``K^{AB} = A^+ diag(<B^+B>_nn) A``."""
    A = np.asarray(A)
    BB = _col_norms2(np.asarray(B))
    K = A.conj().T @ (BB[:, None] * A)
    return KMatrix(0.5 * (K + K.conj().T))


def conditioned_averages(A, B, c, report: ResonanceReport) -> TimeAverage:
    """D, I, F, C averages valid under conditions (i)-(iii): F = 0, C = D + I."""
    if not report.passed:
        raise ConditionError(
            "spectral conditions (i)-(iii) do not hold for these inputs; "
            "use exact_time_average instead\n" + report.summary())
    c = np.asarray(c)
    K_BA = k_matrix(B, A).K
    K_AB = k_matrix(A, B).K
    D = float(np.real(c.conj() @ K_BA @ c))
    I = float(np.sum(np.abs(c) ** 2 * np.real(np.diag(K_AB))))
    return TimeAverage(D + I, "conditioned", D, I, 0j, {"tol": report.tol})


def tridiagonal_mass_fraction(K: np.ndarray) -> float:
    """Share of sum |K_jk| lying off the three central diagonals."""
    a = np.abs(np.asarray(K))
    j, k = np.indices(a.shape)
    total = a.sum()
    return float(a[np.abs(j - k) > 1].sum() / total) if total > 0 else 0.0
