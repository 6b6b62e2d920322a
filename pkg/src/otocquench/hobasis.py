"""Harmonic-oscillator orbitals of the unit-frequency trap.

Orbitals are ``u_n(x) = p_n(x) exp(-x^2/2)`` with ``p_n`` the normalised
Hermite polynomial part.  One-body matrices come from ladder algebra; only
the contact tensor needs quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement, permutations

import numpy as np
from scipy.linalg import eigh_tridiagonal

PI_QUARTER = np.pi ** -0.25
_RESCALE = 1e100
_LOG_RESCALE = np.log(_RESCALE)


def hermite_functions(n_count: int, x, log_prefactor=None) -> np.ndarray:
    """Table ``exp(log_prefactor) * p_n(x)`` of shape ``(len(x), n_count)``.

    The recurrence runs on the polynomial part with a per-point log scale so
    that large ``n`` and large ``|x|`` neither overflow nor lose the
    Gaussian factor to underflow before it is combined with the prefactor.
    With ``log_prefactor = -x**2/2`` the table holds the orbitals themselves.
    """
    x = np.asarray(x, dtype=float)
    if log_prefactor is None:
        log_prefactor = -0.5 * x ** 2
    log_prefactor = np.broadcast_to(np.asarray(log_prefactor, dtype=float), x.shape)
    out = np.empty(x.shape + (n_count,))
    scale = np.zeros_like(x)
    prev = np.zeros_like(x)
    cur = np.full_like(x, PI_QUARTER)
    for n in range(n_count):
        out[..., n] = cur * np.exp(scale + log_prefactor)
        nxt = np.sqrt(2.0 / (n + 1)) * x * cur - np.sqrt(n / (n + 1.0)) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > _RESCALE
        if np.any(big):
            cur[big] /= _RESCALE
            prev[big] /= _RESCALE
            scale[big] += _LOG_RESCALE
    return out


def _last_two(q: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``p_q(x)/p_{q-1}(x)`` and ``log|p_{q-1}(x)|``."""
    scale = np.zeros_like(x)
    prev = np.zeros_like(x)
    cur = np.full_like(x, PI_QUARTER)
    for n in range(q - 1):
        nxt = np.sqrt(2.0 / (n + 1)) * x * cur - np.sqrt(n / (n + 1.0)) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > _RESCALE
        if np.any(big):
            cur[big] /= _RESCALE
            prev[big] /= _RESCALE
            scale[big] += _LOG_RESCALE
    top = np.sqrt(2.0 / q) * x * cur - np.sqrt((q - 1.0) / q) * prev
    return top / cur, np.log(np.abs(cur)) + scale


def gauss_hermite(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes and log-weights for the weight ``exp(-x^2)``.

    Nodes come from the Jacobi matrix and two Newton polishes; weights use
    ``w_i = 1 / (q p_{q-1}(x_i)^2)`` in log form so that high orders do not
    underflow.  Nodes and weights are exactly symmetric.
    """
    q = int(order)
    off = np.sqrt(np.arange(1, q) / 2.0)
    x = eigh_tridiagonal(np.zeros(q), off, eigvals_only=True)
    for _ in range(2):
        ratio, _ = _last_two(q, x)
        x = x - ratio / np.sqrt(2.0 * q)
    x = 0.5 * (x - x[::-1])
    _, log_p = _last_two(q, x)
    log_w = -np.log(q) - 2.0 * log_p
    log_w = 0.5 * (log_w + log_w[::-1])
    return x, log_w


@dataclass(frozen=True)
class OrbitalBasis:
    n_orb: int
    quad_order: int
    quad_nodes: np.ndarray
    quad_weights: np.ndarray
    orbital_values: np.ndarray   # u_n(x_q), shape (quad_order, n_orb)
    folded_values: np.ndarray    # u_n(x_q) * sqrt(w_q exp(x_q^2))

    def overlap(self) -> np.ndarray:
        f = self.folded_values
        return f.T @ f


def build_orbital_basis(n_orb: int, quad_order: int | None = None) -> OrbitalBasis:
    if n_orb < 1:
        raise ValueError("n_orb must be >= 1")
    if quad_order is None:
        quad_order = 4 * n_orb
    if quad_order < 2 * n_orb:
        raise ValueError(
            f"quad_order={quad_order} too small: quartic orbital products need "
            f"quad_order >= 2*n_orb = {2 * n_orb}")
    x, log_w = gauss_hermite(quad_order)
    values = hermite_functions(n_orb, x)
    folded = hermite_functions(n_orb, x, 0.5 * log_w)
    return OrbitalBasis(n_orb, quad_order, x, np.exp(log_w), values, folded)


def x_matrix(n_orb: int) -> np.ndarray:
    off = np.sqrt(np.arange(1, n_orb) / 2.0)
    return np.diag(off, 1) + np.diag(off, -1)


def ip_matrix(n_orb: int) -> np.ndarray:
    """``i<m|p|n>``: real antisymmetric; ``<n-1|ip|n> = sqrt(n/2)``."""
    off = np.sqrt(np.arange(1, n_orb) / 2.0)
    return np.diag(off, 1) - np.diag(off, -1)


def x2_matrix(n_orb: int) -> np.ndarray:
    """Exact ``<m|x^2|n>`` (not the square of the truncated x matrix)."""
    n = np.arange(n_orb)
    off = 0.5 * np.sqrt((n[:-2] + 1.0) * (n[:-2] + 2.0))
    return np.diag(n + 0.5) + np.diag(off, 2) + np.diag(off, -2)


def lowering_matrix(n_orb: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_orb, dtype=float)), 1)


def h_gamma(n_orb: int, gamma: float) -> np.ndarray:
    """One-body ``p^2/2 + gamma^2 x^2/2`` in the unit-frequency orbitals."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    h = 0.5 * (gamma ** 2 - 1.0) * x2_matrix(n_orb)
    h[np.diag_indices(n_orb)] += np.arange(n_orb) + 0.5
    return h


@dataclass(frozen=True)
class OneBodyMatrices:
    gamma: float
    x_mat: np.ndarray
    ip_mat: np.ndarray
    x2_mat: np.ndarray
    h_mat: np.ndarray

    def h_gamma(self, gamma: float) -> np.ndarray:
        return h_gamma(self.x_mat.shape[0], gamma)


def one_body_matrices(basis: OrbitalBasis | int, gamma: float = 1.0) -> OneBodyMatrices:
    n = basis if isinstance(basis, int) else basis.n_orb
    return OneBodyMatrices(gamma, x_matrix(n), ip_matrix(n), x2_matrix(n), h_gamma(n, gamma))


@dataclass(frozen=True)
class InteractionTensor:
    """``U[i,j,k,l] = int u_i u_j u_k u_l dx`` over all index orders."""
    U: np.ndarray

    @property
    def n_orb(self) -> int:
        return self.U.shape[0]


def _sorted_quadruples(n: int) -> np.ndarray:
    q = np.array(list(combinations_with_replacement(range(n), 4)), dtype=np.intp).T
    return q[:, q.sum(axis=0) % 2 == 0]


def interaction_tensor(basis: OrbitalBasis) -> InteractionTensor:
    """Contact tensor from a sqrt(2)-rescaled Gauss-Hermite grid.

    With ``x = s/sqrt(2)`` the quartic integrand is ``exp(-s^2)`` times a
    polynomial of degree ``4(n_orb-1)``, integrated exactly once
    ``quad_order >= 2*n_orb``.  Only sorted index quadruples are computed;
    the other orders are filled by scattering.
    """
    n = basis.n_orb
    s, log_w = gauss_hermite(basis.quad_order)
    f = hermite_functions(n, s / np.sqrt(2.0), 0.25 * (log_w - 0.5 * np.log(2.0)))
    quads = _sorted_quadruples(n)
    vals = np.empty(quads.shape[1])
    chunk = 20000
    for a in range(0, quads.shape[1], chunk):
        i, j, k, l = quads[:, a:a + chunk]
        vals[a:a + chunk] = np.einsum("qa,qa,qa,qa->a", f[:, i], f[:, j], f[:, k], f[:, l])
    U = np.zeros((n, n, n, n))
    for perm in set(permutations(range(4))):
        U[tuple(quads[list(perm)])] = vals
    return InteractionTensor(U)


@lru_cache(maxsize=8)
def contact_tensor(n_orb: int) -> np.ndarray:
    """Cached contact tensor with the default quadrature order."""
    U = interaction_tensor(build_orbital_basis(n_orb)).U
    U.setflags(write=False)
    return U
