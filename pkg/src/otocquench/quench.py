"""Sudden trap quench: initial state, overlaps, and work statistics."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import fock
from .spectral import EigenSystem, diagonalize

COMPLETENESS_GATE = 0.999


class CompletenessError(RuntimeError):
    """Truncated basis does not hold the initial state well enough."""


def shell_completeness(space, psi: np.ndarray, shells: int = 2) -> float:
    """``1 -`` weight of ``psi`` on the top ``shells`` quanta shells of the basis.

    Diagnostic only: for contact interactions the cusp alone puts ~1e-3 of
    weight near any cutoff, whatever the trap.
    """
    q = space.quanta
    top = q >= q.max() - shells + 1
    return float(1.0 - np.sum(np.abs(psi[top]) ** 2))


def squeezed_completeness(N: int, gamma: float, K: int) -> float:
    """Weight of the non-interacting trap-``gamma`` ground state within ``K`` quanta.

    Each particle sits in a squeezed vacuum with
    ``|<2m|0_gamma>|^2 = sqrt(1 - t^2) C(2m, m) (t/2)^(2m)``,
    ``t = (1 - gamma)/(1 + gamma)``; the total quanta distribution is the
    N-fold convolution.  This is the frame-mismatch part of the truncation
    error and is exact at g = 0.
    """
    if gamma <= 0 or N < 1:
        raise ValueError("need N >= 1 and gamma > 0")
    t2 = ((1.0 - gamma) / (1.0 + gamma)) ** 2
    p = np.zeros(K + 1)
    m = np.arange(K // 2 + 1)
    # C(2m, m) / 4^m by recursion keeps this finite for large m
    ratio = np.concatenate([[1.0], np.cumprod((2 * m[1:] - 1) / (2 * m[1:]))])
    p[::2] = np.sqrt(1.0 - t2) * ratio * t2 ** m
    total = np.zeros(K + 1)
    total[0] = 1.0
    for _ in range(N):
        total = np.convolve(total, p)[:K + 1]
    return float(min(1.0, total.sum()))


def initial_ground_state(space, g: float, gamma: float, mode: str = "bare",
                         gate: float = COMPLETENESS_GATE):
    """Ground state of the trap-``gamma`` Hamiltonian in the unit-frequency basis.

    Completeness is judged by ``squeezed_completeness`` at the basis' quanta
    budget.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    comp = squeezed_completeness(space.N, gamma, fock.quanta_budget(space.N, space.e_cut))
    if comp < gate:
        raise CompletenessError(
            f"trap-{gamma:g} ground state keeps only {comp:.6f} of its weight below the "
            f"cutoff (gate {gate}); raise e_cut or use gamma closer to 1")
    H = fock.build_hamiltonian(space, g, gamma, mode)
    if H.dim > 600 and H.is_sparse:
        eig = diagonalize(H, k=1)
    else:
        eig = diagonalize(H)
    psi = eig.vectors[:, 0].copy()
    return psi, float(eig.energies[0]), comp


@dataclass(frozen=True)
class QuenchRecord:
    N: int
    g: float
    gamma: float
    E_I: float
    c: np.ndarray
    completeness: float


def overlaps(eig: EigenSystem, psi: np.ndarray, N: int = 0, g: float = 0.0,
             gamma: float = 1.0, E_I: float = float("nan"), completeness: float | None = None,
             gate: float = COMPLETENESS_GATE) -> QuenchRecord:
    c = eig.vectors.conj().T @ psi
    if c[0] < 0:
        c = -c
    if completeness is None:
        completeness = float(np.sum(np.abs(c) ** 2))
    if completeness < gate:
        raise CompletenessError(f"completeness {completeness:.6f} below {gate}")
    return QuenchRecord(N, g, gamma, E_I, c, completeness)


@dataclass(frozen=True)
class WorkStats:
    W: np.ndarray
    weights: np.ndarray
    energies: np.ndarray
    mean: float
    second: float

    @property
    def variance(self) -> float:
        return max(0.0, self.second - self.mean ** 2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("j,E_j,W_j,weight\n")
        for j, (E, W, w) in enumerate(zip(self.energies, self.W, self.weights)):
            buf.write(f"{j},{E:.17g},{W:.17g},{w:.17g}\n")
        return buf.getvalue()


def work_stats(record: QuenchRecord, energies: np.ndarray) -> WorkStats:
    w = np.abs(record.c) ** 2
    W = np.asarray(energies) - record.E_I
    mean = float(np.sum(w * W))
    # variance from centred moments is better conditioned than <W^2> - <W>^2
    var = float(np.sum(w * (W - mean) ** 2))
    return WorkStats(W, w, np.asarray(energies), mean, var + mean ** 2)


def energy_variance(H: fock.ManyBodyOperator, psi: np.ndarray) -> float:
    """``<H^2> - <H>^2`` in ``psi``; equals the work variance when ``psi`` is the initial state."""
    Hpsi = H.data @ psi
    e = float(np.vdot(psi, Hpsi).real)
    return float(np.vdot(Hpsi, Hpsi).real - e * e)


def analytic_limit_variance(N: int, gamma: float, limit: str) -> float:
    """Closed-form work variance of the non-interacting and hard-core limits."""
    if N < 1 or gamma <= 0:
        raise ValueError("need N >= 1 and gamma > 0")
    s = (gamma - 1.0 / gamma) ** 2
    if limit == "g0":
        return N / 8.0 * s
    if limit == "tg":
        return N * (N * N + 2) / 24.0 * s
    raise ValueError(f"unknown limit {limit!r}; use 'g0' or 'tg'")

