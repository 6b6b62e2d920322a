"""Quench pipeline on the tagged space: one final eigensystem, many initial traps."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import fock, hobasis, otoc, quench, spectral

CM_LABEL_TOL = 1e-6


class ContaminationError(RuntimeError):
    """CM quantum numbers are not integers: the cutoff mixes CM sectors."""


@dataclass(frozen=True)
class Decomposition:
    C_xx: float
    C_YY: float
    C_RR: float
    N: int
    C_YY_conditioned: float | None = None

    @property
    def additivity_residual(self) -> float:
        return abs(self.C_xx - self.C_YY - self.C_RR / self.N ** 2)


class QuenchSystem:
    """Final Hamiltonian (trap 1) of N tagged bosons, diagonalised once.

    Degenerate levels are resolved by the CM number and parity so that
    eigenvectors carry definite CM quanta.
    """

    def __init__(self, N: int, g: float, e_cut: float, mode: str = "effective",
                 eig: spectral.EigenSystem | None = None, n_orb: int | None = None):
        self.N, self.g, self.e_cut, self.mode = N, float(g), float(e_cut), mode
        self.tagged = fock.build_tagged_space(N, e_cut, n_orb)
        self.sym = fock.build_fock_space(N, e_cut, n_orb)
        self.ops = fock.particle_operators(self.tagged)
        self.H = fock.build_hamiltonian(self.tagged, g, 1.0, mode)
        if eig is None:
            eig = spectral.diagonalize(self.H, commuting=[self.ops["n_cm"], self.tagged.parity()])
        elif eig.basis_id != self.tagged.basis_id or eig.dim != self.tagged.dim:
            raise ValueError("cached eigensystem does not match this basis")
        self.eig = eig
        self._embed = fock.embedding_matrix(self.sym, self.tagged)
        self._mats: dict[str, np.ndarray] = {}

    @property
    def energies(self) -> np.ndarray:
        return self.eig.energies

    def matrix(self, name: str) -> np.ndarray:
        """Operator ``x1``, ``p1``, ``Y1`` or ``R`` in the eigenbasis."""
        if name not in self._mats:
            if name == "p1":
                # p1 = -i (i p1): keep the real antisymmetric core
                core = self.eig.transform(self.ops["ip1"])
                self._mats[name] = -1j * core
            else:
                self._mats[name] = self.eig.transform(self.ops[name])
        return self._mats[name]

    @cached_property
    def cm_quanta(self) -> np.ndarray:
        V = self.eig.vectors
        n = np.einsum("ij,ij->j", V, self.ops["n_cm"].data @ V)
        off = np.abs(n - np.rint(n))
        if off.max() > CM_LABEL_TOL:
            j = int(np.argmax(off))
            raise ContaminationError(
                f"eigenstate {j} has non-integer CM quanta {n[j]:.8f}; cutoff mixes CM sectors")
        return np.rint(n).astype(int)

    @cached_property
    def rel_sector(self) -> np.ndarray:
        return np.flatnonzero(self.cm_quanta == 0)

    def initial_state(self, gamma: float, gate: float = quench.COMPLETENESS_GATE):
        psi_s, E_I, comp = quench.initial_ground_state(self.sym, self.g, gamma, self.mode, gate)
        psi = self._embed @ psi_s
        lost = 1.0 - float(psi @ psi)
        if lost > 1e-12:
            raise fock.LossyEmbeddingError(f"embedding loses norm {lost:.3e}")
        return psi, E_I, comp

    def quench(self, gamma: float, gate: float = quench.COMPLETENESS_GATE) -> quench.QuenchRecord:
        psi, E_I, comp = self.initial_state(gamma, gate)
        return quench.overlaps(self.eig, psi, self.N, self.g, gamma, E_I, comp, gate)

    def work(self, record: quench.QuenchRecord) -> quench.WorkStats:
        return quench.work_stats(record, self.energies)

    def rel_matrix(self, name: str) -> np.ndarray:
        """Relative part of a particle-1 operator (``Y1`` or ``Pi1``) on the REL sector."""
        key = "rel:" + name
        if key not in self._mats:
            Q = self.eig.vectors[:, self.rel_sector]
            if name == "Y1":
                M = Q.T @ (self.ops["Y1"].data @ Q)
            elif name == "Pi1":
                ip = self.tagged.one_body(hobasis.ip_matrix(self.tagged.n_orb), hermitian=False)
                core = self.ops["ip1"].data - ip.data / self.N
                M = -1j * (Q.T @ (core @ Q))
            else:
                raise ValueError(f"no relative part defined for {name!r}")
            self._mats[key] = M
        return self._mats[key]

    def cm_overlaps(self, record: quench.QuenchRecord, floor: float = 1e-14) -> np.ndarray:
        """``c[k, j] = <k CM quanta, REL state j | psi_I>``, rows up to the last relevant k.

        Uses ``|k, j> = (B^+/sqrt(N))^k |j> / sqrt(k!)``; ``B`` only lowers
        quanta, so the sequence never leaves the truncated space.
        """
        Q = self.eig.vectors[:, self.rel_sector]
        B = self.ops["B"].data
        v = self.eig.vectors @ record.c
        rows = []
        for k in range(int(self.tagged.quanta.max()) + 1):
            rows.append(Q.T @ v)
            v = (B @ v) / np.sqrt(self.N * (k + 1))
            if float(v @ v) < floor:
                break
        return np.array(rows)

    def product_inputs(self, record: quench.QuenchRecord, pair=("x1", "x1")):
        """Energies, operators and overlaps of the CM-completed system CM (x) REL.

        The cutoff gives each CM sector a slightly different relative basis,
        which splits the CM-ladder resonances by ~1e-3 and makes the raw
        infinite-time average meaningless.  Here every REL-sector state is
        dressed with an exact CM ladder instead.
        """
        ck = self.cm_overlaps(record)
        n_cm = ck.shape[0] + 1          # one spare rung keeps the top edge clean
        ck = np.vstack([ck, np.zeros((1, ck.shape[1]))])
        E_rel = self.energies[self.rel_sector]
        energies = (np.arange(n_cm)[:, None] + E_rel[None, :]).ravel()
        eye_cm = sp.identity(n_cm, format="csr")
        eye_rel = sp.identity(len(E_rel), format="csr")
        cm_x = sp.csr_matrix(hobasis.x_matrix(n_cm))
        cm_p = sp.csr_matrix(-1j * hobasis.ip_matrix(n_cm))

        def build(name):
            if name == "x1":
                return sp.kron(cm_x, eye_rel) / np.sqrt(self.N) + sp.kron(eye_cm, self.rel_matrix("Y1"))
            if name == "p1":
                return sp.kron(cm_p, eye_rel) / np.sqrt(self.N) + sp.kron(eye_cm, self.rel_matrix("Pi1"))
            if name == "R":
                return sp.kron(cm_x, eye_rel)
            if name == "Y1":
                return sp.kron(eye_cm, self.rel_matrix("Y1"))
            raise ValueError(f"unknown operator {name!r}")

        return energies, build(pair[0]).tocsr(), build(pair[1]).tocsr(), ck.ravel()

    def average(self, record: quench.QuenchRecord, pair=("x1", "x1"), method: str = "exact",
                tol: float = 1e-8, T: float = 200 * np.pi, dt: float | None = None) -> otoc.TimeAverage:
        """Time-averaged squared commutator.

        ``exact`` and ``window`` use the CM-completed system; ``raw_exact``
        and ``raw_window`` the truncated tagged spectrum as it is.
        """
        if method.startswith("raw_"):
            E, A, B, c = self.energies, self.matrix(pair[0]), self.matrix(pair[1]), record.c
            method = method[4:]
        else:
            E, A, B, c = self.product_inputs(record, pair)
        if method == "exact":
            return otoc.exact_time_average(E, A, B, c, tol)
        if method == "window":
            return otoc.window_average(E, A, B, c, T, dt)
        raise ValueError(f"unknown averaging method {method!r}")

    def series(self, record: quench.QuenchRecord, times, pair=("x1", "x1"),
               raw: bool = False) -> otoc.OtocSeries:
        if raw:
            E, A, B, c = self.energies, self.matrix(pair[0]), self.matrix(pair[1]), record.c
        else:
            E, A, B, c = self.product_inputs(record, pair)
        return otoc.otoc_series(E, A, B, c, times)

    def rel_inputs(self, record: quench.QuenchRecord, name: str = "Y1"):
        """Energies (CM ground energy removed), operator and overlaps on the REL sector."""
        idx = self.rel_sector
        c = record.c[idx]
        norm = np.linalg.norm(c)
        if norm == 0:
            raise ValueError("initial state has no weight in the CM ground sector")
        A = self.matrix(name)[np.ix_(idx, idx)]
        return self.energies[idx] - 0.5, A, c / norm

    def rel_report(self, record: quench.QuenchRecord, name: str = "Y1",
                   tol: float = 1e-8) -> spectral.ResonanceReport:
        E, A, c = self.rel_inputs(record, name)
        return spectral.check_conditions(E, {name: A}, tol, support=weighted_support(A, c))

    def decomposition(self, record: quench.QuenchRecord, tol: float = 1e-8) -> Decomposition:
        C_xx = self.average(record, ("x1", "x1"), "exact", tol).value
        E, Y, c = self.rel_inputs(record, "Y1")
        C_YY = otoc.exact_time_average(E, Y, Y, c, tol).value
        report = spectral.check_conditions(E, {"Y1": Y}, tol, support=weighted_support(Y, c))
        C_cond = otoc.conditioned_averages(Y, Y, c, report).value if report.passed else None
        C_RR = cm_average(record.gamma)
        return Decomposition(C_xx, C_YY, C_RR, self.N, C_cond)


def weighted_support(B, c, floor: float = 1e-12):
    """Index sets (rows, cols) for the first pair of a quadruplet that can
    carry weight: ``j`` in supp(c), ``k`` in supp(c) or supp(B c)."""
    in_c = np.abs(c) > floor
    return np.flatnonzero(in_c), np.flatnonzero(in_c | (np.abs(B @ c) > floor))


def cm_average(gamma: float, e_cut: float = 60.5, tol: float = 1e-8) -> float:
    """Time-averaged squared commutator of a single oscillator coordinate after the quench.

    The CM coordinate is exactly such an oscillator, so this is C_RR.
    """
    space = fock.build_fock_space(1, e_cut)
    H = fock.build_hamiltonian(space, 0.0, 1.0)
    eig = spectral.diagonalize(H)
    psi, _, _ = quench.initial_ground_state(space, 0.0, gamma, gate=1 - 1e-12)
    c = eig.vectors.T @ psi
    X = eig.transform(space.one_body(hobasis.x_matrix(space.n_orb)))
    return otoc.exact_time_average(eig.energies, X, X, c, tol).value
