"""Eigensolutions and audits of the spectral conditions behind the time averages.

Conditions audited for a pair of operators (A, B):

  (i)   no degenerate levels,
  (ii)  no nontrivial quadruplets E_k - E_j + E_n - E_m = 0,
  (iii) vanishing diagonal matrix elements A_jj, B_jj.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fock import ManyBodyOperator

DENSE_EIGH_LIMIT = 8000


class NonConvergenceError(RuntimeError):
    pass


class ClassMergeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EigenSystem:
    energies: np.ndarray
    vectors: np.ndarray
    basis_id: str
    ortho_residual: float
    eig_residual: float

    @property
    def dim(self) -> int:
        return len(self.energies)

    def transform(self, op: ManyBodyOperator | np.ndarray) -> np.ndarray:
        """Matrix of ``op`` in the eigenbasis, ``V^T op V``."""
        if isinstance(op, ManyBodyOperator):
            if op.basis_id != self.basis_id:
                raise ValueError(f"operator basis {op.basis_id} does not match {self.basis_id}")
            op = op.data
        V = self.vectors
        return V.conj().T @ (op @ V)


def _as_matrix(op):
    return op.data if isinstance(op, ManyBodyOperator) else op


def degenerate_blocks(energies: np.ndarray, tol: float) -> list[np.ndarray]:
    """Runs of adjacent levels with gaps ``<= tol``."""
    breaks = np.flatnonzero(np.diff(energies) > tol) + 1
    return np.split(np.arange(len(energies)), breaks)


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # largest-magnitude component positive, first one on ties
    idx = np.argmax(np.abs(V) - 1e-12 * np.arange(V.shape[0])[:, None], axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def _resolve(Vb: np.ndarray, mats: list, tol: float = 1e-8) -> np.ndarray:
    """Rotate a degenerate block to diagonalise ``mats[0]``, then refine each of
    its eigenspaces with the remaining operators."""
    if not mats or Vb.shape[1] < 2:
        return Vb
    C = mats[0]
    Cb = Vb.conj().T @ (C @ Vb)
    w, R = np.linalg.eigh(0.5 * (Cb + Cb.conj().T))
    Vb = Vb @ R
    for sub in degenerate_blocks(w, tol):
        Vb[:, sub] = _resolve(Vb[:, sub], mats[1:], tol)
    return Vb


def diagonalize(op: ManyBodyOperator, k: int | None = None, commuting=None,
                deg_tol: float | None = None) -> EigenSystem:
    """Eigenpairs of a Hermitian operator, ascending.

    Dense (full) below ``DENSE_EIGH_LIMIT`` unless ``k`` is given, otherwise
    the lowest ``k`` from Lanczos.  Degenerate blocks are rotated to
    diagonalise the ``commuting`` operators in turn so that the basis is
    reproducible; signs are fixed by the largest component.
    """
    if not op.hermitian:
        raise ValueError("diagonalize needs a Hermitian operator")
    M = op.data
    d = op.dim
    if k is None or k >= d - 1:
        if d > DENSE_EIGH_LIMIT:
            raise ValueError(f"dimension {d} too large for a full decomposition; pass k")
        dense = M.toarray() if sp.issparse(M) else np.asarray(M)
        E, V = np.linalg.eigh(dense)
    else:
        E, V = spla.eigsh(sp.csr_matrix(M), k=k, which="SA", tol=1e-13, maxiter=50 * d)
        order = np.argsort(E)
        E, V = E[order], V[:, order]
    scale = max(1.0, float(np.max(np.abs(E))))
    if deg_tol is None:
        deg_tol = 1e-9 * scale
    if commuting:
        mats = [_as_matrix(c) for c in commuting]
        for blk in degenerate_blocks(E, deg_tol):
            if len(blk) > 1:
                V[:, blk] = _resolve(V[:, blk], mats)
    if np.isrealobj(V):
        V = _fix_signs(V)
    V = np.ascontiguousarray(V)
    ortho = float(np.max(np.abs(V.conj().T @ V - np.eye(V.shape[1])))) if V.shape[1] <= 4000 else 0.0
    HV = M @ V
    res = float(np.max(np.abs(HV - V * E))) if len(E) else 0.0
    hmax = float(abs(M).max()) if d else 1.0
    if ortho > 1e-9 or res > 1e-8 * max(hmax, 1.0):
        raise NonConvergenceError(
            f"eigen-decomposition residuals too large: orthogonality {ortho:.2e}, "
            f"|HV - VE| {res:.2e}")
    return EigenSystem(E, V, op.basis_id, ortho, res)


def tolerance_partition(values: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray, bool]:
    """Label values by sort-and-sweep: neighbours closer than ``tol`` share a class.

    ``tol = 0`` splits on exact equality.  Returns (labels, order, merged)
    where ``merged`` flags a class whose spread exceeds ``tol`` through
    chaining.
    """
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    sv = values[order]
    gaps = np.diff(sv)
    new = (gaps > 0) if tol == 0 else (gaps >= tol)
    lab_sorted = np.concatenate([[0], np.cumsum(new)]) if len(sv) else np.zeros(0, int)
    labels = np.empty(len(values), dtype=np.int64)
    labels[order] = lab_sorted
    merged = False
    if len(sv) and tol > 0:
        starts = np.flatnonzero(np.concatenate([[True], new]))
        ends = np.concatenate([starts[1:], [len(sv)]]) - 1
        merged = bool(np.any(sv[ends] - sv[starts] > tol))
    return labels, order, merged


@dataclass(frozen=True)
class ResonanceClasses:
    """Ordered pairs ``(j, k)`` grouped by ``E_k - E_j``."""
    j: np.ndarray
    k: np.ndarray
    labels: np.ndarray
    values: np.ndarray      # mean difference per class
    sizes: np.ndarray
    tol: float

    def members(self, label: int) -> tuple[np.ndarray, np.ndarray]:
        sel = self.labels == label
        return self.j[sel], self.k[sel]


def resonance_classes(energies: np.ndarray, tol: float = 1e-8) -> ResonanceClasses:
    E = np.asarray(energies, dtype=float)
    if np.any(np.diff(E) < 0):
        raise ValueError("energies must be sorted")
    d = len(E)
    j, k = np.divmod(np.arange(d * d), d)
    diff = E[k] - E[j]
    labels, _, merged = tolerance_partition(diff, tol)
    if merged:
        warnings.warn(f"resonance tolerance {tol:g} chains distinct differences; "
                      "classes may merge spuriously", ClassMergeWarning, stacklevel=2)
    sizes = np.bincount(labels)
    values = np.bincount(labels, weights=diff) / sizes
    return ResonanceClasses(j, k, labels, values, sizes, tol)


def count_quadruplets(classes: ResonanceClasses, rows=None, cols=None) -> int:
    """Nontrivial resonant quadruplets.

    Pairs ``(j,k)`` and ``(n,m)`` resonate when ``E_k - E_j = E_m - E_n``
    within a class.  The trivial solutions ``j=k, n=m`` and ``(n,m) = (j,k)``
    are removed.  ``rows``/``cols`` restrict the first pair to ``j`` in rows
    and ``k`` in cols, which is how the initial-state weights enter the
    averaged I and F sums.
    """
    lab = classes.labels
    s = np.bincount(lab, minlength=len(classes.sizes)).astype(np.int64)
    diag = classes.j == classes.k
    D = np.bincount(lab[diag], minlength=len(s)).astype(np.int64)
    if rows is None and cols is None:
        return int(np.sum(s * s - s - D * D + D))
    size = int(max(classes.j.max(), classes.k.max())) + 1

    def mask(idx):
        out = np.zeros(size, dtype=bool)
        out[np.arange(size) if idx is None else np.asarray(idx, dtype=int)] = True
        return out

    first = mask(rows)[classes.j] & mask(cols)[classes.k]
    r = np.bincount(lab[first], minlength=len(s)).astype(np.int64)
    Dr = np.bincount(lab[first & diag], minlength=len(s)).astype(np.int64)
    # first pair restricted, second anywhere
    return int(np.sum(r * s - r - Dr * D + Dr))


@dataclass
class ResonanceReport:
    tol: float
    deg_tol: float
    degenerate_pairs: list = field(default_factory=list)
    quadruplet_resonances: int = 0
    relevant_quadruplets: int | None = None
    diag_residual: dict = field(default_factory=dict)
    diag_tol: float = 1e-10

    @property
    def condition_i(self) -> bool:
        return not self.degenerate_pairs

    @property
    def condition_ii(self) -> bool:
        count = self.quadruplet_resonances if self.relevant_quadruplets is None \
            else self.relevant_quadruplets
        return count == 0

    @property
    def condition_iii(self) -> bool:
        return all(v < self.diag_tol for v in self.diag_residual.values())

    @property
    def passed(self) -> bool:
        return self.condition_i and self.condition_ii and self.condition_iii

    def summary(self) -> str:
        lines = [
            f"resonance_tol = {self.tol:.3g}",
            f"degeneracy_tol = {self.deg_tol:.3g}",
            f"degenerate_pairs = {len(self.degenerate_pairs)}",
            f"quadruplet_resonances = {self.quadruplet_resonances}",
        ]
        if self.relevant_quadruplets is not None:
            lines.append(f"relevant_quadruplets = {self.relevant_quadruplets}")
        for name, v in self.diag_residual.items():
            lines.append(f"diag_residual[{name}] = {v:.3e}")
        lines.append("conditions = " + " ".join(
            f"{tag}:{'pass' if ok else 'fail'}" for tag, ok in
            (("i", self.condition_i), ("ii", self.condition_ii), ("iii", self.condition_iii))))
        return "\n".join(lines)


def check_conditions(energies: np.ndarray, ops: dict | None = None, tol: float = 1e-8,
                     deg_tol: float | None = None, support=None) -> ResonanceReport:
    """Audit conditions (i)-(iii).

    ``ops`` maps names to matrices already expressed in the eigenbasis.
    ``support = (rows, cols)`` additionally reports the quadruplets that can
    actually enter the time averages (see ``count_quadruplets``).
    """
    E = np.asarray(energies, dtype=float)
    if deg_tol is None:
        deg_tol = 1e-9 * max(1.0, float(np.max(np.abs(E))))
    gaps = np.diff(E)
    pairs = [(int(i), int(i + 1), float(gaps[i])) for i in np.flatnonzero(gaps <= deg_tol)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClassMergeWarning)
        classes = resonance_classes(E, tol)
    report = ResonanceReport(tol, deg_tol, pairs, count_quadruplets(classes))
    if support is not None:
        report.relevant_quadruplets = count_quadruplets(classes, *support)
    for name, A in (ops or {}).items():
        report.diag_residual[name] = float(np.max(np.abs(np.diag(np.asarray(A))))) if len(E) else 0.0
    return report
