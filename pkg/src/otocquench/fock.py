"""Energy-truncated many-boson bases and operator assembly.

Two spaces are provided.  ``FockSpace`` is the symmetric N-boson space with
a cut on the total non-interacting energy.  ``TaggedSpace`` singles out
particle 1 (same mass, same coupling) so that ``x_1`` and ``p_1`` are
honest operators; it holds ``|m> (x) |N-1 bosons>`` under the same cut.

Operators are assembled by grouping "removal" amplitudes by the spectator
configuration left behind: for a k-body kernel ``K``,
``<s|O|s'> = sum_spect amp(s -> spect, a) K[a, b] amp(s' -> spect, b)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from . import hobasis

DENSE_LIMIT = 2000
_EPS = 1e-9


class EmptySpaceError(ValueError):
    pass


class LossyEmbeddingError(ValueError):
    pass


def quanta_budget(N: int, e_cut: float) -> int:
    """Largest total number of oscillator quanta allowed by ``e_cut``."""
    if e_cut < N / 2 - _EPS:
        raise EmptySpaceError(f"e_cut={e_cut} is below the ground energy N/2={N / 2}")
    return int(np.floor(e_cut - N / 2 + _EPS))


def _occupations(N: int, K: int, n_orb: int) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []
    occ = [0] * n_orb

    def rec(i: int, left: int, budget: int) -> None:
        if i == n_orb:
            if left == 0:
                out.append(tuple(occ))
            return
        if left == 0:
            out.append(tuple(occ))
            return
        max_here = left if i == 0 else min(left, budget // i)
        for n in range(max_here + 1):
            occ[i] = n
            rec(i + 1, left - n, budget - n * i)
        occ[i] = 0

    rec(0, N, K)
    out.sort()
    return out


def _group_pairs(group: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All ordered index pairs (p, q) with ``group[p] == group[q]``."""
    order = np.argsort(group, kind="stable")
    g = group[order]
    starts = np.flatnonzero(np.r_[True, g[1:] != g[:-1]])
    sizes = np.diff(np.r_[starts, len(g)])
    gid = np.repeat(np.arange(len(starts)), sizes)
    rep = sizes[gid]
    left = np.repeat(np.arange(len(g)), rep)
    offs = np.arange(rep.sum()) - np.repeat(np.cumsum(rep) - rep, rep)
    right = np.repeat(starts[gid], rep) + offs
    return order[left], order[right]


def _contract(rows, labels, spect, amps, kernel, dim, factor=1.0):
    if len(rows) == 0:
        return sp.csr_matrix((dim, dim))
    left, right = _group_pairs(spect)
    vals = factor * amps[left] * kernel[labels[left], labels[right]] * amps[right]
    keep = vals != 0
    return sp.coo_matrix((vals[keep], (rows[left][keep], rows[right][keep])),
                         shape=(dim, dim)).tocsr()


def _remove_boson(occ: np.ndarray):
    """One-boson removals: (row, orbital, remaining occupations, sqrt(n))."""
    rows, orbs = np.nonzero(occ)
    rest = occ[rows].copy()
    rest[np.arange(len(rows)), orbs] -= 1
    amps = np.sqrt(occ[rows, orbs].astype(float))
    return rows, orbs, rest, amps


def _remove_pair(occ: np.ndarray):
    """Ordered two-boson removals ``a_l a_k``; label ``k*n_orb + l``."""
    r1, k, rest1, a1 = _remove_boson(occ)
    r2, l, rest2, a2 = _remove_boson(rest1)
    n = occ.shape[1]
    return r1[r2], k[r2] * n + l, rest2, a1[r2] * a2


def _ids(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] == 0:
        return np.zeros(0, dtype=np.intp)
    if rows.shape[1] == 0:
        return np.zeros(rows.shape[0], dtype=np.intp)
    return np.unique(rows, axis=0, return_inverse=True)[1].ravel()


@dataclass(frozen=True, eq=False)
class ManyBodyOperator:
    data: object
    basis_id: str
    hermitian: bool = True

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.data)

    def dense(self) -> np.ndarray:
        return self.data.toarray() if self.is_sparse else np.asarray(self.data)

    def hermiticity_residual(self) -> float:
        diff = self.data - self.data.conj().T
        if sp.issparse(diff):
            return float(abs(diff).max()) if diff.nnz else 0.0
        return float(np.abs(diff).max()) if diff.size else 0.0

    def _wrap(self, data, hermitian=None):
        return ManyBodyOperator(data, self.basis_id,
                                self.hermitian if hermitian is None else hermitian)

    def __matmul__(self, other):
        if isinstance(other, ManyBodyOperator):
            return self._wrap(self.data @ other.data, False)
        return self.data @ other

    def __add__(self, other):
        return self._wrap(self.data + other.data, self.hermitian and other.hermitian)

    def __sub__(self, other):
        return self._wrap(self.data - other.data, self.hermitian and other.hermitian)

    def __mul__(self, scalar):
        return self._wrap(self.data * scalar, self.hermitian and np.isreal(scalar))

    __rmul__ = __mul__

    def expectation(self, psi: np.ndarray) -> complex:
        return np.vdot(psi, self.data @ psi)


def _finish(mat, basis_id: str, hermitian: bool = True) -> ManyBodyOperator:
    mat = sp.csr_matrix(mat)
    if mat.shape[0] <= DENSE_LIMIT:
        mat = mat.toarray()
    return ManyBodyOperator(mat, basis_id, hermitian)


@dataclass(frozen=True, eq=False)
class FockSpace:
    N: int
    e_cut: float
    n_orb: int
    states: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    @property
    def basis_id(self) -> str:
        return f"fock:N={self.N}:e_cut={self.e_cut:g}:n_orb={self.n_orb}"

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {tuple(s): i for i, s in enumerate(self.states.tolist())}

    @cached_property
    def quanta(self) -> np.ndarray:
        return self.states @ np.arange(self.n_orb)

    @property
    def energies0(self) -> np.ndarray:
        return self.quanta + 0.5 * self.N

    def one_body(self, h: np.ndarray, hermitian: bool = True) -> ManyBodyOperator:
        rows, orbs, rest, amps = _remove_boson(self.states)
        mat = _contract(rows, orbs, _ids(rest), amps, h, self.dim)
        return _finish(mat, self.basis_id, hermitian)

    def two_body(self, W: np.ndarray) -> ManyBodyOperator:
        """``1/2 sum W_ijkl a+_i a+_j a_l a_k`` with ``W_ijkl = <ij|V|kl>``."""
        n = self.n_orb
        rows, lab, rest, amps = _remove_pair(self.states)
        mat = _contract(rows, lab, _ids(rest), amps, W.reshape(n * n, n * n), self.dim, 0.5)
        return _finish(mat, self.basis_id)

    def parity(self) -> ManyBodyOperator:
        return _finish(sp.diags(1.0 - 2.0 * (self.quanta % 2)), self.basis_id)


def build_fock_space(N: int, e_cut: float, n_orb: int | None = None) -> FockSpace:
    if N < 0:
        raise ValueError("N must be >= 0")
    K = quanta_budget(N, e_cut)
    if n_orb is None:
        n_orb = K + 1
    states = np.array(_occupations(N, K, n_orb), dtype=np.int64).reshape(-1, n_orb)
    return FockSpace(N, float(e_cut), n_orb, states)


@dataclass(frozen=True, eq=False)
class TaggedSpace:
    """``|m> (x) |occ>``: tagged particle in orbital ``m``, N-1 bosons in ``occ``."""
    N: int
    e_cut: float
    n_orb: int
    impurity: np.ndarray = field(repr=False)
    bosons: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.impurity.shape[0]

    @property
    def basis_id(self) -> str:
        return f"tagged:N={self.N}:e_cut={self.e_cut:g}:n_orb={self.n_orb}"

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {(int(m),) + tuple(o): i
                for i, (m, o) in enumerate(zip(self.impurity, self.bosons.tolist()))}

    @cached_property
    def quanta(self) -> np.ndarray:
        return self.impurity + self.bosons @ np.arange(self.n_orb)

    @property
    def energies0(self) -> np.ndarray:
        return self.quanta + 0.5 * self.N

    def impurity_one_body(self, h: np.ndarray, hermitian: bool = True) -> ManyBodyOperator:
        rows = np.arange(self.dim)
        amps = np.ones(self.dim)
        mat = _contract(rows, self.impurity, _ids(self.bosons), amps, h, self.dim)
        return _finish(mat, self.basis_id, hermitian)

    def boson_one_body(self, h: np.ndarray, hermitian: bool = True) -> ManyBodyOperator:
        rows, orbs, rest, amps = _remove_boson(self.bosons)
        spect = _ids(np.column_stack([self.impurity[rows], rest]))
        mat = _contract(rows, orbs, spect, amps, h, self.dim)
        return _finish(mat, self.basis_id, hermitian)

    def one_body(self, h: np.ndarray, hermitian: bool = True) -> ManyBodyOperator:
        return self.impurity_one_body(h, hermitian) + self.boson_one_body(h, hermitian)

    def two_body(self, W: np.ndarray) -> ManyBodyOperator:
        n = self.n_orb
        W2 = W.reshape(n * n, n * n)
        rows, orbs, rest, amps = _remove_boson(self.bosons)
        mixed = _contract(rows, self.impurity[rows] * n + orbs, _ids(rest), amps, W2, self.dim)
        rows, lab, rest, amps = _remove_pair(self.bosons)
        spect = _ids(np.column_stack([self.impurity[rows], rest]))
        pure = _contract(rows, lab, spect, amps, W2, self.dim, 0.5)
        return _finish(mixed + pure, self.basis_id)

    def parity(self) -> ManyBodyOperator:
        return _finish(sp.diags(1.0 - 2.0 * (self.quanta % 2)), self.basis_id)


def build_tagged_space(N: int, e_cut: float, n_orb: int | None = None) -> TaggedSpace:
    if N < 1:
        raise ValueError("the tagged space needs N >= 1")
    K = quanta_budget(N, e_cut)
    if n_orb is None:
        n_orb = K + 1
    imp, bos = [], []
    for m in range(K + 1):
        for occ in _occupations(N - 1, K - m, n_orb):
            imp.append(m)
            bos.append(occ)
    return TaggedSpace(N, float(e_cut), n_orb, np.array(imp, dtype=np.int64),
                       np.array(bos, dtype=np.int64).reshape(-1, n_orb))


def two_body_kernel(n_orb: int, g: float, gamma: float = 1.0, mode: str = "bare",
                    n_pair_max: int | None = None) -> np.ndarray:
    """Lab-frame ``W_ijkl = <ij|V|kl>`` for the contact interaction."""
    if mode == "bare":
        return g * hobasis.contact_tensor(n_orb)
    if mode == "effective":
        from .twobody import lab_frame_interaction
        if n_pair_max is None:
            n_pair_max = n_orb - 1
        return lab_frame_interaction(g, gamma, n_pair_max, n_orb)
    raise ValueError(f"unknown interaction mode {mode!r}")


def build_hamiltonian(space: FockSpace | TaggedSpace, g: float, gamma: float = 1.0,
                      mode: str = "bare") -> ManyBodyOperator:
    """Trap ``gamma`` plus contact coupling ``g`` in the unit-frequency orbitals."""
    n = space.n_orb
    H = space.one_body(hobasis.h_gamma(n, gamma))
    if space.N >= 2 and g != 0:
        K = quanta_budget(space.N, space.e_cut)
        H = H + space.two_body(two_body_kernel(n, g, gamma, mode, K))
    return H


def particle_operators(space: TaggedSpace) -> dict[str, ManyBodyOperator]:
    """``x1, p1, ip1, R, Y1, n_cm, B`` on the tagged space.

    ``ip1`` is ``i p_1`` (real antisymmetric); ``p1`` is its complex Hermitian
    counterpart.  ``B`` is the total lowering operator ``sum_i b_i`` and
    ``n_cm = B^+ B / N``.
    """
    n, N = space.n_orb, space.N
    x = hobasis.x_matrix(n)
    x1 = space.impurity_one_body(x)
    ip1 = space.impurity_one_body(hobasis.ip_matrix(n), hermitian=False)
    p1 = ManyBodyOperator(-1j * ip1.data, space.basis_id, True)
    R = space.one_body(x) * (1.0 / np.sqrt(N))
    Y1 = x1 - R * (1.0 / np.sqrt(N))
    B = space.one_body(hobasis.lowering_matrix(n), hermitian=False)
    Bd = sp.csr_matrix(B.data)
    n_cm = _finish(Bd.T @ Bd / N, space.basis_id)
    return {"x1": x1, "p1": p1, "ip1": ip1, "R": R, "Y1": Y1, "n_cm": n_cm, "B": B}


def embedding_matrix(sym: FockSpace, tagged: TaggedSpace) -> sp.csr_matrix:
    """Isometry taking symmetric N-boson states into the tagged space.

    ``|occ> = sum_m sqrt(n_m/N) |m> (x) |occ - e_m>``.
    """
    if sym.N != tagged.N:
        raise ValueError("particle numbers differ")
    rows_t, cols, vals = [], [], []
    idx = tagged.index
    for j, occ in enumerate(sym.states.tolist()):
        for m, n_m in enumerate(occ):
            if n_m == 0:
                continue
            rest = list(occ)
            rest[m] -= 1
            rest = rest[:tagged.n_orb] + [0] * max(0, tagged.n_orb - len(rest))
            key = (m,) + tuple(rest)
            amp = np.sqrt(n_m / sym.N)
            if key in idx and not any(rest[tagged.n_orb:]):
                rows_t.append(idx[key])
                cols.append(j)
                vals.append(amp)
    return sp.csr_matrix((vals, (rows_t, cols)), shape=(tagged.dim, sym.dim))


def embed_symmetric(psi: np.ndarray, sym: FockSpace, tagged: TaggedSpace,
                    tol: float = 1e-12) -> np.ndarray:
    E = embedding_matrix(sym, tagged)
    out = E @ psi
    deficit = float(np.vdot(psi, psi).real - np.vdot(out, out).real)
    if deficit > tol:
        raise LossyEmbeddingError(
            f"tagged cutoff too small: embedding loses norm {deficit:.3e}")
    return out


def cm_ground_sector(space: TaggedSpace | FockSpace, B: ManyBodyOperator | None = None) -> np.ndarray:
    """Orthonormal basis (columns) of ``ker B``: states with no CM excitation.

    ``B`` lowers the total quanta by exactly one, so the kernel is found
    shell by shell from small dense blocks.
    """
    if B is None:
        B = space.one_body(hobasis.lowering_matrix(space.n_orb), hermitian=False)
    Bm = sp.csr_matrix(B.data)
    q = space.quanta
    blocks = []
    for shell in range(int(q.max()) + 1):
        cols = np.flatnonzero(q == shell)
        rows = np.flatnonzero(q == shell - 1)
        if len(cols) == 0:
            continue
        if len(rows) == 0:
            ker = np.eye(len(cols))
        else:
            ker = la.null_space(Bm[rows][:, cols].toarray(), rcond=1e-10)
        Qs = np.zeros((space.dim, ker.shape[1]))
        Qs[cols] = ker
        blocks.append(Qs)
    return np.hstack(blocks)
