import warnings

import numpy as np
import pytest

from otocquench import otoc, spectral
from otocquench.pipeline import weighted_support


def random_hermitian(rng, d, complex_=False):
    M = rng.standard_normal((d, d))
    if complex_:
        M = M + 1j * rng.standard_normal((d, d))
    return 0.5 * (M + M.conj().T)


def random_state(rng, d):
    c = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return c / np.linalg.norm(c)


def test_series_against_quadruple_sums(rng):
    d = 12
    E = np.sort(rng.uniform(0, 5, d))
    A, B = random_hermitian(rng, d, True), random_hermitian(rng, d, True)
    c = random_state(rng, d)
    t = np.array([0.0, 0.3, 1.7, 4.0, 11.0])
    fast = otoc.otoc_series(E, A, B, c, t)
    slow = otoc.otoc_series_bruteforce(E, A, B, c, t)
    for name in "DIF":
        assert np.allclose(getattr(fast, name), getattr(slow, name), atol=1e-10)
    assert np.allclose(fast.C, slow.C, atol=1e-10)
    assert fast.identity_residual() < 1e-10


def test_series_on_relative_sector_against_quadruple_sums(pair_g5):
    rec = pair_g5.quench(0.5)
    E, Y, c = pair_g5.rel_inputs(rec)
    t = np.linspace(0.0, 7.0, 5)
    fast = otoc.otoc_series(E, Y, Y, c, t)
    slow = otoc.otoc_series_bruteforce(E, Y, Y, c, t)
    assert np.allclose(fast.C, slow.C, atol=1e-8)
    assert np.allclose(fast.F, slow.F, atol=1e-8)


def test_series_invariants(pair_g5_small):
    rec = pair_g5_small.quench(0.5)
    E, A, B, c = pair_g5_small.product_inputs(rec)
    s = otoc.otoc_series(E, A, B, c, np.linspace(0, 30, 301))
    assert s.identity_residual() < 1e-10
    assert s.C.min() > -1e-10
    assert abs(s.C[0]) < 1e-12
    assert s.D[0].real == pytest.approx(s.I[0].real) == pytest.approx(s.F[0].real)


def test_empty_grid_and_basis_mismatch():
    with pytest.raises(ValueError):
        otoc.otoc_series(np.zeros(2), np.eye(2), np.eye(2), np.ones(2), [])
    with pytest.raises(ValueError):
        otoc.otoc_series(np.zeros(3), np.eye(3), np.eye(2), np.ones(3), [0.0])


@pytest.mark.parametrize("complex_", [False, True])
def test_exact_average_on_integer_spectrum(rng, complex_):
    # integer levels: C(t) is 2 pi periodic and a uniform grid averages it exactly,
    # degeneracies and resonances included
    d = 14
    E = np.sort(rng.integers(0, 6, d)).astype(float)
    A = random_hermitian(rng, d, complex_)
    B = random_hermitian(rng, d, complex_)
    c = random_state(rng, d)
    n = 64
    t = 2 * np.pi * np.arange(n) / n
    ref = otoc.otoc_series(E, A, B, c, t).C.mean()
    assert otoc.exact_time_average(E, A, B, c).value == pytest.approx(ref, abs=1e-10)


def test_exact_average_with_sparse_operators(rng):
    import scipy.sparse as sp
    d = 20
    E = np.sort(rng.integers(0, 8, d)).astype(float)
    A = random_hermitian(rng, d)
    A[np.abs(A) < 0.8] = 0
    B = random_hermitian(rng, d)
    B[np.abs(B) < 0.8] = 0
    c = random_state(rng, d)
    dense = otoc.exact_time_average(E, A, B, c).value
    sparse = otoc.exact_time_average(E, sp.csr_matrix(A), sp.csr_matrix(B), c).value
    assert sparse == pytest.approx(dense, abs=1e-12)


def test_exact_average_invariances(rng):
    d = 12
    E = np.sort(np.repeat(rng.uniform(0, 4, 6), 2))       # pairwise degenerate
    A, B = random_hermitian(rng, d), random_hermitian(rng, d)
    c = random_state(rng, d)
    base = otoc.exact_time_average(E, A, B, c).value
    assert otoc.exact_time_average(E, A, B, np.exp(0.7j) * c).value == pytest.approx(base, abs=1e-12)
    U = np.eye(d, dtype=complex)
    for blk in spectral.degenerate_blocks(E, 1e-12):
        Q, _ = np.linalg.qr(rng.standard_normal((len(blk), len(blk))))
        U[np.ix_(blk, blk)] = Q
    rot = otoc.exact_time_average(E, U.conj().T @ A @ U, U.conj().T @ B @ U, U.conj().T @ c).value
    assert rot == pytest.approx(base, abs=1e-10)


def test_window_of_harmonic_oscillator():
    # one oscillator: x(t) = x cos t + p sin t, so C(t) = sin^2 t
    from otocquench import hobasis
    n = 40
    E = np.arange(n) + 0.5
    X = hobasis.x_matrix(n)
    c = np.zeros(n)
    c[0] = 1.0
    avg = otoc.window_average(E, X, X, c, T=200 * np.pi)
    assert avg.value == pytest.approx(0.5, abs=1e-10)
    assert otoc.exact_time_average(E, X, X, c).value == pytest.approx(0.5, abs=1e-12)


def test_window_warns_when_under_resolved(rng):
    E = np.array([0.0, 10.0])
    A = np.array([[0, 1.0], [1.0, 0]])
    with pytest.warns(otoc.UnderResolvedWarning):
        otoc.window_average(E, A, A, np.array([1.0, 0.0]), T=10.0, dt=1.0)
    with pytest.raises(ValueError):
        otoc.window_average(E, A, A, np.array([1.0, 0.0]), T=0.0)


def test_conditioned_equals_exact_on_relative_sector(pair_g5):
    rec = pair_g5.quench(0.5)
    E, Y, c = pair_g5.rel_inputs(rec)
    report = pair_g5.rel_report(rec)
    assert report.passed
    cond = otoc.conditioned_averages(Y, Y, c, report)
    exact = otoc.exact_time_average(E, Y, Y, c)
    assert cond.value == pytest.approx(exact.value, abs=1e-10)
    assert abs(exact.F) < 1e-10


def test_conditioned_refuses_when_conditions_fail():
    E = np.array([0.0, 1.0, 2.0, 3.0])
    A = np.eye(4, k=1) + np.eye(4, k=-1)
    c = np.array([1.0, 0, 0, 0])
    rep = spectral.check_conditions(E, {"A": A}, support=weighted_support(A, c))
    with pytest.raises(otoc.ConditionError):
        otoc.conditioned_averages(A, A, c, rep)


def test_single_state_conditioned_terms(rng):
    d = 6
    A, B = random_hermitian(rng, d), random_hermitian(rng, d)
    np.fill_diagonal(A, 0)
    np.fill_diagonal(B, 0)
    c = np.zeros(d)
    c[0] = 1.0
    rep = spectral.check_conditions(np.array([0.0, 1.0, 2.7, 4.1, 6.9, 9.4]), {"A": A, "B": B})
    out = otoc.conditioned_averages(A, B, c, rep)
    assert out.D == pytest.approx(otoc.k_matrix(B, A).K[0, 0])
    assert out.I == pytest.approx(otoc.k_matrix(A, B).K[0, 0])


def test_k_matrix_hermitian_psd(rng):
    A, B = random_hermitian(rng, 10, True), random_hermitian(rng, 10, True)
    K = otoc.k_matrix(A, B)
    assert np.allclose(K.K, K.K.conj().T)
    assert K.min_eigenvalue() > -1e-10


def test_k_matrix_structure_on_relative_sector(pair_g5):
    idx = pair_g5.rel_sector
    E = pair_g5.energies[idx] - 0.5
    Y = pair_g5.rel_matrix("Y1")
    K = otoc.k_matrix(Y, Y).K
    V = pair_g5.eig.vectors[:, idx]
    even = np.flatnonzero(np.einsum("ij,ij->j", V, pair_g5.tagged.parity().data @ V) > 0)
    Ke = K[np.ix_(even, even)][:12, :12]
    assert otoc.tridiagonal_mass_fraction(Ke) < 0.10
    # diagonal grows like the square of the relative energy
    ratio = np.diag(Ke) / E[even][:12] ** 2
    assert np.all(np.diff(np.diag(Ke)) > 0)
    assert np.ptp(ratio[4:]) < 0.2 * ratio[4:].mean()
