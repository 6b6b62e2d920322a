import numpy as np
import pytest
from numpy.polynomial.hermite import hermgauss

from otocquench import fock, hobasis, spectral, twobody


def test_g0_and_odd_levels_are_harmonic():
    assert np.allclose(twobody.rel_even_energies(0.0, 5).energies, 2 * np.arange(5) + 0.5)
    assert np.allclose(twobody.rel_odd_energies(4, 0.5), 0.5 * (2 * np.arange(4) + 1.5))


def test_even_roots_against_grid_oracle():
    exact = twobody.rel_even_energies(5.0, 4).energies
    grid = twobody.rel_grid_even_energies(5.0, 4)
    assert np.allclose(exact, grid, atol=2e-6)
    assert np.allclose(exact, [1.22678036, 3.10719405, 5.03361805, 6.98197998], atol=1e-7)


@pytest.mark.parametrize("trap", [0.5, 2.0])
def test_trap_dilation_against_grid(trap):
    exact = twobody.rel_even_energies(5.0, 3, trap).energies
    grid = twobody.rel_grid_even_energies(5.0, 3, trap, L=16.0)
    assert np.allclose(exact, grid, atol=5e-6)


def test_hard_core_limit_reaches_odd_levels():
    E = twobody.rel_even_energies(1e6, 4).energies
    assert np.allclose(E, 2 * np.arange(4) + 1.5, atol=1e-5)
    assert np.all(E < 2 * np.arange(4) + 1.5)


def test_energies_increase_with_coupling():
    gs = [0.1, 1.0, 5.0, 50.0]
    E0 = [twobody.rel_even_energies(g, 1).energies[0] for g in gs]
    assert np.all(np.diff(E0) > 0)


def test_bad_coupling():
    with pytest.raises(ValueError):
        twobody.rel_even_energies(-1.0, 3)


def test_even_expansion_normalised_and_matches_grid():
    alpha = 5.0 / np.sqrt(2.0)
    E = twobody.rel_even_energies(5.0, 3).energies
    C = twobody.even_expansion(alpha, E, 20000)
    # coefficients fall off as k^{-5/4}: the tail beyond 20000 terms is ~1e-6
    assert np.allclose(np.sum(C ** 2, axis=0), 1.0, atol=5e-6)
    sol = twobody.rel_grid_solve(5.0, 3, h=5e-4)
    even = sol.states[:, sol.parity > 0][:, :3]
    u = hobasis.hermite_functions(12, sol.y)[:, ::2]
    proj = sol.h * u.T @ even
    proj *= np.sign(proj[0])
    ref = C[:6] * np.sign(C[0])
    assert np.allclose(proj, ref, atol=2e-4)


def test_effective_interaction_reproduces_exact_levels():
    for trap in (1.0, 0.6):
        eff = twobody.effective_interaction(5.0, 12, trap=trap)
        w = np.linalg.eigvalsh(eff.H0 + eff.V_eff)
        assert np.allclose(w, eff.energies, atol=1e-12)
        assert np.allclose(eff.V_eff, eff.V_eff.T)


def test_brackets_against_quadrature():
    table = twobody.moshinsky_brackets(6)
    s, w = hermgauss(16)
    X1, X2 = np.meshgrid(s, s, indexing="ij")
    W = np.outer(w, w)
    R, y = (X1 + X2) / np.sqrt(2), (X1 - X2) / np.sqrt(2)
    f = lambda n, x: hobasis.hermite_functions(8, x, np.zeros_like(x))[..., n]
    for n1 in range(4):
        for n2 in range(4):
            for N in range(n1 + n2 + 1):
                n = n1 + n2 - N
                ref = np.sum(W * f(n1, X1) * f(n2, X2) * f(N, R) * f(n, y))
                assert table.get(n1, n2, N, n) == pytest.approx(ref, abs=1e-12)


def test_brackets_orthogonal():
    table = twobody.moshinsky_brackets(12)
    for T in table.shells:
        assert np.allclose(T @ T.T, np.eye(len(T)), atol=1e-13)


def test_two_particle_lab_frame_spectrum():
    # CM-free levels of the lab-frame problem are 1/2 + exact relative energies
    space = fock.build_tagged_space(2, 20)
    H = fock.build_hamiltonian(space, 5.0, 1.0, "effective")
    ops = fock.particle_operators(space)
    eig = spectral.diagonalize(H, commuting=[ops["n_cm"], space.parity()])
    n = np.einsum("ij,ij->j", eig.vectors, ops["n_cm"].data @ eig.vectors)
    parity = np.einsum("ij,ij->j", eig.vectors, space.parity().data @ eig.vectors)
    E = eig.energies[(np.abs(n) < 1e-8) & (parity > 0)]
    assert np.allclose(E[:5], 0.5 + twobody.rel_even_energies(5.0, 5).energies, atol=1e-11)


def test_lab_frame_interaction_is_read_only_and_symmetric():
    W = twobody.lab_frame_interaction(5.0, 1.0, 8, 9)
    assert not W.flags.writeable
    assert np.allclose(W, W.transpose(1, 0, 3, 2))
    assert np.allclose(W, W.transpose(2, 3, 0, 1))
