import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import eval_hermite, factorial

from otocquench import fock, quench, spectral, twobody


def orbital(n, x, w=1.0):
    norm = (w / np.pi) ** 0.25 / np.sqrt(2.0 ** n * factorial(n))
    return norm * eval_hermite(n, np.sqrt(w) * x) * np.exp(-w * x ** 2 / 2)


def single_overlap(n, gamma):
    f = lambda x: orbital(n, x) * orbital(0, x, gamma)
    return quad(f, -np.inf, np.inf, limit=200)[0]


def sym_quench(N, g, gamma, e_cut, mode="bare"):
    space = fock.build_fock_space(N, e_cut)
    eig = spectral.diagonalize(fock.build_hamiltonian(space, g, 1.0, mode))
    psi, E_I, comp = quench.initial_ground_state(space, g, gamma, mode)
    return space, eig, quench.overlaps(eig, psi, N, g, gamma, E_I, comp)


def test_no_quench_gives_ground_state():
    _, _, rec = sym_quench(3, 2.0, 1.0, 10, "effective")
    assert abs(rec.c[0] - 1) < 1e-10 and np.max(np.abs(rec.c[1:])) < 1e-10
    _, eig, rec = sym_quench(2, 0.0, 1.0, 8)
    ws = quench.work_stats(rec, eig.energies)
    assert abs(ws.mean) < 1e-12 and ws.variance < 1e-12


def test_single_particle_overlaps_against_integration():
    _, eig, rec = sym_quench(1, 0.0, 0.5, 40.5)
    w = rec.c ** 2
    for n in range(0, 12):
        ref = single_overlap(n, 0.5) ** 2
        assert w[n] == pytest.approx(ref, abs=1e-10)
    assert np.max(w[1::2]) < 1e-20


def test_overlaps_vanish_on_odd_states(pair_g5_small):
    rec = pair_g5_small.quench(0.6)
    V = pair_g5_small.eig.vectors
    P = pair_g5_small.tagged.parity().data
    parity = np.einsum("ij,ij->j", V, P @ V)
    assert np.max(np.abs(rec.c[parity < 0])) < 1e-12
    assert rec.c[0] >= 0


def test_initial_energy_at_g0():
    space = fock.build_fock_space(1, 30.5)
    _, E_I, _ = quench.initial_ground_state(space, 0.0, 0.5)
    assert E_I == pytest.approx(0.25, abs=1e-12)


def test_initial_energy_pair_against_relative_oracle():
    space = fock.build_fock_space(2, 30)
    _, E_I, _ = quench.initial_ground_state(space, 5.0, 0.5, "effective")
    rel = twobody.rel_grid_even_energies(5.0, 1, trap=0.5, L=16.0)[0]
    assert E_I == pytest.approx(0.25 + rel, abs=1e-4)


def test_work_variance_pair_against_factorised_oracle():
    # H_f - H_i = (1 - gamma^2)/2 (R^2 + y^2); CM and relative parts independent
    gamma = 0.5
    space = fock.build_fock_space(2, 30)
    H = fock.build_hamiltonian(space, 5.0, 1.0, "effective")
    psi, _, _ = quench.initial_ground_state(space, 5.0, gamma, "effective")
    sol = twobody.rel_grid_solve(5.0, 1, trap=gamma, L=16.0, h=5e-4)
    phi = sol.states[:, 0]
    y2 = sol.h * np.sum(phi ** 2 * sol.y ** 2)
    y4 = sol.h * np.sum(phi ** 2 * sol.y ** 4)
    pref = 0.25 * (1 - gamma ** 2) ** 2
    oracle = pref * (y4 - y2 ** 2) + (gamma - 1 / gamma) ** 2 / 8
    assert quench.energy_variance(H, psi) == pytest.approx(oracle, rel=1e-2)


@pytest.mark.parametrize("N,gamma", [(1, 0.5), (2, 0.5), (3, 0.7), (2, 1.6)])
def test_g0_variance_matches_closed_form(N, gamma):
    space, eig, rec = sym_quench(N, 0.0, gamma, 26.5)
    ws = quench.work_stats(rec, eig.energies)
    assert rec.completeness >= 0.9999
    assert ws.variance == pytest.approx(quench.analytic_limit_variance(N, gamma, "g0"), abs=1e-4)
    H = fock.build_hamiltonian(space, 0.0)
    psi = eig.vectors @ rec.c
    assert quench.energy_variance(H, psi) == pytest.approx(ws.variance, abs=1e-10)


def test_weights_sum_to_one_and_csv():
    _, eig, rec = sym_quench(2, 5.0, 0.6, 14, "effective")
    ws = quench.work_stats(rec, eig.energies)
    assert ws.weights.sum() == pytest.approx(1.0, abs=1e-12)
    text = ws.to_csv()
    assert text.splitlines()[0] == "j,E_j,W_j,weight"
    assert len(text.splitlines()) == eig.dim + 1


def test_analytic_limits():
    assert quench.analytic_limit_variance(2, 0.5, "g0") == 0.5625
    assert quench.analytic_limit_variance(3, 2.0, "tg") == pytest.approx(3.09375, abs=1e-15)
    for N in range(1, 6):
        assert quench.analytic_limit_variance(N, 1.0, "tg") == 0.0
        assert quench.analytic_limit_variance(N, 0.4, "g0") == pytest.approx(
            quench.analytic_limit_variance(N, 2.5, "g0"), rel=1e-14)
    with pytest.raises(ValueError):
        quench.analytic_limit_variance(2, 0.5, "unitary")
    with pytest.raises(ValueError):
        quench.analytic_limit_variance(0, 0.5, "g0")


def test_squeezed_completeness_single_particle():
    K = 8
    direct = sum(single_overlap(n, 0.3) ** 2 for n in range(K + 1))
    assert quench.squeezed_completeness(1, 0.3, K) == pytest.approx(direct, abs=1e-12)
    assert quench.squeezed_completeness(1, 1.0, 0) == 1.0


def test_squeezed_completeness_two_particles():
    K = 6
    p = [single_overlap(n, 0.4) ** 2 for n in range(K + 1)]
    direct = sum(p[a] * p[b] for a in range(K + 1) for b in range(K + 1) if a + b <= K)
    assert quench.squeezed_completeness(2, 0.4, K) == pytest.approx(direct, abs=1e-12)


def test_completeness_gate_refuses_extreme_gamma():
    space = fock.build_fock_space(2, 6)
    with pytest.raises(quench.CompletenessError):
        quench.initial_ground_state(space, 0.0, 0.25)
    with pytest.raises(ValueError):
        quench.initial_ground_state(space, 0.0, -1.0)
