import numpy as np
import pytest

from otocquench import pipeline
from otocquench.pipeline import QuenchSystem


def test_cm_labels_are_integers_and_sector_sizes(pair_g5_small):
    n = pair_g5_small.cm_quanta
    assert n.min() == 0 and np.issubdtype(n.dtype, np.integer)
    # with N=2 the CM ground sector holds one state per relative level below the cutoff
    assert len(pair_g5_small.rel_sector) == int(pair_g5_small.e_cut - 1) + 1


def test_rel_sector_is_relative_spectrum(pair_g5):
    from otocquench import twobody
    E = pair_g5.energies[pair_g5.rel_sector] - 0.5
    even = twobody.rel_even_energies(5.0, 6).energies
    assert np.allclose(np.sort(E)[[0, 2, 4]], even[:3], atol=1e-4)
    assert np.allclose(np.sort(E)[[1, 3, 5]], [1.5, 3.5, 5.5], atol=1e-12)


def test_cm_overlaps_carry_all_weight(pair_g5):
    rec = pair_g5.quench(0.5)
    ck = pair_g5.cm_overlaps(rec)
    assert np.sum(ck ** 2) == pytest.approx(1.0, abs=1e-10)
    # only even CM quanta are populated by a trap quench of the ground state
    assert np.all(np.abs(ck[1::2]) < 1e-10)


def test_product_system_without_interaction_is_free():
    system = QuenchSystem(2, 0.0, 16)
    rec = system.quench(0.5)
    assert system.average(rec).value == pytest.approx(0.5, abs=1e-10)
    E, A, B, c = system.product_inputs(rec)
    assert np.all(np.diff(np.sort(E)) > -1e-12)
    assert np.linalg.norm(c) == pytest.approx(1.0, abs=1e-10)


def test_truncated_cm_ladder_is_detuned(pair_g5_small):
    E, n = pair_g5_small.energies, pair_g5_small.cm_quanta
    rel = E[n == 0][:8]

    def worst(k):
        return max(np.min(np.abs(E[n == k] - (e + k))) for e in rel)

    # the cutoff leaves fewer relative states per higher CM rung
    assert worst(1) < 1e-12
    assert worst(2) > 1e-3
    energies, *_ = pair_g5_small.product_inputs(pair_g5_small.quench(0.5))
    grid = energies.reshape(-1, len(pair_g5_small.rel_sector))
    assert np.allclose(np.diff(grid, axis=0), 1.0, atol=1e-12)


def test_window_close_to_exact_at_moderate_coupling(pair_g5_small):
    rec = pair_g5_small.quench(0.6)
    exact = pair_g5_small.average(rec, method="exact").value
    window = pair_g5_small.average(rec, method="window").value
    assert window == pytest.approx(exact, rel=0.01)


def test_cm_average_is_half():
    for gamma in (0.4, 0.7, 1.8):
        assert pipeline.cm_average(gamma) == pytest.approx(0.5, abs=1e-10)


def test_decomposition_small_cutoff(pair_g5_small):
    dec = pair_g5_small.decomposition(pair_g5_small.quench(0.7))
    assert dec.additivity_residual < 5e-3
    assert dec.C_YY_conditioned == pytest.approx(dec.C_YY, abs=1e-10)


def test_weighted_support():
    B = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    rows, cols = pipeline.weighted_support(B, np.array([1.0, 0.0, 0.0]))
    assert rows.tolist() == [0] and cols.tolist() == [0, 1]


def test_bad_inputs(pair_g5_small):
    rec = pair_g5_small.quench(0.5)
    with pytest.raises(ValueError):
        pair_g5_small.average(rec, method="median")
    with pytest.raises(ValueError):
        pair_g5_small.rel_matrix("p2")
    other = QuenchSystem(2, 5.0, 10)
    with pytest.raises(ValueError):
        QuenchSystem(2, 5.0, 12, eig=other.eig)
