import math

import numpy as np
import pytest

from otocquench import scaling

GAMMAS = [0.4, 0.5, 0.6, 0.7, 0.8, 0.9]


def synthetic(form, b, lam, Ns, k=None, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for N in Ns:
        for gm in GAMMAS:
            x = (gm - 1 / gm) ** 2
            inner = x if form == "work" else x + k[N]
            y = N ** b * lam * inner * (1 + noise * rng.standard_normal())
            kw = {"dW2": y} if form == "work" else {"C": y}
            rows.append(scaling.SweepRow(N, 5.0, gm, e_cut=20.0, **kw))
    return scaling.SweepTable(tuple(rows))


def test_work_form_recovery():
    table = synthetic("work", 2.0, 0.3, [2, 3, 4, 5], noise=1e-3)
    fit = scaling.fit_scaling(table, "work", 5.0)
    assert fit.b == pytest.approx(2.0, abs=0.01)
    assert fit.lam == pytest.approx(0.3, rel=0.02)
    assert fit.converged and fit.b_err < 0.01


def test_otoc_form_recovery():
    k = {2: 1.5, 3: 2.0, 4: 1.8}
    table = synthetic("otoc", 1.7, 0.2, [2, 3, 4], k=k)
    fit = scaling.fit_scaling(table, "otoc", 5.0)
    assert fit.b == pytest.approx(1.7, abs=1e-6)
    for N, v in k.items():
        assert fit.k[N] == pytest.approx(v, abs=1e-6)


def test_fit_refuses_too_few_sizes():
    table = synthetic("work", 2.0, 0.3, [2, 3])
    with pytest.raises(scaling.FitError):
        scaling.fit_scaling(table, "work", 5.0)
    short = scaling.SweepTable(tuple(r for r in synthetic("work", 2.0, 0.3, [2, 3, 4]).rows
                                     if r.gamma < 0.65))
    with pytest.raises(scaling.FitError):
        scaling.fit_scaling(short, "work", 5.0)


def test_correct_form_beats_power_law():
    k = {2: 1.5, 3: 2.0, 4: 1.8}
    table = synthetic("otoc", 1.7, 0.2, [2, 3, 4], k=k, noise=1e-3)
    assert scaling.fit_scaling(table, "otoc", 5.0).residual_rms < scaling.power_law_rms(table, "otoc", 5.0)


def test_linear_relation_flat_at_g0():
    rows = tuple(scaling.SweepRow(2, 0.0, gm, dW2=0.25 * (gm - 1 / gm) ** 2, C=0.5) for gm in GAMMAS)
    rel = scaling.linear_relation(scaling.SweepTable(rows))
    assert rel.slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(scaling.FitError):
        scaling.linear_relation(scaling.SweepTable(tuple(
            scaling.SweepRow(2, 0.0, gm, dW2=1.0, C=0.5) for gm in GAMMAS)))


def test_csv_round_trip():
    table = synthetic("work", 2.0, 0.3, [2, 3, 4])
    table = scaling.SweepTable(table.rows + (scaling.SweepRow(5, 5.0, 0.3, error="CompletenessError: x"),))
    back = scaling.SweepTable.from_csv(table.to_csv())
    assert back.to_csv() == table.to_csv()
    assert back.rows[0].dW2 == table.rows[0].dW2
    assert not back.rows[-1].ok and math.isnan(back.rows[-1].dW2)


def test_sweep_rows_small_grid():
    pts = scaling.grid([2], [0.0, 5.0], [0.5, 1.0], 24)
    table = scaling.sweep(pts)
    assert len(table) == 4 and all(r.ok for r in table.rows)
    g0 = table.select(g=0.0)
    for r in g0.rows:
        assert r.dW2 == pytest.approx(0.25 * (r.gamma - 1 / r.gamma) ** 2, abs=1e-4)
        assert r.C == pytest.approx(0.5, abs=1e-10)
    one = [r for r in table.rows if r.gamma == 1.0 and r.g == 5.0][0]
    assert one.dW2 < 1e-12 and one.C > 0


def test_sweep_records_failures():
    table = scaling.sweep(scaling.grid([2], [0.0], [0.25, 0.9], 6, otoc=False))
    bad = [r for r in table.rows if not r.ok]
    assert len(bad) == 1 and bad[0].gamma == 0.25 and "CompletenessError" in bad[0].error


def test_sweep_worker_pool_matches_serial():
    pts = scaling.grid([2, 3], [5.0], [0.6, 0.8], {2: 10, 3: 8.5}, otoc=False)
    assert scaling.sweep(pts, jobs=2).to_csv() == scaling.sweep(pts).to_csv()
