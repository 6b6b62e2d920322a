"""Parameter sweeps over (N, g, gamma) and fits of the system-size scaling forms.

Work form:  dW2 = N^b * lam * x
OTOC form:  C   = N^b * lam * (x + k_N)

with ``x = (gamma - 1/gamma)^2``.  The exponent and amplitude are shared by
all N in a fit; the OTOC offset ``k_N`` is free per N.  A per-N amplitude on
top of a shared exponent would leave ``b`` undetermined, so per-N amplitudes
are reported afterwards as ``slope_N / N^b``.
"""
from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from itertools import groupby

import numpy as np
from scipy.optimize import least_squares

from . import fock, quench

ROW_COLUMNS = ("N", "g", "gamma", "dW2", "C", "completeness", "e_cut", "method", "error")


def quench_strength(gamma):
    gamma = np.asarray(gamma, dtype=float)
    return (gamma - 1.0 / gamma) ** 2


@dataclass(frozen=True)
class SweepRow:
    N: int
    g: float
    gamma: float
    dW2: float = math.nan
    C: float = math.nan
    completeness: float = math.nan
    e_cut: float = math.nan
    method: str = ""
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[SweepRow, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def select(self, N=None, g=None, ok_only: bool = True) -> "SweepTable":
        keep = [r for r in self.rows
                if (N is None or r.N == N) and (g is None or r.g == g) and (r.ok or not ok_only)]
        return SweepTable(tuple(keep))

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in ROW_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SweepTable":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != ROW_COLUMNS:
            raise ValueError(f"unexpected sweep columns {reader.fieldnames}")
        types = {f.name: f.type for f in fields(SweepRow)}
        rows = []
        for rec in reader:
            vals = {}
            for k, v in rec.items():
                t = types[k]
                vals[k] = int(v) if t in (int, "int") else float(v) if t in (float, "float") else v
            rows.append(SweepRow(**vals))
        return cls(tuple(rows))


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


@dataclass(frozen=True)
class SweepPoint:
    N: int
    g: float
    gamma: float
    e_cut: float
    otoc: bool = True


def grid(Ns, gs, gammas, e_cut, otoc: bool = True) -> list[SweepPoint]:
    """Cartesian grid; ``e_cut`` is a number or a mapping N -> e_cut."""
    pick = e_cut.get if isinstance(e_cut, dict) else (lambda N: e_cut)
    return [SweepPoint(int(N), float(g), float(gm), float(pick(N)), otoc)
            for N in Ns for g in gs for gm in gammas]


def _run_group(points: list[SweepPoint], mode: str, gate: float, tol: float) -> list[SweepRow]:
    """All points of one (N, g, e_cut, otoc) group share one final Hamiltonian."""
    from .pipeline import QuenchSystem

    p0 = points[0]
    out = []
    base = dict(N=p0.N, g=p0.g, e_cut=p0.e_cut)
    try:
        if p0.otoc:
            system = QuenchSystem(p0.N, p0.g, p0.e_cut, mode)
        else:
            space = fock.build_fock_space(p0.N, p0.e_cut)
            H = fock.build_hamiltonian(space, p0.g, 1.0, mode)
    except Exception as exc:  # noqa: BLE001 - recorded per row
        return [SweepRow(gamma=p.gamma, error=f"{type(exc).__name__}: {exc}", **base) for p in points]
    for p in points:
        try:
            if p.otoc:
                rec = system.quench(p.gamma, gate)
                dW2 = system.work(rec).variance
                C = system.average(rec, ("x1", "x1"), "exact", tol).value
                method = "work=overlaps;otoc=exact_resonance"
            else:
                psi, _, comp = quench.initial_ground_state(space, p.g, p.gamma, mode, gate)
                dW2 = quench.energy_variance(H, psi)
                C = math.nan
                rec = None
                method = "work=energy_variance"
            comp = rec.completeness if rec is not None else comp
            out.append(SweepRow(gamma=p.gamma, dW2=float(dW2), C=float(C),
                                completeness=float(comp), method=method, **base))
        except Exception as exc:  # noqa: BLE001 - recorded per row
            out.append(SweepRow(gamma=p.gamma, error=f"{type(exc).__name__}: {exc}", **base))
    return out


def sweep(points, mode: str = "effective", jobs: int = 1, gate: float = quench.COMPLETENESS_GATE,
          tol: float = 1e-8) -> SweepTable:
    """Evaluate every point; failures become rows with an ``error`` entry.

    Points are grouped by (N, g, e_cut, otoc) so that each final Hamiltonian
    is diagonalised once.  ``jobs > 1`` runs groups in a process pool.
    """
    key = lambda p: (p.N, p.g, p.e_cut, p.otoc)
    pts = sorted(points, key=lambda p: key(p) + (p.gamma,))
    groups = [list(v) for _, v in groupby(pts, key=key)]
    if jobs > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(groups), os.cpu_count() or 1)) as ex:
            results = list(ex.map(_run_group, groups, [mode] * len(groups),
                                  [gate] * len(groups), [tol] * len(groups)))
    else:
        results = [_run_group(grp, mode, gate, tol) for grp in groups]
    return SweepTable(tuple(r for res in results for r in res))


@dataclass(frozen=True)
class FitResult:
    form: str
    g: float
    b: float
    lam: float
    k: dict = field(default_factory=dict)        # per-N offsets (otoc form)
    lam_per_N: dict = field(default_factory=dict)
    residual_rms: float = math.nan
    covariance: np.ndarray | None = None
    Ns: tuple = ()
    converged: bool = True
    flag: str = ""

    @property
    def b_err(self) -> float:
        if self.covariance is None:
            return math.nan
        return float(np.sqrt(max(self.covariance[0, 0], 0.0)))

    def report(self) -> str:
        lines = [f"form = {self.form}", f"g = {self.g:.17g}", f"N = {list(self.Ns)}",
                 f"b = {self.b:.17g}", f"b_err = {self.b_err:.3g}", f"lambda = {self.lam:.17g}"]
        for N, v in sorted(self.lam_per_N.items()):
            lines.append(f"lambda[N={N}] = {v:.17g}")
        for N, v in sorted(self.k.items()):
            lines.append(f"k[N={N}] = {v:.17g}")
        lines += [f"residual_rms = {self.residual_rms:.6g}", f"converged = {self.converged}"]
        if self.flag:
            lines.append(f"flag = {self.flag}")
        return "\n".join(lines)


class FitError(ValueError):
    pass


def _data(table: SweepTable, form: str, g: float, Ns):
    col = "dW2" if form == "work" else "C"
    sel = [r for r in table.select(g=g).rows if np.isfinite(getattr(r, col))
           and (Ns is None or r.N in Ns)]
    if form == "work":
        sel = [r for r in sel if r.gamma != 1.0]     # x = 0 carries no scale
    Nvals = sorted({r.N for r in sel})
    if len(Nvals) < 3:
        raise FitError(f"exponent fit needs at least 3 distinct N, got {Nvals}")
    for N in Nvals:
        n_gamma = len({r.gamma for r in sel if r.N == N})
        if n_gamma < 4:
            raise FitError(f"N={N} has {n_gamma} gamma values; need at least 4")
    N = np.array([r.N for r in sel], dtype=float)
    gamma = np.array([r.gamma for r in sel])
    y = np.array([getattr(r, col) for r in sel])
    return Nvals, N, gamma, y


def fit_scaling(table: SweepTable, form: str, g: float, Ns=None, b0: float = 2.0) -> FitResult:
    """Damped (Levenberg-Marquardt) fit with relative residuals.

    Parameters are ``(b, log lam[, k_N...])``; the amplitude starts from the
    largest-N rows and every ``k_N`` from zero.
    """
    if form not in ("work", "otoc"):
        raise ValueError(f"unknown form {form!r}; use 'work' or 'otoc'")
    Nvals, N, gamma, y = _data(table, form, g, Ns)
    x = quench_strength(gamma)
    idx = np.searchsorted(Nvals, N)
    big = N == Nvals[-1]
    if form == "work":
        lam0 = np.sum(y[big] * x[big]) / np.sum(x[big] ** 2) / Nvals[-1] ** b0
    else:
        lam0 = np.mean(y[big] / (x[big] + 1.0)) / Nvals[-1] ** b0
    p0 = [b0, math.log(max(lam0, 1e-300))] + ([0.0] * len(Nvals) if form == "otoc" else [])

    def model(p):
        inner = x if form == "work" else x + np.asarray(p[2:])[idx]
        return N ** p[0] * math.exp(p[1]) * inner

    def resid(p):
        return (model(p) - y) / np.abs(y)

    flag = ""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = least_squares(resid, p0, method="lm", xtol=1e-10, ftol=1e-12, gtol=1e-12)
    J = sol.jac
    cov = None
    dof = max(1, len(y) - len(sol.x))
    s2 = float(np.sum(sol.fun ** 2)) / dof
    try:
        JtJ = J.T @ J
        if np.linalg.cond(JtJ) > 1e14:
            raise np.linalg.LinAlgError("singular Jacobian")
        cov = np.linalg.inv(JtJ) * s2
    except np.linalg.LinAlgError as exc:
        flag = f"{exc}; returning best-so-far parameters"
    b, lam = float(sol.x[0]), float(math.exp(sol.x[1]))
    k = {int(n): float(v) for n, v in zip(Nvals, sol.x[2:])} if form == "otoc" else {}
    per_N = {}
    for n in Nvals:
        m = N == n
        inner = x[m] + k.get(int(n), 0.0)
        per_N[int(n)] = float(np.sum(y[m] * inner) / np.sum(inner ** 2) / n ** b)
    rms = float(np.sqrt(np.mean((model(sol.x) - y) ** 2)))
    return FitResult(form, float(g), b, lam, k, per_N, rms, cov, tuple(int(n) for n in Nvals),
                     bool(sol.success) and not flag, flag)


def power_law_rms(table: SweepTable, form: str, g: float, Ns=None) -> float:
    """Residual RMS of the bare form ``a N^b gamma^c``, the reference a correct
    scaling form should beat."""
    _, N, gamma, y = _data(table, form, g, Ns)
    lg = np.log(y)
    X = np.column_stack([np.ones_like(lg), np.log(N), np.log(gamma)])
    coef, *_ = np.linalg.lstsq(X, lg, rcond=None)
    return float(np.sqrt(np.mean((np.exp(X @ coef) - y) ** 2)))


@dataclass(frozen=True)
class LinearRelation:
    slope: float
    intercept: float
    r2: float
    n: int


def linear_relation(table: SweepTable, N: int | None = None, g: float | None = None) -> LinearRelation:
    """Ordinary least squares of C on dW2."""
    sel = table.select(N=N, g=g)
    x, y = sel.column("dW2"), sel.column("C")
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if len(x) < 4:
        raise FitError(f"linear relation needs at least 4 points, got {len(x)}")
    if np.ptp(x) <= 1e-12 * max(1.0, np.max(np.abs(x))):
        raise FitError("all work variances are equal; slope undefined")
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return LinearRelation(float(slope), float(intercept), r2, len(x))

