"""Command-line front end.

    otocquench [options] COMMAND [key=value ...]

Parameters come from defaults, then ``--config FILE`` (TOML), then
``key=value`` overrides.  Every command writes its CSV files and a
``manifest_<command>.txt`` into the output directory.

Exit codes: 0 success, 2 invalid configuration, 3 numerical gate failed
(completeness, spectral conditions, CM contamination, eigensolver).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import struct
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:        # Python < 3.11
    import tomli as tomllib

from . import __version__, otoc, quench, scaling, spectral
from .fock import LossyEmbeddingError
from .pipeline import ContaminationError, QuenchSystem, weighted_support

CACHE_MAGIC = b"OSC1"
CACHE_FORMAT = 1
CACHE_ENV = "OSC_CACHE_DIR"

EXIT_OK, EXIT_CONFIG, EXIT_GATE = 0, 2, 3
GATE_ERRORS = (quench.CompletenessError, otoc.ConditionError, ContaminationError,
               spectral.NonConvergenceError, LossyEmbeddingError)

OPERATORS = ("x1", "p1")
METHODS = ("exact", "window", "raw_exact", "raw_window")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    N: int = 2
    g: float = 5.0
    gamma: float = 0.5
    n_orb: int = 0                  # 0: one orbital per allowed quantum
    e_cut: float = 30.0
    mode: str = "effective"
    pair: str = "x1,x1"
    method: str = "exact"
    T: float = 200 * math.pi
    dt: float = 0.0                 # 0: from the relevant Bohr frequencies
    t_max: float = 20 * math.pi
    n_times: int = 2001
    tol: float = 1e-8
    gate: float = quench.COMPLETENESS_GATE
    limit: str = "g0"
    form: str = "work"
    input: str = ""                 # sweep CSV for `fit`
    out: str = "out"
    cache_dir: str = ""
    sweep_N: list = field(default_factory=lambda: [2])
    sweep_g: list = field(default_factory=lambda: [5.0])
    sweep_gamma: list = field(default_factory=lambda: [0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    sweep_e_cut: list = field(default_factory=list)    # aligned with sweep_N
    sweep_otoc: bool = True
    fit_N: list = field(default_factory=list)

    def validate(self) -> "RunConfig":
        if not 1 <= self.N <= 6:
            raise ConfigError(f"N={self.N} outside [1, 6]")
        for g in [self.g, *self.sweep_g]:
            if not (math.isfinite(g) and g >= 0):
                raise ConfigError(f"g={g} must be finite and >= 0")
        for gm in [self.gamma, *self.sweep_gamma]:
            if not 0.25 <= gm <= 4:
                raise ConfigError(f"gamma={gm} outside [0.25, 4]")
        for N in self.sweep_N:
            if not 1 <= N <= 6:
                raise ConfigError(f"sweep N={N} outside [1, 6]")
        if self.sweep_e_cut and len(self.sweep_e_cut) != len(self.sweep_N):
            raise ConfigError("sweep_e_cut must have one entry per sweep_N value")
        if self.e_cut < self.N / 2:
            raise ConfigError(f"e_cut={self.e_cut} below the ground energy N/2")
        if self.n_orb < 0:
            raise ConfigError("n_orb must be >= 0")
        if self.mode not in ("bare", "effective"):
            raise ConfigError(f"mode must be 'bare' or 'effective', not {self.mode!r}")
        a, _, b = self.pair.partition(",")
        if a not in OPERATORS or b not in OPERATORS:
            raise ConfigError(f"pair {self.pair!r}: operators must be among {OPERATORS}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.T <= 0 or self.dt < 0 or self.t_max < 0 or self.n_times < 1:
            raise ConfigError("time window parameters must be positive")
        if not self.tol > 0 or not 0 < self.gate <= 1:
            raise ConfigError("tol must be > 0 and gate in (0, 1]")
        if self.limit not in ("g0", "tg"):
            raise ConfigError("limit must be 'g0' or 'tg'")
        if self.form not in ("work", "otoc"):
            raise ConfigError("form must be 'work' or 'otoc'")
        return self

    @property
    def operators(self) -> tuple[str, str]:
        a, _, b = self.pair.partition(",")
        return a, b

    def to_toml(self) -> str:
        return "".join(f"{f.name} = {_toml_value(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        cfg = cls()
        for key, value in data.items():
            _assign(cfg, key, value)
        return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialise {v!r}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_LIST_ITEM = {"sweep_N": int, "fit_N": int, "sweep_g": float, "sweep_gamma": float,
              "sweep_e_cut": float}


def _coerce(key: str, value):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "list":
            item = _LIST_ITEM[key]
            if isinstance(value, str):
                value = [v for v in value.strip().strip("[]").split(",") if v.strip()]
            return [item(v) for v in value]
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return value.lower() in ("true", "1", "yes")
            return bool(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def _assign(cfg: RunConfig, key: str, value) -> None:
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown parameter {key!r}")
    setattr(cfg, key, _coerce(key, value))


def load_config(path: str | None, overrides: list[str]) -> RunConfig:
    data = {}
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = RunConfig.from_mapping(data)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        _assign(cfg, key.strip(), value.strip())
    return cfg.validate()


# -- eigensystem cache -------------------------------------------------------

def cache_descriptor(cfg: RunConfig) -> dict:
    """Everything the final-Hamiltonian eigensystem depends on."""
    return {"N": cfg.N, "g": cfg.g, "gamma": 1.0, "n_orb": cfg.n_orb, "e_cut": cfg.e_cut,
            "mode": cfg.mode, "space": "tagged", "code_version": __version__}


def cache_path(cache_dir: Path, desc: dict) -> Path:
    digest = hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:24]
    return cache_dir / f"eig-{digest}.osc"


def write_cache(path: Path, desc: dict, eig: spectral.EigenSystem) -> None:
    meta = {"key": desc, "basis_id": eig.basis_id, "ortho_residual": eig.ortho_residual,
            "eig_residual": eig.eig_residual}
    blob = json.dumps(meta, sort_keys=True).encode()
    V = np.asarray(eig.vectors)
    if np.iscomplexobj(V):
        raise TypeError("the cache format stores real eigenvectors only")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".osc")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CACHE_MAGIC + struct.pack("<II", CACHE_FORMAT, len(blob)) + blob)
            fh.write(struct.pack("<QQ", V.shape[0], V.shape[1]))
            fh.write(np.asarray(eig.energies, dtype="<f8").tobytes())
            fh.write(np.asarray(V, dtype="<f8").tobytes(order="F"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_cache(path: Path, desc: dict) -> spectral.EigenSystem | None:
    """The cached eigensystem, or None if absent, stale or unreadable."""
    try:
        raw = path.read_bytes()
    except OSError:
        return None
    if raw[:4] != CACHE_MAGIC or len(raw) < 12:
        return None
    try:
        fmt, n = struct.unpack_from("<II", raw, 4)
        if fmt != CACHE_FORMAT:
            return None
        meta = json.loads(raw[12:12 + n])
        if meta.get("key") != desc:
            return None
        pos = 12 + n
        d, k = struct.unpack_from("<QQ", raw, pos)
    except (struct.error, ValueError):
        return None
    pos += 16
    if len(raw) != pos + 8 * k * (d + 1):
        return None
    E = np.frombuffer(raw, dtype="<f8", count=k, offset=pos).astype(float)
    pos += 8 * k
    V = np.frombuffer(raw, dtype="<f8", count=d * k, offset=pos).reshape((d, k), order="F")
    # same memory layout as a fresh solve, so downstream BLAS rounds identically
    return spectral.EigenSystem(E, np.ascontiguousarray(V, dtype=float), meta["basis_id"],
                                meta["ortho_residual"], meta["eig_residual"])


def cache_dir_for(cfg: RunConfig) -> Path:
    if cfg.cache_dir:
        return Path(cfg.cache_dir)
    if os.environ.get(CACHE_ENV):
        return Path(os.environ[CACHE_ENV])
    return Path.home() / ".cache" / "otocquench"


def load_system(cfg: RunConfig, use_cache: bool = True) -> tuple[QuenchSystem, str]:
    n_orb = cfg.n_orb or None
    if not use_cache:
        return QuenchSystem(cfg.N, cfg.g, cfg.e_cut, cfg.mode, n_orb=n_orb), "disabled"
    desc = cache_descriptor(cfg)
    path = cache_path(cache_dir_for(cfg), desc)
    eig = read_cache(path, desc)
    if eig is not None:
        return QuenchSystem(cfg.N, cfg.g, cfg.e_cut, cfg.mode, eig=eig, n_orb=n_orb), f"hit {path}"
    system = QuenchSystem(cfg.N, cfg.g, cfg.e_cut, cfg.mode, n_orb=n_orb)
    try:
        write_cache(path, desc, system.eig)
        status = f"stored {path}"
    except OSError as exc:
        status = f"not stored ({exc})"
    return system, status


# -- commands ----------------------------------------------------------------

PLOTS = {
    "spectrum.csv": "plot '{csv}' using 1:2 with points title 'E_j'",
    "overlaps.csv": "set logscale y\nplot '{csv}' using 2:($3**2) with impulses title '|c_j|^2'",
    "work.csv": "plot '{csv}' using 3:4 with impulses title 'P(W)'",
    "otoc.csv": "plot '{csv}' using 1:8 with lines title 'C(t)'",
    "sweep.csv": "plot '{csv}' using 4:5 with points title 'C vs dW2'",
}


class Run:
    def __init__(self, cfg: RunConfig, command: str, use_cache: bool, plot: bool, jobs: int):
        self.cfg, self.command = cfg, command
        self.use_cache, self.plot, self.jobs = use_cache, plot, jobs
        self.out = Path(cfg.out)
        self.info: dict[str, object] = {}
        self.files: list[str] = []

    def system(self) -> QuenchSystem:
        system, status = load_system(self.cfg, self.use_cache)
        self.info["cache"] = status
        self.info["dim"] = system.tagged.dim
        return system

    def write(self, name: str, text: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text, encoding="utf-8", newline="\n")
        self.files.append(name)
        if self.plot and name in PLOTS:
            stem = name[:-4]
            script = (f"set datafile separator ','\nset key autotitle columnhead\n"
                      f"set terminal pngcairo\nset output '{stem}.png'\n"
                      + PLOTS[name].format(csv=name) + "\n")
            (self.out / f"{stem}.gp").write_text(script, encoding="utf-8", newline="\n")
            self.files.append(f"{stem}.gp")

    def manifest(self, wall: float, status: str) -> None:
        lines = [f"command = {self.command}", f"status = {status}",
                 f"code_version = {__version__}", "[config]"]
        lines += self.cfg.to_toml().splitlines()
        lines.append("[results]")
        for key, value in self.info.items():
            text = str(value)
            if "\n" in text:
                lines.append(f"{key} =")
                lines += ["  " + ln for ln in text.splitlines()]
            else:
                lines.append(f"{key} = {text}")
        lines.append(f"files = {', '.join(self.files)}")
        lines.append(f"wall_time_s = {wall:.3f}")
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / f"manifest_{self.command}.txt").write_text("\n".join(lines) + "\n",
                                                               encoding="utf-8", newline="\n")


def _record(run: Run, system: QuenchSystem) -> quench.QuenchRecord:
    rec = system.quench(run.cfg.gamma, run.cfg.gate)
    run.info["E_I"] = format(rec.E_I, ".17g")
    run.info["completeness"] = format(rec.completeness, ".17g")
    return rec


def cmd_spectrum(run: Run) -> int:
    system = run.system()
    n_cm = system.cm_quanta
    rows = ["j,E_j,n_cm"] + [f"{j},{E:.17g},{n}" for j, (E, n) in enumerate(zip(system.energies, n_cm))]
    run.write("spectrum.csv", "\n".join(rows) + "\n")
    run.info["rel_sector_size"] = len(system.rel_sector)
    run.info["eig_residual"] = f"{system.eig.eig_residual:.3e}"
    return EXIT_OK


def cmd_quench(run: Run) -> int:
    system = run.system()
    rec = _record(run, system)
    rows = ["j,E_j,c_j"] + [f"{j},{E:.17g},{c:.17g}" for j, (E, c) in enumerate(zip(system.energies, rec.c))]
    run.write("overlaps.csv", "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_work(run: Run) -> int:
    system = run.system()
    rec = _record(run, system)
    ws = system.work(rec)
    run.write("work.csv", ws.to_csv())
    run.info["mean_W"] = format(ws.mean, ".17g")
    run.info["variance_W"] = format(ws.variance, ".17g")
    for lim in ("g0", "tg"):
        run.info[f"variance_{lim}"] = format(quench.analytic_limit_variance(run.cfg.N, run.cfg.gamma, lim), ".17g")
    return EXIT_OK


def cmd_otoc(run: Run) -> int:
    cfg = run.cfg
    system = run.system()
    rec = _record(run, system)
    times = np.linspace(0.0, cfg.t_max, cfg.n_times)
    series = system.series(rec, times, cfg.operators, raw=cfg.method.startswith("raw_"))
    run.write("otoc.csv", series.to_csv())
    run.info["identity_residual"] = f"{series.identity_residual():.3e}"
    return EXIT_OK


def cmd_avg(run: Run) -> int:
    cfg = run.cfg
    system = run.system()
    rec = _record(run, system)
    avg = system.average(rec, cfg.operators, cfg.method, cfg.tol, cfg.T, cfg.dt or None)
    run.write("average.csv", "method,value,D,I,ReF,ImF\n" + ",".join(
        [avg.method] + [format(v, ".17g") for v in (avg.value, avg.D, avg.I, avg.F.real, avg.F.imag)]) + "\n")
    run.info["average"] = format(avg.value, ".17g")
    run.info["params"] = json.dumps(avg.params, sort_keys=True)
    return EXIT_OK


def cmd_check(run: Run) -> int:
    cfg = run.cfg
    system = run.system()
    rec = _record(run, system)
    a, b = cfg.operators
    E, A, c = system.rel_inputs(rec, a)
    _, B, _ = system.rel_inputs(rec, b)
    ops = {a: A} if a == b else {a: A, b: B}
    report = spectral.check_conditions(E, ops, cfg.tol, support=weighted_support(B, c))
    run.info["report"] = report.summary()
    run.info["K_min_eigenvalue"] = f"{otoc.k_matrix(A, B).min_eigenvalue():.3e}"
    run.write("conditions.txt", report.summary() + "\n")
    if not report.passed:
        print("spectral conditions fail; conditioned averages are not valid here", file=sys.stderr)
        return EXIT_GATE
    run.info["conditioned_average"] = format(otoc.conditioned_averages(A, B, c, report).value, ".17g")
    run.info["exact_average"] = format(otoc.exact_time_average(E, A, B, c, cfg.tol).value, ".17g")
    return EXIT_OK


def _sweep_points(cfg: RunConfig) -> list[scaling.SweepPoint]:
    e_cut = dict(zip(cfg.sweep_N, cfg.sweep_e_cut)) if cfg.sweep_e_cut else cfg.e_cut
    return scaling.grid(cfg.sweep_N, cfg.sweep_g, cfg.sweep_gamma, e_cut, cfg.sweep_otoc)


def cmd_sweep(run: Run) -> int:
    cfg = run.cfg
    table = scaling.sweep(_sweep_points(cfg), cfg.mode, run.jobs, cfg.gate, cfg.tol)
    run.write("sweep.csv", table.to_csv())
    failed = [r for r in table.rows if not r.ok]
    run.info["rows"] = len(table)
    run.info["failed_rows"] = len(failed)
    for r in failed:
        print(f"row N={r.N} g={r.g:g} gamma={r.gamma:g}: {r.error}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(run: Run) -> int:
    cfg = run.cfg
    path = Path(cfg.input) if cfg.input else run.out / "sweep.csv"
    try:
        table = scaling.SweepTable.from_csv(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read sweep table {path}: {exc}") from exc
    variants = {"all": cfg.fit_N or None}
    if not cfg.fit_N:
        variants["N>=3"] = sorted({r.N for r in table.rows if r.N >= 3})
    text = []
    for label, Ns in variants.items():
        try:
            fit = scaling.fit_scaling(table, cfg.form, cfg.g, Ns)
        except scaling.FitError as exc:
            if label == "all":
                raise ConfigError(str(exc)) from exc
            text.append(f"[{label}]\nskipped = {exc}")
            continue
        text.append(f"[{label}]\n" + fit.report())
        run.info[f"b[{label}]"] = format(fit.b, ".6g")
    run.write(f"fit_{cfg.form}.txt", "\n".join(text) + "\n")
    print("\n".join(text))
    return EXIT_OK


def cmd_limits(run: Run) -> int:
    value = quench.analytic_limit_variance(run.cfg.N, run.cfg.gamma, run.cfg.limit)
    print(format(value, ".17g"))
    run.info["variance"] = format(value, ".17g")
    return EXIT_OK


COMMANDS = {
    "spectrum": (cmd_spectrum, "final-trap eigenvalues with CM labels"),
    "quench": (cmd_quench, "overlaps of the trap-gamma ground state"),
    "work": (cmd_work, "work distribution and its moments"),
    "otoc": (cmd_otoc, "time series D, I, F, C"),
    "avg": (cmd_avg, "time-averaged squared commutator"),
    "check": (cmd_check, "audit the spectral conditions on the relative sector"),
    "sweep": (cmd_sweep, "grid over N, g, gamma"),
    "fit": (cmd_fit, "scaling fit of a sweep table"),
    "limits": (cmd_limits, "closed-form work variance at g=0 or the hard-core limit"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with parameters")
    common.add_argument("--out", help="output directory (overrides out=)")
    common.add_argument("--cache-dir", help=f"eigensystem cache (default ${CACHE_ENV} or ~/.cache/otocquench)")
    common.add_argument("--no-cache", action="store_true", help="neither read nor write the cache")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--emit-plot-script", action="store_true", help="write a gnuplot script next to each CSV")
    common.add_argument("--dump-config", action="store_true", help="print the resolved TOML and exit")
    parser = argparse.ArgumentParser(prog="otocquench", description=__doc__.splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.add_argument("overrides", nargs="*", metavar="key=value")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        overrides = list(args.overrides)
        if args.out:
            overrides.append(f"out={args.out}")
        if args.cache_dir:
            overrides.append(f"cache_dir={args.cache_dir}")
        cfg = load_config(args.config, overrides)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        sys.stdout.write(cfg.to_toml())
        return EXIT_OK
    run = Run(cfg, args.command, not args.no_cache, args.emit_plot_script, args.jobs)
    start = time.perf_counter()
    try:
        code = COMMANDS[args.command][0](run)
        status = "ok" if code == EXIT_OK else "gate failed"
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code, status = EXIT_CONFIG, f"invalid: {exc}"
    except GATE_ERRORS as exc:
        print(f"numerical gate: {exc}", file=sys.stderr)
        code, status = EXIT_GATE, f"{type(exc).__name__}: {exc}"
    if args.command != "limits" or run.files:
        run.manifest(time.perf_counter() - start, status)
    return code


if __name__ == "__main__":
    sys.exit(main())
