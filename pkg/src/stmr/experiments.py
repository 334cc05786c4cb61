"""Problem presets, convergence sweeps and CSV output."""
from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import diagnostics
from .assembly import IndicatorDiagonal, ProblemSpec, SinPi, SmoothManufactured, ZeroForcing, ZeroInitial
from .solver import build_system, solve_mr, test_space, trial_space
from .spaces import LEFT, RIGHT

log = logging.getLogger(__name__)

PRESETS = ("smooth", "internal_layer", "boundary_layer", "boundary_layer_weak")
DEFAULT_EPSILONS = (1.0, 1e-1, 1e-3, 1e-6)
DEFAULT_N = (4, 8, 16, 32, 64, 128, 256)
DEEP_N = 512
MAX_DIAGNOSE_N = 32
TRUTH_BASE_N = 64
SIG_DIGITS = 12


def make_problem(preset: str, epsilon: float, beta: float | None = None) -> ProblemSpec:
    if preset == "smooth":
        return ProblemSpec(epsilon, e=0.0, gamma={LEFT, RIGHT}, beta=beta,
                           forcing=SmoothManufactured(), u0=SinPi())
    if preset == "internal_layer":
        return ProblemSpec(epsilon, e=0.0, gamma={LEFT}, beta=beta,
                           forcing=IndicatorDiagonal(), u0=ZeroInitial())
    if preset in ("boundary_layer", "boundary_layer_weak"):
        return ProblemSpec(epsilon, e=1.0, gamma={LEFT, RIGHT}, beta=beta,
                           forcing=ZeroForcing(), u0=SinPi(),
                           weak_outflow=preset == "boundary_layer_weak")
    raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")


def parse_mesh_size(text) -> int:
    """'1/16', '0.0625' or '16' -> 16 cells."""
    s = str(text).strip()
    if "/" in s or "." in s or "e" in s.lower():
        frac = Fraction(s).limit_denominator(1 << 20)
        if frac <= 0 or frac.numerator != 1:
            raise ValueError(f"mesh size must be 1/n, got {text!r}")
        return frac.denominator
    return int(s)


def _check_n(n: int) -> int:
    if n < 4 or n > DEEP_N or n & (n - 1):
        raise ValueError(f"mesh size 1/{n} outside the supported range 1/4 ... 1/512 (powers of 2)")
    return n


@dataclass
class RunConfig:
    preset: str = "smooth"
    option: str = "ii"
    epsilons: tuple = DEFAULT_EPSILONS
    mesh_sizes: tuple = DEFAULT_N  # numbers of cells n, h = 1/n
    beta_override: float | None = None
    solver: str = "direct"
    tol: float = 1e-10
    output_path: str | None = None
    deep: bool = False
    jobs: int = 1
    timing: bool = True

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.option not in ("i", "ii"):
            raise ValueError(f"option must be 'i' or 'ii', got {self.option!r}")
        if self.solver not in ("direct", "cg"):
            raise ValueError(f"solver must be 'direct' or 'cg', got {self.solver!r}")
        self.epsilons = tuple(float(e) for e in self.epsilons)
        if not self.epsilons or any(not e > 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")
        self.mesh_sizes = tuple(_check_n(int(n)) for n in self.mesh_sizes)
        if not self.deep and DEEP_N in self.mesh_sizes:
            raise ValueError("h = 1/512 requires deep mode")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    def echo(self) -> list[str]:
        lines = []
        for k, v in asdict(self).items():
            if k in ("output_path", "jobs"):
                continue
            if isinstance(v, tuple):
                v = ", ".join(format_value(x) for x in v)
            lines.append(f"{k} = {v}")
        lines.append("estimation_space = option ii test space")
        return lines


def load_config(path: str) -> dict:
    """Read the [run] section of an INI file into RunConfig keyword arguments."""
    cp = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    if "run" not in cp:
        raise ValueError(f"{path}: missing [run] section")
    sec = cp["run"]
    out: dict = {}
    known = {f.name for f in fields(RunConfig)} | {"beta", "out"}
    unknown = set(sec) - known
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("preset", "option", "solver"):
        if key in sec:
            out[key] = sec[key].strip()
    if "epsilons" in sec:
        out["epsilons"] = tuple(float(v) for v in sec["epsilons"].replace(",", " ").split())
    if "mesh_sizes" in sec:
        out["mesh_sizes"] = tuple(parse_mesh_size(v) for v in sec["mesh_sizes"].replace(",", " ").split())
    beta = sec.get("beta", sec.get("beta_override", "")).strip()
    if beta:
        out["beta_override"] = float(beta)
    if "tol" in sec:
        out["tol"] = sec.getfloat("tol")
    outp = sec.get("out", sec.get("output_path", "")).strip()
    if outp:
        out["output_path"] = outp
    for key in ("deep", "timing"):
        if key in sec:
            out[key] = sec.getboolean(key)
    if "jobs" in sec:
        out["jobs"] = sec.getint("jobs")
    return out


@dataclass
class SweepRow:
    preset: str
    option: str
    epsilon: float
    h: float
    dim_X: int
    dim_Y: int
    estimator: float
    relative_error: float
    iterations: int
    wall_time: float
    error: str | None = field(default=None, compare=False)


COLUMNS = [f.name for f in fields(SweepRow) if f.name != "error"]


@lru_cache(maxsize=None)
def denominator(preset: str, epsilon: float, beta: float | None = None, base_n: int = TRUTH_BASE_N) -> float:
    """sqrt(||g||^2_{Y'} + beta ||u0||^2) on the truth space; independent of h."""
    p = make_problem(preset, epsilon, beta)
    return diagnostics.relative_denominator(p, diagnostics.truth_space(p, base_n))


def solve_cell(preset, option, epsilon, n, beta=None, solver="direct", tol=1e-10):
    """Solve one (preset, option, eps, h) cell; returns (SweepRow, SolveReport)."""
    p = make_problem(preset, epsilon, beta)
    X = trial_space(p, n)
    Y = test_space(p, n, option)
    Yest = test_space(p, n, "ii")
    sys = build_system(p, X, Y)
    rep = solve_mr(sys, method=solver, tol=tol,
                   denominator=denominator(preset, epsilon, beta),
                   estimation_space=Yest)
    row = SweepRow(preset, option, epsilon, 1.0 / n, X.dim, Y.dim,
                   rep.estimator, rep.relative_error, rep.iterations, rep.wall_time)
    return row, rep


def _run_cell(args) -> SweepRow:
    preset, option, eps, n, beta, solver, tol = args
    t0 = time.perf_counter()
    try:
        row, _ = solve_cell(preset, option, eps, n, beta, solver, tol)
        row.wall_time = time.perf_counter() - t0
        return row
    except Exception as exc:  # recorded per cell; the sweep continues
        log.error("cell %s/%s eps=%g h=1/%d failed: %s", preset, option, eps, n, exc)
        p = make_problem(preset, eps, beta)
        X, Y = trial_space(p, n), test_space(p, n, option)
        nan = float("nan")
        return SweepRow(preset, option, eps, 1.0 / n, X.dim, Y.dim, nan, nan, 0,
                        time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")


def cells(config: RunConfig):
    for eps in config.epsilons:
        for n in sorted(config.mesh_sizes):
            yield (config.preset, config.option, eps, n, config.beta_override, config.solver, config.tol)


def run(config: RunConfig) -> list[SweepRow]:
    """Execute every (eps, h) cell of the config; rows come back in
    (preset, option, eps, h) order whatever the completion order."""
    todo = list(cells(config))
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(_run_cell, todo))
    else:
        rows = [_run_cell(c) for c in todo]
    for r in rows:
        log.info("%s/%s eps=%g h=1/%d rel=%.4g it=%d t=%.2fs", r.preset, r.option, r.epsilon,
                 round(1 / r.h), r.relative_error, r.iterations, r.wall_time)
        if not config.timing:
            r.wall_time = float("nan")
    if config.output_path:
        write_csv(config.output_path, rows, COLUMNS, config.echo())
    return rows


# -- diagnostics sweep -----------------------------------------------------


@dataclass
class DiagnoseRow:
    preset: str
    option: str
    epsilon: float
    h: float
    gamma_dt: float
    gamma_C: float
    gamma_B: float
    alpha: float
    bounds_passed: bool
    worst_ratio: float
    error: str | None = field(default=None, compare=False)


DIAG_COLUMNS = [f.name for f in fields(DiagnoseRow) if f.name != "error"]


def diagnose_cell(preset, option, epsilon, n, beta=None, n_samples=20) -> DiagnoseRow:
    p = make_problem(preset, epsilon, beta)
    X, Y = trial_space(p, n), test_space(p, n, option)
    truth = diagnostics.truth_space(p, n)
    bounds = None
    if not p.weak_outflow:
        bounds = diagnostics.check_norm_equivalence(p, X, truth, n_samples)
    rep = diagnostics.DiagnosticsReport(
        gamma_dt=diagnostics.inf_sup("dt", X, Y, truth, p),
        gamma_C=diagnostics.inf_sup("C", X, Y, truth, p),
        gamma_B=diagnostics.inf_sup("B", X, Y, truth, p),
        alpha=diagnostics.alpha(p, truth),
        bounds_check=bounds,
    )
    return DiagnoseRow(preset, option, epsilon, 1.0 / n, rep.gamma_dt, rep.gamma_C, rep.gamma_B,
                       rep.alpha, bool(bounds) if bounds is not None else False,
                       bounds.worst_ratio if bounds is not None else float("nan"))


def diagnose(config: RunConfig, n_samples: int = 20) -> list[DiagnoseRow]:
    """Stability constants per (eps, h) cell on meshes with h >= 1/32."""
    rows = []
    for eps in config.epsilons:
        for n in sorted(config.mesh_sizes):
            if n > MAX_DIAGNOSE_N:
                log.info("diagnose: skipping h=1/%d (limit 1/%d)", n, MAX_DIAGNOSE_N)
                continue
            try:
                rows.append(diagnose_cell(config.preset, config.option, eps, n,
                                          config.beta_override, n_samples))
            except Exception as exc:
                log.error("diagnose eps=%g h=1/%d failed: %s", eps, n, exc)
                nan = float("nan")
                rows.append(DiagnoseRow(config.preset, config.option, eps, 1.0 / n,
                                        nan, nan, nan, nan, False, nan,
                                        error=f"{type(exc).__name__}: {exc}"))
    if config.output_path:
        write_csv(config.output_path, rows, DIAG_COLUMNS, config.echo())
    return rows


# -- CSV -------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return f"{v:.{SIG_DIGITS}g}"
    return str(v)


def csv_text(rows, columns, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(getattr(r, c)) for c in columns])
    for r in rows:
        if getattr(r, "error", None):
            buf.write(f"# failed: epsilon={format_value(r.epsilon)} h={format_value(r.h)}: {r.error}\n")
    return buf.getvalue()


def write_csv(path, rows, columns=COLUMNS, header_lines=()):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(rows, columns, header_lines))


def read_csv(path) -> list[SweepRow]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    missing = set(COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    rows = []
    for d in reader:
        rows.append(SweepRow(
            d["preset"], d["option"], float(d["epsilon"]), float(d["h"]),
            int(d["dim_X"]), int(d["dim_Y"]), float(d["estimator"]),
            float(d["relative_error"]), int(d["iterations"]), float(d["wall_time"]),
        ))
    return rows


def with_overrides(config: RunConfig, **kw) -> RunConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
