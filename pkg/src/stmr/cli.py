"""Command line entry point: ``stmr {solve,sweep,diagnose,plot}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import experiments as ex
from .plotting import emit_plot, heightfield

log = logging.getLogger("stmr")


def _add_common(p: argparse.ArgumentParser, multi: bool):
    p.add_argument("--config", help="INI file with a [run] section")
    p.add_argument("--preset", choices=ex.PRESETS)
    p.add_argument("--option", choices=("i", "ii"))
    nargs = "+" if multi else None
    p.add_argument("--eps", type=float, nargs=nargs, help="diffusion parameter(s)")
    p.add_argument("--h", nargs=nargs, help="mesh size(s) as 1/n or n")
    p.add_argument("--beta", type=float, help="initial-value weight (default 1/eps if e=0, else 1)")
    p.add_argument("--solver", choices=("direct", "cg"))
    p.add_argument("--tol", type=float, help="CG relative tolerance")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--deep", action="store_true", default=None, help="allow h = 1/512")
    p.add_argument("--jobs", type=int, help="worker processes for sweeps")
    p.add_argument("--no-timing", dest="timing", action="store_false", default=None,
                   help="write nan for wall_time so the CSV is reproducible byte for byte")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stmr", description="Space-time minimal residual solver")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a single (preset, option, eps, h) cell")
    _add_common(s, multi=False)
    s.add_argument("--heightfield", help="write a 129x129 solution sample to this CSV")

    w = sub.add_parser("sweep", help="run the (eps, h) matrix of a preset")
    _add_common(w, multi=True)
    w.add_argument("--plot", help="also write plot data with this path stem")

    d = sub.add_parser("diagnose", help="inf-sup constants and asymmetry per cell")
    _add_common(d, multi=True)
    d.add_argument("--samples", type=int, default=20, help="random samples for the norm check")

    pl = sub.add_parser("plot", help="plot data from a sweep CSV")
    pl.add_argument("csv")
    pl.add_argument("--out", help="path stem for .dat/.svg (default: CSV stem)")
    return parser


def make_config(args, multi: bool) -> ex.RunConfig:
    kw = ex.load_config(args.config) if args.config else {}
    if args.deep is not None:
        kw["deep"] = args.deep
    if args.eps is not None:
        kw["epsilons"] = tuple(args.eps) if multi else (args.eps,)
    if args.h is not None:
        hs = args.h if multi else [args.h]
        kw["mesh_sizes"] = tuple(ex.parse_mesh_size(h) for h in hs)
    elif not multi:
        kw.setdefault("mesh_sizes", (16,))
    elif kw.get("deep") and "mesh_sizes" not in kw:
        kw["mesh_sizes"] = ex.DEFAULT_N + (ex.DEEP_N,)
    for key, attr in (("preset", "preset"), ("option", "option"), ("beta_override", "beta"),
                      ("solver", "solver"), ("tol", "tol"), ("output_path", "out"),
                      ("jobs", "jobs"), ("timing", "timing")):
        val = getattr(args, attr)
        if val is not None:
            kw[key] = val
    if not multi and len(kw.get("epsilons", (1.0,))) != 1:
        kw["epsilons"] = kw["epsilons"][:1]
    return ex.RunConfig(**kw)


def cmd_solve(args) -> int:
    cfg = make_config(args, multi=False)
    if len(cfg.mesh_sizes) != 1:
        cfg = replace(cfg, mesh_sizes=cfg.mesh_sizes[:1])
    eps, n = cfg.epsilons[0], cfg.mesh_sizes[0]
    row, rep = ex.solve_cell(cfg.preset, cfg.option, eps, n, cfg.beta_override, cfg.solver, cfg.tol)
    if not cfg.timing:
        row.wall_time = float("nan")
    print(ex.csv_text([row], ex.COLUMNS), end="")
    if cfg.output_path:
        ex.write_csv(cfg.output_path, [row], ex.COLUMNS, cfg.echo())
    if args.heightfield:
        from .solver import trial_space

        X = trial_space(ex.make_problem(cfg.preset, eps, cfg.beta_override), n)
        heightfield(X, rep.coefficients, args.heightfield)
    return 0


def cmd_sweep(args) -> int:
    cfg = make_config(args, multi=True)
    rows = ex.run(cfg)
    if not cfg.output_path:
        print(ex.csv_text(rows, ex.COLUMNS, cfg.echo()), end="")
    if args.plot:
        emit_plot(rows, args.plot)
    return 1 if any(r.error for r in rows) else 0


def cmd_diagnose(args) -> int:
    cfg = make_config(args, multi=True)
    if args.h is None and not args.config:
        cfg = replace(cfg, mesh_sizes=tuple(n for n in cfg.mesh_sizes if n <= ex.MAX_DIAGNOSE_N))
    rows = ex.diagnose(cfg, n_samples=args.samples)
    if not cfg.output_path:
        print(ex.csv_text(rows, ex.DIAG_COLUMNS, cfg.echo()), end="")
    return 1 if any(r.error for r in rows) else 0


def cmd_plot(args) -> int:
    rows = ex.read_csv(args.csv)
    stem = args.out or args.csv.rsplit(".", 1)[0]
    for path in emit_plot(rows, stem):
        print(path)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"solve": cmd_solve, "sweep": cmd_sweep, "diagnose": cmd_diagnose, "plot": cmd_plot}
    try:
        return handlers[args.command](args)
    except (ValueError, OSError) as exc:
        parser.exit(2, f"stmr: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
