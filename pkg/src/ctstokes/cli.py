"""Command-line entry point: single solves and convergence studies.

Defaults reproduce the reference study: flower-shaped domain, penalty 40,
viscosities 1e-1, 1e-3, 1e-5 on refinements n = 8, 16, 32, 64, 128 of the
unit square.  A flat key=value config file can seed any option; command-line
flags override file values, and the CTSTOKES_OUTDIR environment variable
overrides the output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import verify
from .geometry import circle_domain, star_domain
from .mesh import write_vtk
from .solver import SolverError, dump_matrix_market, solve_direct
from .verify import (build_level, compute_errors, infsup_estimate, paper_case,
                     run_convergence, solve_on_level, write_json)

DEFAULT_LEVELS = (8, 16, 32, 64, 128)
DEFAULT_NUS = (1e-1, 1e-3, 1e-5)
OUTDIR_ENV = "CTSTOKES_OUTDIR"


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    """Validated run options shared by both commands."""

    domain: str = "star"
    radius: float = 0.4
    center: tuple = (0.5, 0.5)
    levels: List[int] = field(default_factory=lambda: list(DEFAULT_LEVELS))
    nus: List[float] = field(default_factory=lambda: list(DEFAULT_NUS))
    sigma: float = 40.0
    quad_volume: int = 6
    quad_edge: int = 6
    out: str = "results"
    formats: List[str] = field(default_factory=lambda: ["csv", "json"])
    vtk: bool = False
    check_assumption: bool = False
    infsup: bool = False
    dump_matrix: bool = False
    sequential: bool = True

    def validate(self) -> None:
        if self.domain not in ("star", "circle"):
            raise UsageError(f"unknown domain '{self.domain}'")
        if self.sigma <= 0:
            raise UsageError("sigma must be positive")
        if not self.levels:
            raise UsageError("levels list must not be empty")
        if any(n < 1 for n in self.levels):
            raise UsageError("levels must be positive integers")
        if not self.nus or any(nu <= 0 for nu in self.nus):
            raise UsageError("viscosities must be positive")
        if self.radius <= 0:
            raise UsageError("radius must be positive")
        bad = [f for f in self.formats if f not in ("csv", "json", "vtk")]
        if bad:
            raise UsageError(f"unknown output format(s): {', '.join(bad)}")

    def make_domain(self):
        if self.domain == "star":
            return star_domain()
        return circle_domain(self.center, self.radius)


def _parse_list(text, cast):
    return [cast(tok) for tok in str(text).replace(",", " ").split()]


def _read_config_file(path) -> dict:
    """Flat key = value file; blank lines and #-comments ignored."""
    values = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctstokes",
        description="Divergence-free Stokes solver on unfitted meshes")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("solve", "single solves, one per level/viscosity"),
                            ("converge", "refinement study with rate tables")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--domain", choices=("star", "circle"))
        p.add_argument("--radius", type=float)
        p.add_argument("--center", help="circle center as 'x,y'")
        p.add_argument("--levels", help="comma-separated refinement levels")
        p.add_argument("--nu", dest="nus", help="comma-separated viscosities")
        p.add_argument("--sigma", type=float)
        p.add_argument("--quad-volume", type=int, dest="quad_volume")
        p.add_argument("--quad-edge", type=int, dest="quad_edge")
        p.add_argument("--out")
        p.add_argument("--format", dest="formats",
                       help="comma-separated output formats (csv,json,vtk)")
        p.add_argument("--vtk", action="store_true", default=None)
        p.add_argument("--check-assumption", action="store_true", default=None,
                       dest="check_assumption")
        p.add_argument("--infsup", action="store_true", default=None)
        p.add_argument("--dump-matrix", action="store_true", default=None,
                       dest="dump_matrix")
        p.add_argument("--sequential", action="store_true", default=None)
        p.add_argument("--parallel", action="store_true", default=None)
    return parser


def parse_config(argv) -> tuple:
    """Parse command-line arguments (and optional config file) into a RunConfig."""
    args = _build_parser().parse_args(argv)
    cfg = RunConfig()

    file_values = _read_config_file(args.config) if args.config else {}
    merged = dict(file_values)
    for key in ("domain", "radius", "center", "levels", "nus", "sigma",
                "quad_volume", "quad_edge", "out", "formats", "vtk",
                "check_assumption", "infsup", "dump_matrix", "sequential"):
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            merged[key] = cli_val
    if getattr(args, "parallel", None):
        merged["sequential"] = False

    try:
        if "domain" in merged:
            cfg.domain = str(merged["domain"])
        if "radius" in merged:
            cfg.radius = float(merged["radius"])
        if "center" in merged:
            c = _parse_list(merged["center"], float)
            if len(c) != 2:
                raise UsageError("center needs exactly two coordinates")
            cfg.center = tuple(c)
        if "levels" in merged:
            cfg.levels = _parse_list(merged["levels"], int)
        if "nus" in merged:
            cfg.nus = _parse_list(merged["nus"], float)
        if "nu" in merged:
            cfg.nus = _parse_list(merged["nu"], float)
        if "sigma" in merged:
            cfg.sigma = float(merged["sigma"])
        if "quad_volume" in merged:
            cfg.quad_volume = int(merged["quad_volume"])
        if "quad_edge" in merged:
            cfg.quad_edge = int(merged["quad_edge"])
        if "out" in merged:
            cfg.out = str(merged["out"])
        if "formats" in merged:
            val = merged["formats"]
            cfg.formats = _parse_list(val, str) if isinstance(val, str) else list(val)
        if "format" in merged:
            cfg.formats = _parse_list(merged["format"], str)
        for flag in ("vtk", "check_assumption", "infsup", "dump_matrix",
                     "sequential"):
            if flag in merged:
                val = merged[flag]
                setattr(cfg, flag, val if isinstance(val, bool)
                        else str(val).lower() in ("1", "true", "yes", "on"))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    if OUTDIR_ENV in os.environ:
        cfg.out = os.environ[OUTDIR_ENV]
    cfg.validate()
    return args.command, cfg


def _report_lines(report) -> str:
    return (f"n={report.n} nu={report.nu:g}: l2_u={report.l2_u:.6e} "
            f"h1_u={report.h1_u:.6e} l2_p={report.l2_p:.6e} "
            f"linf_div={report.linf_div:.3e} delta_ratio="
            f"{report.max_delta_ratio:.3f} residual={report.residual:.2e}")


def _export_vtk(path, level, sol):
    uh = np.column_stack([sol.u[0:2 * level.ct.n_vertices:2],
                          sol.u[1:2 * level.ct.n_vertices:2]])
    p_cells = sol.p.reshape(-1, 3).mean(axis=1)
    div_cells = verify._divergence_at_vertices(level.ct, level.layout,
                                               sol.u).max(axis=1)
    write_vtk(path, level.ct, point_data={"velocity": uh},
              cell_data={"pressure": p_cells, "div_u": div_cells})


def cmd_solve(cfg: RunConfig) -> int:
    """One solve per (level, viscosity); writes per-run reports."""
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    dom = cfg.make_domain()
    dom.validate()
    ok = True
    reports = []
    for n in cfg.levels:
        level = build_level(dom, n, cfg.sigma, cfg.quad_volume, cfg.quad_edge,
                            parallel=not cfg.sequential)
        if cfg.check_assumption:
            rep = level.assumption
            print(f"n={n}: max delta_e/h_e = {rep.max_ratio:.4f} "
                  f"({len(rep.flagged)} edges above {rep.threshold:g})")
        if cfg.infsup:
            try:
                beta = infsup_estimate(level.ct, level.layout, level.bqd)
                print(f"n={n}: inf-sup estimate = {beta:.6f}")
            except ValueError as exc:
                print(f"n={n}: inf-sup skipped ({exc})")
        for nu in cfg.nus:
            case = paper_case(nu)
            rhs = verify.assemble_rhs(case.f, case.u, level.ct, level.layout,
                                      level.bqd, nu, cfg.sigma, level.vol_rule)
            system = verify.compose_system(level.blocks, level.layout, nu, rhs)
            if cfg.dump_matrix:
                dump_matrix_market(outdir / f"system_n{n}_nu{nu:g}.mtx", system)
            try:
                sol = solve_direct(system)
            except SolverError as exc:
                print(f"n={n} nu={nu:g}: SOLVE FAILED: {exc}", file=sys.stderr)
                ok = False
                continue
            report = compute_errors(sol, case, level.ct, level.layout,
                                    level.bqd, n=n, sigma=cfg.sigma,
                                    max_delta_ratio=level.assumption.max_ratio)
            reports.append(report)
            print(_report_lines(report))
            if report.linf_div > max(1e-8, 1e3 * report.residual):
                print(f"n={n} nu={nu:g}: divergence contract violated",
                      file=sys.stderr)
                ok = False
            if cfg.vtk or "vtk" in cfg.formats:
                _export_vtk(outdir / f"solution_n{n}_nu{nu:g}.vtk", level, sol)
    if "json" in cfg.formats:
        with open(outdir / "solve_reports.json", "w") as fh:
            json.dump([r.as_dict() for r in reports], fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0 if ok else 1


def cmd_converge(cfg: RunConfig) -> int:
    """Refinement study over all configured levels and viscosities."""
    if len(cfg.levels) < 2:
        raise UsageError("convergence study needs at least two levels")
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    dom = cfg.make_domain()
    dom.validate()
    tables = run_convergence(dom, cfg.levels, cfg.nus, cfg.sigma,
                             quad_volume=cfg.quad_volume,
                             quad_edge=cfg.quad_edge,
                             parallel=not cfg.sequential,
                             progress=print)
    ok = True
    for nu, table in sorted(tables.items()):
        if "csv" in cfg.formats:
            table.write_csv(outdir / f"convergence_nu{nu:g}.csv")
        for r in table.reports:
            if r.linf_div > max(1e-8, 1e3 * r.residual):
                print(f"n={r.n} nu={nu:g}: divergence contract violated",
                      file=sys.stderr)
                ok = False
    if "json" in cfg.formats:
        write_json(outdir / "convergence.json", tables)
    return 0 if ok else 1


def main(argv=None) -> int:
    try:
        command, cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if command == "solve":
            return cmd_solve(cfg)
        return cmd_converge(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
