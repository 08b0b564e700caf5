"""Command-line pipeline: load a case, sweep the parameter grid, filter
and classify equilibria, and emit machine-readable reports.

Subcommands
-----------
``allflow validate --case F``
    Parse and validate a case file, printing diagnostics.

``allflow solve-generic --case F --cache PATH``
    Run the offline generic-point solve and persist the start-system
    cache for later sweeps.

``allflow run --case F --gamma 0.5,1,1.5,2 --vwind 0.96,0.98,1.00``
    Full pipeline.  Writes per-cell scatter CSVs, a stability-summary
    grid, dominant-mode tables and a JSON summary into ``--out``.

Reports are deterministic for a fixed ``--seed``: floats are printed with
17 significant digits and no timestamps or absolute paths are embedded.
``ALLFLOW_THREADS`` bounds the tracking worker count;
``ALLFLOW_BACKEND=numpy`` selects the uncompiled kernel fallback.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics, homotopy, netmodel, param_sweep
from .dynamics import EquilibriumRecord, FeasibilityLimits
from .homotopy import SolutionSet, TrackerConfig
from .netmodel import CaseError
from .param_sweep import ParameterPoint, SweepGrid
from .steady_poly import VariableMap

log = logging.getLogger(__name__)


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


@dataclass(frozen=True)
class RunConfig:
    case_path: str
    gammas: tuple[float, ...]
    vw_mags: tuple[float, ...]
    out_dir: str
    cache_path: str | None = None
    seed: int = 0
    limits: FeasibilityLimits = field(default_factory=FeasibilityLimits)
    tracker_overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CellReport:
    point: ParameterPoint
    solutions: SolutionSet
    records: tuple[EquilibriumRecord, ...]
    rejected: tuple


@dataclass(frozen=True)
class SweepReport:
    case_name: str
    grid: SweepGrid
    seed: int
    vmap: VariableMap
    cells: tuple[CellReport, ...]

    def cell(self, point: ParameterPoint) -> CellReport:
        for c in self.cells:
            if c.point == point:
                return c
        raise KeyError(f"no report cell for {point}")


def run(cfg: RunConfig) -> tuple[SweepReport | None, int]:
    """Execute the full pipeline; returns (report, exit code)."""
    try:
        case_text = Path(cfg.case_path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error:cli file-not-found {cfg.case_path}: {exc}", file=sys.stderr)
        return None, 2
    try:
        net = netmodel.load_case(case_text)
    except CaseError as exc:
        print(f"error:netmodel invalid-case {exc}", file=sys.stderr)
        return None, 2

    tracker = TrackerConfig(rng_seed=cfg.seed, **cfg.tracker_overrides)
    try:
        grid = SweepGrid(gammas=tuple(cfg.gammas), vw_mags=tuple(cfg.vw_mags))
        results, vmap, _cache = param_sweep.sweep(
            net, grid, tracker, cache_path=cfg.cache_path
        )
    except (param_sweep.GenericPointError, param_sweep.CacheMismatchError,
            homotopy.PathBudgetExceeded, ValueError) as exc:
        print(f"error:param_sweep {exc}", file=sys.stderr)
        return None, 3

    cells = []
    for point, solset in results.items():
        records, filt = dynamics.analyze_point(
            net, vmap, solset, gamma=point.gamma.real,
            parameter_point=point, limits=cfg.limits,
        )
        cells.append(
            CellReport(point=point, solutions=solset,
                       records=tuple(records), rejected=filt.rejected)
        )
    report = SweepReport(
        case_name=Path(cfg.case_path).name,
        grid=grid, seed=cfg.seed, vmap=vmap, cells=tuple(cells),
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for cell in report.cells:
        emit_scatter(report, cell.point, out)
        emit_solutions(report, cell.point, out)
    emit_stability_grid(report, out)
    emit_dominant_modes(report, out)
    emit_equilibria(report, out)
    emit_summary(report, out)
    return report, 0


# -- report emitters ----------------------------------------------------------


def _cell_suffix(point: ParameterPoint) -> str:
    return f"gamma{point.gamma.real:g}_vw{point.vw_mag.real:g}"


def emit_scatter(report: SweepReport, point: ParameterPoint,
                 out_dir) -> Path:
    """Rotor current vs wind reactive output, one row per solution.

    Complex solutions export their real parts flagged ``is_real=0``; for
    wind-free cases the two wind columns hold ``nan``.
    """
    cell = report.cell(point)
    vmap = report.vmap
    feasible_idx = {r.solution_index for r in cell.records}
    path = Path(out_dir) / f"scatter_{_cell_suffix(point)}.csv"
    lines = ["i_qr,Q_w,is_real,is_feasible"]
    for idx, sol in enumerate(cell.solutions.solutions):
        if vmap.wind:
            iqr = sol.vector[vmap.wind["i_qr"]].real
            qw = sol.vector[vmap.wind["Q_wind"]].real
        else:
            iqr = qw = float("nan")
        lines.append(
            f"{_fmt(iqr)},{_fmt(qw)},{int(sol.is_real)},"
            f"{int(idx in feasible_idx)}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def emit_solutions(report: SweepReport, point: ParameterPoint, out_dir) -> Path:
    """Raw deduplicated solution dump, one line per solution."""
    cell = report.cell(point)
    path = Path(out_dir) / f"solutions_{_cell_suffix(point)}.txt"
    path.write_text("\n".join(cell.solutions.dump_lines()) + "\n",
                    encoding="utf-8")
    return path


def cell_vocabulary(cell: CellReport) -> str:
    """Verdict multiset in summary-table wording."""
    if not cell.records:
        return "0 feasible"
    counts = {"stable": 0, "unstable": 0, "marginal": 0, "unclassifiable": 0}
    for r in cell.records:
        counts[r.verdict or "unclassifiable"] += 1
    parts = []
    for verdict in ("stable", "unstable", "marginal", "unclassifiable"):
        k = counts[verdict]
        if k:
            noun = "equilibrium" if k == 1 else "equilibria"
            parts.append(f"{k} {verdict} {noun}")
    return ", ".join(parts)


def emit_stability_grid(report: SweepReport, out_dir) -> Path:
    path = Path(out_dir) / "stability_grid.csv"
    gammas = report.grid.gammas
    lines = ["vw_mag," + ",".join(f"gamma={g:g}" for g in gammas)]
    for v in report.grid.vw_mags:
        row = [f"{v:g}"]
        for g in gammas:
            cell = report.cell(ParameterPoint.physical(g, v))
            row.append('"' + cell_vocabulary(cell) + '"')
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def emit_dominant_modes(report: SweepReport, out_dir) -> Path:
    """Dominant mode pairs for the cells whose feasible set is all stable."""
    path = Path(out_dir) / "dominant_modes.csv"
    lines = [
        "gamma,vw_mag,solution_index,"
        "mode1_re,mode1_im,zeta1,mode2_re,mode2_im,zeta2"
    ]
    for cell in report.cells:
        if not cell.records or not all(r.stable for r in cell.records):
            continue
        for r in cell.records:
            m = list(r.dominant_modes) + [complex(0)] * 2
            z = list(r.damping_ratios) + [0.0] * 2
            lines.append(
                ",".join(
                    [
                        f"{cell.point.gamma.real:g}",
                        f"{cell.point.vw_mag.real:g}",
                        str(r.solution_index),
                        _fmt(m[0].real), _fmt(m[0].imag), _fmt(z[0]),
                        _fmt(m[1].real), _fmt(m[1].imag), _fmt(z[1]),
                    ]
                )
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def emit_equilibria(report: SweepReport, out_dir) -> Path:
    path = Path(out_dir) / "equilibria.csv"
    lines = [
        "gamma,vw_mag,solution_index,verdict,stable,max_eig_re,"
        "dominant_re,dominant_im,dominant_damping"
    ]
    for cell in report.cells:
        for r in cell.records:
            max_re = (
                _fmt(float(np.max(r.eigenvalues.real)))
                if r.eigenvalues is not None and r.eigenvalues.size else ""
            )
            dom = r.dominant_modes[0] if r.dominant_modes else complex(0)
            zeta = r.damping_ratios[0] if r.damping_ratios else 0.0
            lines.append(
                ",".join(
                    [
                        f"{cell.point.gamma.real:g}",
                        f"{cell.point.vw_mag.real:g}",
                        str(r.solution_index),
                        r.verdict or "",
                        str(int(bool(r.stable))),
                        max_re,
                        _fmt(dom.real), _fmt(dom.imag), _fmt(zeta),
                    ]
                )
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def emit_summary(report: SweepReport, out_dir) -> Path:
    path = Path(out_dir) / "summary.json"
    doc = {
        "case": report.case_name,
        "seed": report.seed,
        "variables": list(report.vmap.names),
        "grid": {
            "gammas": list(report.grid.gammas),
            "vw_mags": list(report.grid.vw_mags),
        },
        "cells": [],
    }
    for cell in report.cells:
        total = len(cell.solutions.solutions)
        n_real = sum(1 for s in cell.solutions.solutions if s.is_real)
        entry = {
            "gamma": cell.point.gamma.real,
            "vw_mag": cell.point.vw_mag.real,
            "total_solutions": total,
            "real_solutions": n_real,
            "feasible": len(cell.records),
            "path_stats": {
                "converged": cell.solutions.path_stats.converged,
                "diverged": cell.solutions.path_stats.diverged,
                "stalled": cell.solutions.path_stats.stalled,
            },
            "vocabulary": cell_vocabulary(cell),
            "rejected": [
                {"solution_index": idx, "reasons": list(reasons)}
                for idx, _, reasons in cell.rejected
            ],
            "records": [
                {
                    "solution_index": r.solution_index,
                    "verdict": r.verdict,
                    "stable": bool(r.stable) if r.stable is not None else None,
                    "eigenvalues": (
                        [[z.real, z.imag] for z in r.eigenvalues]
                        if r.eigenvalues is not None else None
                    ),
                    "dominant_modes": [[z.real, z.imag] for z in r.dominant_modes],
                    "damping_ratios": list(r.damping_ratios),
                    "solution": [float(v) for v in r.solution],
                }
                for r in cell.records
            ],
        }
        doc["cells"].append(entry)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")
    return path


# -- argument parsing ----------------------------------------------------------


def _float_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty value list")
    return values


def _load_limits(path: str | None) -> FeasibilityLimits:
    if path is None:
        return FeasibilityLimits()
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    band = doc.get("voltage_band", [0.8, 1.2])
    return FeasibilityLimits(
        rotor_voltage_max=doc.get("rotor_voltage_max", 0.35),
        q_wind_max_abs=doc.get("q_wind_max_abs", 1.0),
        voltage_band=(band[0], band[1]),
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="allflow",
        description="All equilibria of wind-integrated power systems via "
                    "polynomial homotopy continuation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="validate a case file")
    p_val.add_argument("--case", required=True)
    p_val.add_argument("--json", action="store_true",
                       help="machine-readable diagnostics")

    p_gen = sub.add_parser("solve-generic",
                           help="offline generic-point solve into a cache")
    p_gen.add_argument("--case", required=True)
    p_gen.add_argument("--cache", required=True)
    p_gen.add_argument("--seed", type=int, default=0)

    p_run = sub.add_parser("run", help="full sweep and report pipeline")
    p_run.add_argument("--case", required=True)
    p_run.add_argument("--gamma", type=_float_list, required=True,
                       help="comma-separated wind penetration factors")
    p_run.add_argument("--vwind", type=_float_list, required=True,
                       help="comma-separated wind-bus voltage setpoints")
    p_run.add_argument("--cache", default=None)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", default="allflow-out")
    p_run.add_argument("--limits", default=None,
                       help="JSON feasibility-limit overrides")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("ALLFLOW_LOG", "WARNING"))

    if args.command == "validate":
        try:
            text = Path(args.case).read_text(encoding="utf-8")
            net = netmodel.load_case(text)
        except (OSError, CaseError) as exc:
            print(f"error:netmodel {exc}", file=sys.stderr)
            return 2
        diags = netmodel.validate(net, include_warnings=True)
        if args.json:
            print(json.dumps(
                [{"severity": d.severity, "code": d.code,
                  "message": d.message, "subject": d.subject} for d in diags]
            ))
        else:
            for d in diags:
                print(str(d))
            print(f"ok: {len(net.buses)} buses, {len(net.lines)} lines, "
                  f"{len(net.generators)} generators")
        return 1 if any(d.severity == "error" for d in diags) else 0

    if args.command == "solve-generic":
        try:
            text = Path(args.case).read_text(encoding="utf-8")
            net = netmodel.load_case(text)
        except (OSError, CaseError) as exc:
            print(f"error:netmodel {exc}", file=sys.stderr)
            return 2
        from .steady_poly import build_equilibrium_system

        system, _ = build_equilibrium_system(net, gamma=1.0, vw_mag=1.0)
        if not system.parameters:
            print("error:param_sweep case has no wind plant, nothing to cache",
                  file=sys.stderr)
            return 3
        cfg = TrackerConfig(rng_seed=args.seed)
        try:
            cache = param_sweep.solve_generic(
                system.unbind(), cfg, cache_path=args.cache
            )
        except (param_sweep.GenericPointError,
                homotopy.PathBudgetExceeded) as exc:
            print(f"error:param_sweep {exc}", file=sys.stderr)
            return 3
        print(
            f"cached {len(cache.start_solutions.solutions)} start solutions "
            f"({cache.offline_paths_tracked} paths tracked) -> {args.cache}"
        )
        return 0

    if args.command == "run":
        cfg = RunConfig(
            case_path=args.case,
            gammas=args.gamma,
            vw_mags=args.vwind,
            out_dir=args.out,
            cache_path=args.cache,
            seed=args.seed,
            limits=_load_limits(args.limits),
        )
        report, code = run(cfg)
        if report is not None:
            for cell in report.cells:
                print(
                    f"gamma={cell.point.gamma.real:g} "
                    f"vw={cell.point.vw_mag.real:g}: "
                    f"{len(cell.solutions.solutions)} solutions, "
                    f"{sum(1 for s in cell.solutions.solutions if s.is_real)} real, "
                    f"{len(cell.records)} feasible | {cell_vocabulary(cell)}"
                )
        return code

    return 2  # pragma: no cover - argparse enforces the choices


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
