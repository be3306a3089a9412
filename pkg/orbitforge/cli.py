from __future__ import annotations
import argparse
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import pandas as pd

from . import config
from .curve import DiscreteCurve, classify_tails, grad_norm, hamiltonian_residual, ode_residual, residual_order, \
    tail_indicator, total_energy
from .errors import EXIT_OK, ConfigError, GapNotDetected, InvalidGrid, OrbitForgeError, SpecViolation
from .logging_utils import log_stage, setup_logging
from .minimize import GapReport, best_result, detect_gap, m_matrix, multistart
from .mountainpass import detect_splitting, endpoints_from_gap, run_mountain_pass
from .parsers import curve_to_frame, history_frame, path_profile_frame, read_orbit_csv, traces_frame
from .potential import PotentialSpec, verify_assumptions, verify_symmetry
from .progress import Progress
from .report import RunReport, save_report
from .runconfig import RunConfig, load_run_config
from .symmetry import mp_sym
from .utils import write_tables

log = logging.getLogger("orbitforge.cli")


@dataclass
class Artifacts:
    """Everything a run leaves behind besides the JSON report."""
    spec: Optional[PotentialSpec] = None
    orbits: Dict[str, DiscreteCurve] = field(default_factory=dict)
    profiles: Dict[str, pd.DataFrame] = field(default_factory=dict)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)


@dataclass
class RunContext:
    cfg: RunConfig
    report: RunReport
    artifacts: Artifacts
    workers: int
    progress: Progress
    orbit: Optional[str] = None


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(prog="orbitforge",
                                 description="Connecting orbits of q'' = grad V(q): minimizers, gaps and mountain passes.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=str, required=True, help="JSON run configuration")
    ap.add_argument("--set", action="append", default=[], metavar="BLOCK.KEY=VALUE",
                    help="override one configuration key (repeatable)")
    ap.add_argument("--workers", type=int, default=0, help="cap on solver threads (default ORBITFORGE_MAX_WORKERS)")
    ap.add_argument("--out", type=str, default="")
    ap.add_argument("--orbit", type=str, default="", help="orbit CSV for diagnose")
    ap.add_argument("--normalized-report", action="store_true", help="omit timings and timestamps")
    ap.add_argument("--log-level", type=str, default=os.getenv("LOG_LEVEL", "INFO"))
    ap.add_argument("--log-json", action="store_true")
    return ap.parse_args(argv)


@contextmanager
def _stage(report: RunReport, name: str, **details) -> Iterator[None]:
    t0 = time.perf_counter()
    try:
        with log_stage(name):
            yield
    except OrbitForgeError as e:
        report.fail(name, e)
        raise
    else:
        if name not in report.stages:
            report.mark(name, True, **details)
    finally:
        report.timings[name] = time.perf_counter() - t0


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def run_verify(ctx: RunContext) -> None:
    spec, report = ctx.cfg.potential, ctx.report
    with _stage(report, "verify"):
        try:
            reports = verify_assumptions(spec, ctx.cfg.sampling)
        except SpecViolation as e:
            if e.reports is not None:
                report.results["assumptions"] = e.reports.to_dict()
            raise
        report.results["assumptions"] = reports.to_dict()
        sym_ok = True
        if spec.symmetric:
            sym = verify_symmetry(spec, ctx.cfg.sampling)
            report.results["symmetry"] = asdict(sym)
            sym_ok = sym.passed
        if not reports.passed or not sym_ok:
            failed = [n for n in ("coercivity", "nondegeneracy", "zero_set") if not getattr(reports, n).passed]
            raise SpecViolation(f"assumption audit failed: {failed or ['symmetry']}", reports=reports)


def run_minimize(ctx: RunContext) -> None:
    cfg = ctx.cfg
    a, b = cfg.multistart.pair
    W = cfg.potential.wells_array
    with _stage(ctx.report, "minimize"):
        results = multistart(cfg.potential, W[a], W[b], cfg.make_grid(), cfg.multistart_options(ctx.workers),
                             cfg.minimize_options(), ctx.progress)
        best = best_result(results, f"m[{a},{b}]")
        ctx.report.results["minimize"] = {"pair": [a, b], "best": best.summary(),
                                          "seeds": [r.summary() for r in results]}
        ctx.artifacts.orbits[f"minimizer_{a}_{b}"] = best.curve


def _pairs(ctx: RunContext):
    cfg = ctx.cfg
    with _stage(ctx.report, "pairs"):
        mm = m_matrix(cfg.potential, cfg.make_grid(), cfg.multistart_options(ctx.workers), cfg.minimize_options(),
                      cfg.multistart.pair, progress=ctx.progress)
        ctx.report.results["m_matrix"] = mm.to_dict()
        for (i, j), r in mm.best.items():
            ctx.artifacts.orbits[f"m_{i}_{j}"] = r.curve
        if not mm.triangle_ok:
            raise SpecViolation(f"triangle margins {mm.margins} not above margin_tol={mm.margin_tol:g}",
                                stage="pairs")
    return mm


def run_pairs(ctx: RunContext) -> None:
    _pairs(ctx)


def _gap(ctx: RunContext) -> GapReport:
    cfg = ctx.cfg
    with _stage(ctx.report, "gap"):
        gap = detect_gap(cfg.potential, cfg.make_grid(), cfg.multistart_options(ctx.workers), cfg.minimize_options(),
                         cfg.multistart.pair, ctx.progress)
        ctx.report.results["gap"] = gap.to_dict()
        for n, c in enumerate(gap.clusters):
            ctx.artifacts.orbits[f"minimizer_{n}"] = c.representative
        if not gap.passed:
            raise GapNotDetected(f"{gap.statement}; gap={gap.gap} cluster_threshold={gap.threshold:g}", report=gap)
    return gap


def run_gap(ctx: RunContext) -> None:
    _gap(ctx)


def run_mp(ctx: RunContext) -> None:
    cfg = ctx.cfg
    gap = _gap(ctx)
    m_star = _pairs(ctx).m_star if cfg.potential.n_wells > 2 else None
    with _stage(ctx.report, "mp"):
        run = run_mountain_pass(cfg.potential, gap, cfg.path.splitting_delta, path_opts=cfg.path_options(),
                                refine_opts=cfg.refine_options(), N=cfg.path.N, m_star=m_star,
                                tol_3m=cfg.path.tol_3m, workers=ctx.workers, progress=ctx.progress)
        ctx.report.results["relax"] = run.relax.summary()
        ctx.report.results["saddle"] = run.report.to_dict()
        ctx.artifacts.orbits["saddle"] = run.refined.curve
        ctx.artifacts.profiles["path_profile"] = path_profile_frame(run.relax.path, run.relax.grad_norms)
        ctx.artifacts.tables["relax_history"] = history_frame(run.relax.history)


def run_mp_sym(ctx: RunContext) -> None:
    cfg = ctx.cfg
    if not cfg.potential.symmetric:
        raise ConfigError("mp-sym needs potential.symmetric = true")
    gap = _gap(ctx)
    with _stage(ctx.report, "mp_sym"):
        q0, q1 = endpoints_from_gap(gap)
        run = mp_sym(cfg.potential, q0, q1, gap.m_est, cfg.path.splitting_delta, N=cfg.path.N,
                     path_opts=cfg.path_options(), refine_opts=cfg.refine_options(), solver=cfg.minimize_options(),
                     sym_opts=cfg.sym_options(), representatives=[c.representative for c in gap.clusters],
                     gap=gap.gap, eta_min_est=gap.eta_min_est, workers=ctx.workers, progress=ctx.progress)
        ctx.report.results["mp_sym"] = run.summary()
        ctx.report.results["saddle_sym"] = run.report.to_dict()
        out = run.outcome
        if out.kind == "symmetric_saddle":
            ctx.artifacts.orbits["saddle_sym"] = out.u_plus
        else:
            ctx.artifacts.orbits["homoclinic_plus"] = out.u_plus
            ctx.artifacts.orbits["homoclinic_minus"] = out.u_minus
            ctx.report.results["homoclinic_pair"] = {"orbits": ["homoclinic_plus", "homoclinic_minus"],
                                                     "reflection": "u_minus(t) = s(u_plus(t))",
                                                     "energy": total_energy(cfg.potential, out.u_plus)}
        ctx.artifacts.profiles["path_profile"] = path_profile_frame(run.relax.path, run.relax.grad_norms)
        ctx.artifacts.tables["relax_history"] = history_frame(run.relax.history)


def run_diagnose(ctx: RunContext) -> None:
    spec = ctx.cfg.potential
    if not ctx.orbit:
        raise ConfigError("diagnose needs --orbit PATH")
    with _stage(ctx.report, "diagnose"):
        curve = read_orbit_csv(spec, ctx.orbit)
        try:
            order: Optional[float] = residual_order(spec, curve)
        except InvalidGrid:
            order = None
        split = detect_splitting(spec, curve, ctx.cfg.path.splitting_delta, ctx.cfg.path.min_plateau)
        ctx.report.results["diagnostics"] = {
            "orbit": str(ctx.orbit),
            "M": curve.grid.M,
            "T": curve.grid.T,
            "energy": total_energy(spec, curve),
            "grad_norm": grad_norm(spec, curve),
            "ode_residual": ode_residual(spec, curve),
            "hamiltonian_residual": hamiltonian_residual(spec, curve),
            "residual_order": order,
            "tail_indicator": tail_indicator(spec, curve),
            "label": str(classify_tails(spec, curve, ctx.cfg.path.splitting_delta)),
            "splitting": {"count": split.count, "energies": split.energies,
                          "centers": [b.center for b in split.bumps],
                          "total_energy": split.total_energy, "bump_energy_sum": split.bump_energy_sum},
        }
        ctx.artifacts.orbits["diagnosed"] = curve


COMMANDS: Dict[str, Callable[[RunContext], None]] = {
    "verify": run_verify,
    "minimize": run_minimize,
    "pairs": run_pairs,
    "gap": run_gap,
    "mp": run_mp,
    "mp-sym": run_mp_sym,
    "diagnose": run_diagnose,
}


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

def emit_plot_data(report: RunReport, artifacts: Artifacts, directory: Path, formats: Sequence[str] = ("csv",),
                   normalized: bool = False) -> List[Path]:
    """Write the report echo, then one orbit table per orbit, the traces table and path profiles."""
    directory = Path(directory)
    written = [save_report(directory / config.REPORT_NAME, report, normalized)]
    if artifacts.spec is None or not (artifacts.orbits or artifacts.profiles):
        return written
    tables: Dict[str, pd.DataFrame] = {f"orbit_{name}": curve_to_frame(artifacts.spec, c)
                                       for name, c in artifacts.orbits.items()}
    if artifacts.orbits:
        tables["traces"] = traces_frame(artifacts.orbits)
    tables.update(artifacts.profiles)
    tables.update(artifacts.tables)
    written += write_tables(directory, tables, formats)
    if "png" in formats:
        from .plotting import plot_profile, plot_traces

        if artifacts.orbits:
            written.append(plot_traces(tables["traces"], directory / "traces.png"))
        for name, df in artifacts.profiles.items():
            written.append(plot_profile(df, directory / f"{name}.png"))
    log.info("Outputs written directory=%s files=%s", directory, len(written))
    return written


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    setup_logging(args.log_level, args.log_json or None)
    workers = args.workers or config.MAX_WORKERS
    report = RunReport(args.command, workers=workers)
    artifacts = Artifacts()
    out, formats, normalized = Path(args.out or config.OUT_DIR), ("csv",), args.normalized_report
    code = 1
    try:
        try:
            cfg = load_run_config(args.config, args.set, out=args.out or None,
                                  normalized=args.normalized_report or None)
        except ConfigError as e:
            report.fail("config", e)
            raise
        out, formats, normalized = Path(cfg.output.directory), cfg.output.formats, cfg.output.normalized
        report.config = cfg.to_dict(normalized)
        artifacts.spec = cfg.potential
        log.info("Starting %s: potential=%s T=%s M=%s workers=%s out=%s", args.command, cfg.potential.kind,
                 cfg.grid.T, cfg.grid.M, workers, out)
        ctx = RunContext(cfg, report, artifacts, workers, Progress(logger=log), args.orbit or None)
        COMMANDS[args.command](ctx)
        code = EXIT_OK
    except OrbitForgeError as e:
        stage = e.stage or next((s for s, v in report.stages.items() if not v["passed"]), args.command)
        if not any(not v["passed"] for v in report.stages.values()):
            report.fail(stage, e)
        log.error("failed: %s", e, extra={"stage": stage})
        code = e.exit_code
    finally:
        report.exit_code = code
        emit_plot_data(report, artifacts, out, formats, normalized)
    log.info("Run summary command=%s exit_code=%s stages=%s", args.command, code,
             {k: v["passed"] for k, v in report.stages.items()})
    return code


if __name__ == "__main__":
    raise SystemExit(main())
