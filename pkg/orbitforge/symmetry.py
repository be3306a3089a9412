"""Reflection-equivariant pipeline for potentials with V(s(u)) = V(u).

s negates the first coordinate. A curve is equivariant when
s(u_i) == u_{M-1-i} bitwise; the cone additionally has u_1 >= 0 for t >= 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .curve import DiscreteCurve, Grid, psi_curve, total_energy
from .errors import Inconsistent, NonConvergence, NoSignChange, NotSymmetric, Unclassified, WellMismatch
from .minimize import CRITICAL_ENERGY_FLOOR, MinimizeOptions, MinimizeResult, newton_polish
from .mountainpass import (OutcomeInputs, PathOptions, RefineOptions, RelaxResult, SaddleReport,
                           classify_outcome, detect_splitting, init_path, refine_saddle, relax_path)
from .potential import PotentialSpec
from .progress import Progress

log = logging.getLogger("orbitforge.symmetry")


def reflect(u: Any) -> np.ndarray:
    v = np.array(u, dtype=float, copy=True)
    v[..., 0] = -v[..., 0]
    return v


def reflect_curve(q: DiscreteCurve) -> DiscreteCurve:
    """t -> s(q(-t)); swaps and reflects the limit wells."""
    return DiscreteCurve(q.grid, reflect(q.values[::-1]), reflect(q.right), reflect(q.left))


def reflect_values(q: DiscreteCurve) -> DiscreteCurve:
    """Pointwise s(q(t)) with no time reversal."""
    return DiscreteCurve(q.grid, reflect(q.values), reflect(q.left), reflect(q.right))


def is_equivariant(q: DiscreteCurve) -> bool:
    return bool(np.array_equal(reflect(q.values[::-1]), q.values))


def in_cone(q: DiscreteCurve) -> bool:
    return is_equivariant(q) and bool(np.all(q.values[q.grid.center:, 0] >= 0))


def _require_pair(q: DiscreteCurve) -> None:
    if not np.array_equal(reflect(q.right), q.left):
        raise WellMismatch("limit wells are not exchanged by the reflection")


def symmetric_projection(q: DiscreteCurve) -> DiscreteCurve:
    """(q + reflect_curve(q)) / 2, exactly equivariant in floating point."""
    _require_pair(q)
    return q.with_values(0.5 * (q.values + reflect(q.values[::-1])))


def _mirror_right(q: DiscreteCurve, p: int) -> DiscreteCurve:
    M, c = q.grid.M, q.grid.center
    half = np.tile(q.right, (c + 1, 1))
    n = min(c + 1, M - p)
    half[:n] = q.values[p:p + n]
    half[0, 0] = 0.0
    vals = np.empty_like(q.values)
    vals[c:] = half
    vals[:c] = reflect(half[1:][::-1])
    return q.with_values(vals)


def _mirror_left(q: DiscreteCurve, p: int) -> DiscreteCurve:
    c = q.grid.center
    half = np.tile(q.left, (c + 1, 1))
    n = min(c + 1, p + 1)
    half[c + 1 - n:] = q.values[p - n + 1:p + 1]
    half[-1, 0] = 0.0
    vals = np.empty_like(q.values)
    vals[:c + 1] = half
    vals[c + 1:] = reflect(half[:-1][::-1])
    return q.with_values(vals)


def symmetrize(spec: PotentialSpec, q: DiscreteCurve) -> DiscreteCurve:
    """Move the sign change of u_1 to t=0 and mirror the cheaper half.

    The node of smallest |u_1| next to a sign change is placed at the
    centre with u_1 snapped to 0; a half shorter than the grid is padded
    with its well.
    """
    _require_pair(q)
    u1 = q.values[:, 0]
    change = np.flatnonzero(u1[:-1] * u1[1:] < 0)
    zeros = 1 + np.flatnonzero(u1[1:-1] == 0)
    if not len(change) and not len(zeros):
        raise NoSignChange("first coordinate never changes sign")
    cand = np.unique(np.concatenate([change, change + 1, zeros]))
    p = int(cand[np.argmin(np.abs(u1[cand]))])
    left, right = _mirror_left(q, p), _mirror_right(q, p)
    e_left, e_right = total_energy(spec, left), total_energy(spec, right)
    log.debug("symmetrize pivot=%s e_left=%.12g e_right=%.12g", p, e_left, e_right)
    return left if e_left <= e_right else right


def fold(spec: PotentialSpec, q: DiscreteCurve) -> DiscreteCurve:
    if not is_equivariant(q):
        raise NotSymmetric("fold needs an exactly equivariant curve")
    vals = np.array(q.values)
    c = q.grid.center
    vals[c:, 0] = np.abs(vals[c:, 0])
    vals[:c + 1, 0] = -np.abs(vals[:c + 1, 0])
    return q.with_values(vals)


def h_sym(spec: PotentialSpec, q: DiscreteCurve) -> DiscreteCurve:
    """Curve-level form of v -> F+(v + psi) - psi: the input is the curve v + psi itself."""
    return fold(spec, q)


def h_sym_perturbation(spec: PotentialSpec, v: np.ndarray, grid: Grid) -> np.ndarray:
    """Perturbation-level form: v (zero at the ends) -> fold(v + psi) - psi.

    psi is projected first so that an exactly equivariant v keeps v + psi
    exactly equivariant.
    """
    psi = symmetric_projection(psi_curve(grid, *spec.wells[:2]))
    return fold(spec, psi.with_values(psi.values + v)).values - psi.values


def functional_J(spec: PotentialSpec, v: np.ndarray, grid: Grid) -> float:
    """J(v) = E(v + psi) for a perturbation v vanishing at the ends."""
    psi = psi_curve(grid, *spec.wells[:2])
    return total_energy(spec, psi.with_values(psi.values + v))


def sym_project(spec: PotentialSpec):
    def project(q: DiscreteCurve) -> DiscreteCurve:
        return fold(spec, symmetric_projection(q))
    return project


def symmetric_minimizer(spec: PotentialSpec, q: DiscreteCurve, opts: Optional[MinimizeOptions] = None) -> DiscreteCurve:
    """Symmetrize, fold, then re-converge inside the cone."""
    opts = opts or MinimizeOptions()
    folded = fold(spec, symmetrize(spec, q))
    polished, _, ok = newton_polish(spec, folded, opts.tol_grad, opts.newton_max_iter, monotone=False,
                                    project=sym_project(spec))
    if not ok:
        log.warning("symmetric minimizer polish did not reach tol=%.1e", opts.tol_grad)
    return polished


def ksym_distance(curve: DiscreteCurve, representatives: Sequence[DiscreteCurve]) -> Optional[float]:
    """Distance of u(0) to the minimizers' values at t=0."""
    if not representatives:
        return None
    c = curve.grid.center
    mids = np.array([r.values[r.grid.center] for r in representatives])
    return float(np.min(np.linalg.norm(mids - curve.values[c], axis=1)))


# ---------------------------------------------------------------------------
# outcome classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymOptions:
    tol: float = 1e-3
    drift_fraction: float = 0.1
    drift_window: int = 100
    delta: float = 0.05
    min_plateau: int = 25
    polish_iter: int = 50
    tol_refine: float = 1e-8


@dataclass
class SymOutcome:
    kind: str
    u_plus: Optional[DiscreteCurve] = None
    u_minus: Optional[DiscreteCurve] = None
    harvested_converged: Optional[bool] = None
    drift: Optional[float] = None

    def summary(self) -> Dict[str, Any]:
        return {"kind": self.kind, "harvested_converged": self.harvested_converged, "drift": self.drift,
                "reflection": "u_minus(t) = s(u_plus(t))" if self.u_minus is not None else None}


def bump_drift(history: Sequence[Mapping[str, Any]], M: int, opts: SymOptions) -> Optional[float]:
    """Displacement of the outermost bump centre over the last window, if it drifts monotonically."""
    rows = [r for r in history if r.get("bump_centers")]
    if not rows:
        return None
    last = rows[-1]["iteration"]
    window = [r for r in rows if r["iteration"] >= last - opts.drift_window]
    if rows[0]["iteration"] > last - opts.drift_window or len(window) < 2:
        return None
    outer = [max(r["bump_centers"]) for r in window]
    if any(b < a for a, b in zip(outer, outer[1:])):
        return None
    moved = float(outer[-1] - outer[0])
    return moved if moved > opts.drift_fraction * M else None


def harvest_homoclinic(spec: PotentialSpec, image: DiscreteCurve, opts: SymOptions) -> SymOutcome:
    split = detect_splitting(spec, image, opts.delta, opts.min_plateau)
    if not split.bumps:
        raise Unclassified("no bump to harvest")
    loops = [b for b in split.bumps if b.from_well is not None and b.from_well == b.to_well]
    bump = max(loops or split.bumps, key=lambda b: b.center)
    support = max(1, bump.end - bump.start + 1)
    half = max(3 * support // 2, opts.min_plateau)
    anchor = image.right
    idx = bump.center + np.arange(-half, half + 1)
    inside = (idx >= 0) & (idx < image.grid.M)
    vals = np.tile(anchor, (len(idx), 1))
    vals[inside] = image.values[idx[inside]]
    cand = DiscreteCurve(Grid(image.grid.h * half, 2 * half + 1), vals, anchor, anchor)
    polished, _, ok = newton_polish(spec, cand, opts.tol_refine, opts.polish_iter, monotone=False)
    E = total_energy(spec, polished)
    excursion = float(np.max(np.linalg.norm(polished.values - anchor, axis=1)))
    if E < CRITICAL_ENERGY_FLOOR or excursion <= opts.delta:
        # a solution looping at one well is either constant or pays a fixed energy floor
        log.warning("harvested bump collapsed onto the well: E=%.3e excursion=%.3e; keeping the unpolished bump",
                    E, excursion)
        polished, ok = cand, False
    log.info("harvested bump centre=%s support=%s window=%s converged=%s", bump.center, support, 2 * half + 1, ok)
    return SymOutcome("dichotomy", polished, reflect_values(polished), ok)


def classify_sym_outcome(spec: PotentialSpec, history: Sequence[Mapping[str, Any]], last_image: DiscreteCurve,
                         refined: Optional[MinimizeResult], c_sym: float,
                         opts: Optional[SymOptions] = None) -> SymOutcome:
    opts = opts or SymOptions()
    if refined is not None and refined.converged and in_cone(refined.curve) \
            and abs(refined.energy - c_sym) <= opts.tol:
        return SymOutcome("symmetric_saddle", refined.curve)
    drift = bump_drift(history, last_image.grid.M, opts)
    if drift is not None:
        out = harvest_homoclinic(spec, last_image, opts)
        out.drift = drift
        return out
    raise Unclassified("neither a converged symmetric saddle nor a drifting bump")


# ---------------------------------------------------------------------------
# symmetric mountain pass
# ---------------------------------------------------------------------------

@dataclass
class SymmetricRun:
    endpoints: List[DiscreteCurve]
    relax: RelaxResult
    refined: Optional[MinimizeResult]
    outcome: SymOutcome
    report: SaddleReport
    equivariance_checks: int = 0
    equivariance_violations: int = 0

    def summary(self) -> Dict[str, Any]:
        return {"equivariance_checks": self.equivariance_checks,
                "equivariance_violations": self.equivariance_violations,
                "outcome": self.outcome.summary(), "relax": self.relax.summary()}


def mp_sym(spec: PotentialSpec, q0: DiscreteCurve, q1: DiscreteCurve, m_est: float, delta: float, *,
           N: int = 17, path_opts: Optional[PathOptions] = None, refine_opts: Optional[RefineOptions] = None,
           solver: Optional[MinimizeOptions] = None, sym_opts: Optional[SymOptions] = None,
           representatives: Sequence[DiscreteCurve] = (), gap: Optional[float] = None,
           eta_min_est: float = float("nan"), workers: int = 1, progress: Optional[Progress] = None) -> SymmetricRun:
    """Mountain pass restricted to equivariant curves in the cone."""
    if not spec.symmetric:
        raise WellMismatch("mp_sym needs a potential flagged symmetric")
    path_opts = path_opts or PathOptions()
    refine_opts = refine_opts or RefineOptions()
    sym_opts = sym_opts or SymOptions(delta=path_opts.splitting_delta, min_plateau=path_opts.min_plateau)
    project = sym_project(spec)
    ends = [symmetric_minimizer(spec, q, solver) for q in (q0, q1)]
    path = init_path(ends[0], ends[1], N, spec)
    counts = {"checks": 0, "violations": 0}

    def check(it: int, images: List[DiscreteCurve], energies: np.ndarray) -> None:
        for im in images:
            counts["checks"] += 1
            if not is_equivariant(im):
                counts["violations"] += 1

    relax = relax_path(spec, path, path_opts, project=project, callback=check, workers=workers, progress=progress)
    if counts["violations"]:
        log.error("equivariance violated %s times", counts["violations"])
    c_sym = relax.c_est
    if c_sym < m_est - 1e-6:
        raise Inconsistent(f"c_sym={c_sym:.10g} below m_est={m_est:.10g}", stage="mp_sym")
    refined: Optional[MinimizeResult]
    try:
        refined = refine_saddle(spec, relax.climbing_image, refine_opts, project=project)
    except NonConvergence as e:
        refined = e.result
        log.warning("symmetric refinement failed: %s", e)
    outcome = classify_sym_outcome(spec, relax.history, relax.climbing_image, refined, c_sym, sym_opts)
    target = refined if outcome.kind == "symmetric_saddle" else MinimizeResult(
        outcome.u_plus, total_energy(spec, outcome.u_plus), float("nan"), 0, bool(outcome.harvested_converged))
    report = classify_outcome(spec, OutcomeInputs(
        c_est=c_sym, m_est=m_est, refined=target, delta=delta,
        representatives=list(representatives) or ends, eta_min_est=eta_min_est, gap=gap,
        min_plateau=path_opts.min_plateau, symmetric=True))
    report.ksym_distance = ksym_distance(target.curve, list(representatives) or ends)
    report.outcome = outcome.kind
    return SymmetricRun(ends, relax, refined, outcome, report, counts["checks"], counts["violations"])
