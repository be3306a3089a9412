"""Action minimization: minimizing heteroclinics, the m_ij matrix and the gap detector."""
from __future__ import annotations

import concurrent.futures as cf
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import MatrixRankWarning, spsolve
from sklearn.cluster import AgglomerativeClustering
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt
from tqdm import tqdm

from . import config
from .curve import (DiscreteCurve, Grid, action_and_gradient, constant_curve, energy_median, grad_J, grad_norm, h1_distance,
                    h1_metric, hess_J, normalize_translation, ramp_curve, shift_fractional, total_energy,
                    translate)
from .errors import AllSeedsFailed, NonConvergence
from .potential import PotentialSpec
from .progress import Progress

log = logging.getLogger("orbitforge.minimize")

AMPLITUDES = (0.1, 0.3, 1.0)
# non-constant critical curves below this energy are solver artefacts
CRITICAL_ENERGY_FLOOR = 1e-6

Projection = Callable[[DiscreteCurve], DiscreteCurve]


@dataclass(frozen=True)
class MinimizeOptions:
    tol_grad: float = 1e-8
    max_iter: int = 20000
    renorm_every: int = 25
    polish_below: float = 1e-3
    newton_max_iter: int = 50
    memory: int = 10
    restarts: int = 2
    renormalize: bool = True


@dataclass
class MinimizeResult:
    curve: DiscreteCurve
    energy: float
    grad_norm: float
    iterations: int
    converged: bool
    normalized: bool = False
    history: List[float] = field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        return {
            "energy": self.energy,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "normalized": self.normalized,
        }


# ---------------------------------------------------------------------------
# Newton polish with translation deflation
# ---------------------------------------------------------------------------

def translation_mode(curve: DiscreteCurve) -> np.ndarray:
    """Unit centred-difference derivative on the interior nodes (flattened)."""
    u = curve.values
    tau = ((u[2:] - u[:-2]) / (2.0 * curve.grid.h)).ravel()
    n = np.linalg.norm(tau)
    return tau / n if n > 0 else tau


def transverse_grad_norm(curve: DiscreteCurve, g: np.ndarray) -> float:
    """grad_norm of grad_J with its component along the translation mode removed."""
    tau = translation_mode(curve)
    gi = g[1:-1].ravel()
    perp = (gi - float(tau @ gi) * tau).reshape(-1, curve.k)
    return float(np.max(np.linalg.norm(perp, axis=1))) / curve.grid.h


def newton_direction(spec: PotentialSpec, curve: DiscreteCurve, g: np.ndarray, deflate: bool = True) -> Optional[np.ndarray]:
    H = hess_J(spec, curve)
    rhs = -g[1:-1].ravel()
    tau = translation_mode(curve) if deflate else np.zeros(0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MatrixRankWarning)
        if deflate and np.any(tau):
            col = sp.csc_matrix(tau[:, None])
            K = sp.bmat([[H, col], [col.T, None]], format="csc")
            sol = spsolve(K, np.r_[rhs, 0.0])[:-1]
        else:
            sol = spsolve(H, rhs)
    if not np.all(np.isfinite(sol)):
        return None
    d = np.zeros_like(curve.values)
    d[1:-1] = sol.reshape(-1, curve.k)
    return d


def newton_polish(spec: PotentialSpec, curve: DiscreteCurve, tol: float, max_iter: int, *,
                  monotone: bool = True, project: Optional[Projection] = None, deflate: bool = True,
                  history: Optional[List[float]] = None) -> Tuple[DiscreteCurve, int, bool]:
    """Newton on grad_J, optionally with the translation mode frozen.

    ``monotone`` selects an energy line search (minimizers); otherwise the
    Euclidean norm of grad_J is the merit function (saddles). With
    ``deflate`` the bordered step cannot move along the translation mode, so
    the merit and the stopping test use the transverse part of grad_J.
    """
    def residual(c: DiscreteCurve, gc: np.ndarray) -> float:
        return transverse_grad_norm(c, gc) if deflate else grad_norm(spec, c, gc)

    def merit(c: DiscreteCurve, gc: np.ndarray) -> float:
        if not deflate:
            return float(np.linalg.norm(gc))
        tau = translation_mode(c)
        gi = gc[1:-1].ravel()
        return float(np.linalg.norm(gi - float(tau @ gi) * tau))

    g = grad_J(spec, curve)
    E = total_energy(spec, curve)
    for it in range(max_iter):
        if residual(curve, g) <= tol:
            return curve, it, True
        d = newton_direction(spec, curve, g, deflate)
        if d is None:
            log.debug("newton singular system at iter=%s", it)
            return curve, it, False
        slope = float(np.sum(g * d))
        if monotone and slope >= 0:
            log.debug("newton direction not a descent direction slope=%.3e", slope)
            return curve, it, False
        r0 = merit(curve, g)
        alpha, accepted = 1.0, False
        for _ in range(30):
            vals = curve.values + alpha * d
            if np.all(np.isfinite(vals)):
                trial = curve.with_values(vals)
                if project is not None:
                    trial = project(trial)
                g_t = grad_J(spec, trial)
                r_t = merit(trial, g_t)
                E_t = total_energy(spec, trial)
                if monotone:
                    accepted = (E_t <= E + 1e-4 * alpha * slope
                                or (E_t <= E + 1e-13 * max(1.0, abs(E)) and r_t < r0))
                else:
                    accepted = r_t < (1.0 - 1e-4 * alpha) * r0
                if accepted:
                    break
            alpha *= 0.5
        if not accepted:
            return curve, it, residual(curve, g) <= tol
        curve, g, E = trial, g_t, E_t
        if history is not None:
            history.append(E)
    return curve, max_iter, residual(curve, g) <= tol


# ---------------------------------------------------------------------------
# quasi-Newton descent
# ---------------------------------------------------------------------------

def minimize_energy(spec: PotentialSpec, curve0: DiscreteCurve, opts: Optional[MinimizeOptions] = None,
                    progress: Optional[Progress] = None) -> MinimizeResult:
    """Limited-memory quasi-Newton descent in H1 coordinates, then a Newton polish.

    The iterate is translation-normalized every ``renorm_every`` iterations
    when that does not raise the energy. Returns the best iterate with
    ``converged=False`` when the budget runs out.
    """
    opts = opts or MinimizeOptions()
    curve = curve0
    grid = curve.grid
    h, k, n = grid.h, curve.k, grid.M - 2
    E = total_energy(spec, curve)
    gn = grad_norm(spec, curve)
    history = [E]
    if gn <= opts.tol_grad:
        return MinimizeResult(curve, E, gn, 0, True, False, history)

    metric = h1_metric(grid)
    work = np.array(curve.values)

    def fun(y: np.ndarray) -> Tuple[float, np.ndarray]:
        work[1:-1] = metric.from_coords(y.reshape(n, k))
        val, gx = action_and_gradient(spec, work, h)
        if not np.isfinite(val):
            return float("inf"), np.zeros_like(y)
        return val, metric.dual_to_coords(gx).ravel()

    iterations, normalized = 0, False
    while iterations < opts.max_iter and gn > opts.polish_below:
        budget = min(opts.renorm_every, opts.max_iter - iterations)
        y0 = metric.to_coords(curve.interior.copy()).ravel()
        res = minimize(fun, y0, jac=True, method="L-BFGS-B",
                       options={"maxiter": budget, "maxcor": opts.memory, "ftol": 0.0, "gtol": 0.0})
        iterations += max(int(res.nit), 1)
        if np.isfinite(res.fun) and res.fun <= E:
            vals = np.array(curve.values)
            vals[1:-1] = metric.from_coords(res.x.reshape(n, k))
            curve, E = curve.with_values(vals), float(res.fun)
        history.append(E)
        if opts.renormalize:
            shifted = normalize_translation(spec, curve)
            if shifted is not curve:
                E_s = total_energy(spec, shifted)
                if E_s <= E:
                    curve, E, normalized = shifted, E_s, True
                    history.append(E)
        gn = grad_norm(spec, curve)
        log.debug("lbfgs iterations=%s energy=%.12g grad=%.3e status=%s", iterations, E, gn, res.status)
        if res.status != 1:
            break

    if gn > opts.tol_grad and iterations < opts.max_iter:
        budget = min(opts.newton_max_iter, opts.max_iter - iterations)
        # truncation pins the minimizer, so grad_J keeps a component along the translation mode
        curve, its, _ = newton_polish(spec, curve, opts.tol_grad, budget, monotone=True, deflate=False,
                                      history=history)
        iterations += its
    E = total_energy(spec, curve)
    gn = grad_norm(spec, curve)
    converged = gn <= opts.tol_grad
    if progress is not None:
        progress.emit("minimize:done", energy=E, grad_norm=gn, iterations=iterations, converged=converged)
    return MinimizeResult(curve, E, gn, iterations, converged, normalized, history)


# ---------------------------------------------------------------------------
# multistart
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultistartOptions:
    n_seeds: int = 32
    rng_seed: int = 0
    cluster_threshold: float = 0.05
    energy_window: float = 1e-3
    workers: int = 1
    seed_shift: int = 0


def seed_curve(grid: Grid, a: Sequence[float], b: Sequence[float], index: int, rng_seed: int,
               shift: int = 0) -> DiscreteCurve:
    """Straight ramp plus Gaussian nodal noise; the schedule is fixed per (rng_seed, index)."""
    rng = np.random.default_rng([int(rng_seed), int(index)])
    amp = AMPLITUDES[index % len(AMPLITUDES)]
    base = ramp_curve(grid, a, b, min(1.0, grid.T))
    noisy = base.with_values(base.values + amp * rng.standard_normal(base.values.shape))
    return translate(noisy, shift)


def _solve_seed(spec: PotentialSpec, curve0: DiscreteCurve, opts: MinimizeOptions) -> MinimizeResult:
    """Minimize one seed, resuming from the best iterate when the budget runs out."""
    state: Dict[str, Any] = {"curve": curve0, "result": None}
    try:
        for attempt in Retrying(stop=stop_after_attempt(opts.restarts + 1),
                                retry=retry_if_exception_type(NonConvergence), reraise=True):
            with attempt:
                res = minimize_energy(spec, state["curve"], opts)
                state["result"], state["curve"] = res, res.curve
                if not res.converged:
                    raise NonConvergence(f"grad={res.grad_norm:.3e} after {res.iterations} iterations",
                                         result=res, stage="minimize")
    except NonConvergence as e:
        return e.result
    return state["result"]


def multistart(spec: PotentialSpec, a: Sequence[float], b: Sequence[float], grid: Grid,
               opts: Optional[MultistartOptions] = None, solver: Optional[MinimizeOptions] = None,
               progress: Optional[Progress] = None) -> List[MinimizeResult]:
    opts = opts or MultistartOptions()
    solver = solver or MinimizeOptions()
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.array_equal(a, b):
        c = constant_curve(grid, a)
        return [MinimizeResult(c, 0.0, 0.0, 0, True, False, [0.0])]
    curves = [seed_curve(grid, a, b, s, opts.rng_seed, opts.seed_shift) for s in range(opts.n_seeds)]
    if progress is not None:
        progress.emit("multistart:start", n_seeds=opts.n_seeds, a=a.tolist(), b=b.tolist())
    with cf.ThreadPoolExecutor(max_workers=max(1, opts.workers)) as ex:
        results = list(tqdm(ex.map(lambda c: _solve_seed(spec, c, solver), curves), total=len(curves),
                            desc=f"seeds {a.tolist()}->{b.tolist()}", disable=not config.SHOW_PROGRESS))
    for i, r in enumerate(results):
        if r.converged and r.energy < CRITICAL_ENERGY_FLOOR:
            log.warning("seed=%s converged to non-constant curve with energy=%.3e; marked failed", i, r.energy,
                        extra={"seed": i})
            r.converged = False
    n_ok = sum(r.converged for r in results)
    log.info("multistart a=%s b=%s seeds=%s converged=%s", a.tolist(), b.tolist(), len(results), n_ok)
    if progress is not None:
        progress.emit("multistart:done", converged=n_ok, n_seeds=len(results))
    return results


def best_result(results: Sequence[MinimizeResult], label: str) -> MinimizeResult:
    ok = [r for r in results if r.converged]
    if not ok:
        raise AllSeedsFailed(f"no seed converged for {label}", stage="multistart")
    return min(ok, key=lambda r: r.energy)


def compute_m(spec: PotentialSpec, sigma_i: Sequence[float], sigma_j: Sequence[float], grid: Grid,
              n_seeds: int = 32, rng_seed: int = 0, solver: Optional[MinimizeOptions] = None,
              workers: int = 1) -> Tuple[float, MinimizeResult]:
    opts = MultistartOptions(n_seeds=n_seeds, rng_seed=rng_seed, workers=workers)
    results = multistart(spec, sigma_i, sigma_j, grid, opts, solver)
    best = best_result(results, f"{list(sigma_i)}->{list(sigma_j)}")
    return best.energy, best


@dataclass
class MMatrix:
    values: np.ndarray
    pair: Tuple[int, int]
    m: float
    m_star: Optional[float]
    margins: Dict[int, float]
    margin_tol: float
    triangle_ok: bool
    best: Dict[Tuple[int, int], MinimizeResult] = field(default_factory=dict, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "values": self.values.tolist(),
            "pair": list(self.pair),
            "m": self.m,
            "m_star": self.m_star,
            "margins": {str(j): v for j, v in sorted(self.margins.items())},
            "margin_tol": self.margin_tol,
            "triangle_ok": self.triangle_ok,
        }


def m_matrix(spec: PotentialSpec, grid: Grid, opts: Optional[MultistartOptions] = None,
             solver: Optional[MinimizeOptions] = None, pair: Tuple[int, int] = (0, 1),
             margin_tol: float = 1e-6, progress: Optional[Progress] = None) -> MMatrix:
    opts = opts or MultistartOptions()
    W = spec.wells_array
    l = len(W)
    values = np.zeros((l, l))
    best: Dict[Tuple[int, int], MinimizeResult] = {}
    for i in range(l):
        for j in range(i + 1, l):
            results = multistart(spec, W[i], W[j], grid, opts, solver, progress)
            r = best_result(results, f"m[{i},{j}]")
            values[i, j] = values[j, i] = r.energy
            best[(i, j)] = r
            log.info("m[%s,%s]=%.10g grad=%.3e", i, j, r.energy, r.grad_norm)
    a, b = pair
    m = float(values[a, b])
    margins = {s: float(values[a, s] + values[s, b] - m) for s in range(l) if s not in (a, b)}
    m_star = min(values[a, s] + values[s, b] for s in margins) if margins else None
    ok = all(v > margin_tol for v in margins.values())
    if not ok:
        log.warning("triangle inequality margin <= %.1e: %s", margin_tol, margins)
    return MMatrix(values, (a, b), m, None if m_star is None else float(m_star), margins, margin_tol, ok, best)


# ---------------------------------------------------------------------------
# gap detection
# ---------------------------------------------------------------------------

def center_minimizer(spec: PotentialSpec, curve: DiscreteCurve, opts: Optional[MinimizeOptions] = None) -> MinimizeResult:
    """Place the energy median exactly at t=0, then re-converge with the translation mode frozen.

    ``grad_norm`` of the result is the transverse residual; the component
    along the translation mode is what pins the uncentred minimizer.
    """
    opts = opts or MinimizeOptions()
    m = energy_median(spec, curve)
    if m is None:
        g = grad_J(spec, curve)
        gn = grad_norm(spec, curve, g)
        return MinimizeResult(curve, total_energy(spec, curve), gn, 0, gn <= opts.tol_grad)
    shifted = shift_fractional(curve, (curve.grid.center - m) * curve.grid.h)
    polished, its, ok = newton_polish(spec, shifted, opts.tol_grad, opts.newton_max_iter, monotone=False)
    gn = transverse_grad_norm(polished, grad_J(spec, polished))
    if not ok:
        log.warning("centring did not reconverge: transverse grad=%.3e tol=%.1e", gn, opts.tol_grad)
    return MinimizeResult(polished, total_energy(spec, polished), gn, its, ok, normalized=True)


@dataclass
class Cluster:
    representative: DiscreteCurve
    energy: float
    members: int
    energy_spread: float
    seeds: List[int]

    def summary(self) -> Dict[str, Any]:
        return {"energy": self.energy, "members": self.members, "energy_spread": self.energy_spread,
                "seeds": self.seeds}


@dataclass
class GapReport:
    clusters: List[Cluster]
    rep_distances: List[List[float]]
    gap: Optional[float]
    threshold: float
    passed: bool
    m_est: float
    n_seeds: int
    n_converged: int
    n_kept: int
    eta_min_est: float

    @property
    def statement(self) -> str:
        verb = "gap detected" if self.passed else "no gap detected"
        return f"{verb} at threshold {self.threshold:g} ({len(self.clusters)} cluster(s))"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "clusters": [c.summary() for c in self.clusters],
            "rep_distances": self.rep_distances,
            "gap": self.gap,
            "threshold": self.threshold,
            "passed": self.passed,
            "m_est": self.m_est,
            "n_seeds": self.n_seeds,
            "n_converged": self.n_converged,
            "n_kept": self.n_kept,
            "eta_min_est": self.eta_min_est,
            "statement": self.statement,
        }


def _single_linkage(D: np.ndarray, threshold: float) -> np.ndarray:
    if len(D) == 1:
        return np.zeros(1, dtype=int)
    raw = AgglomerativeClustering(n_clusters=None, distance_threshold=threshold, linkage="single",
                                  metric="precomputed").fit(D).labels_
    order: Dict[int, int] = {}
    for lab in raw:
        order.setdefault(int(lab), len(order))
    return np.array([order[int(lab)] for lab in raw])


def detect_gap(spec: PotentialSpec, grid: Grid, opts: Optional[MultistartOptions] = None,
               solver: Optional[MinimizeOptions] = None, pair: Tuple[int, int] = (0, 1),
               progress: Optional[Progress] = None) -> GapReport:
    opts = opts or MultistartOptions()
    solver = solver or MinimizeOptions()
    W = spec.wells_array
    results = multistart(spec, W[pair[0]], W[pair[1]], grid, opts, solver, progress)
    best = best_result(results, "gap")
    window = best.energy + opts.energy_window
    kept = []
    for i, r in enumerate(results):
        if not r.converged or r.energy > window:
            continue
        c = center_minimizer(spec, r.curve, solver)
        if c.converged:
            kept.append((i, c))
        else:
            log.warning("seed=%s dropped from gap detection: centring grad=%.3e", i, c.grad_norm, extra={"seed": i})
    if not kept:
        raise NonConvergence("no minimizer re-converged after centring", stage="gap")
    curves = [c.curve for _, c in kept]
    energies = np.array([total_energy(spec, c) for c in curves])
    n = len(curves)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = h1_distance(curves[i], curves[j])
    labels = _single_linkage(D, opts.cluster_threshold)
    clusters: List[Cluster] = []
    for lab in range(int(labels.max()) + 1):
        idx = np.flatnonzero(labels == lab)
        rep = int(idx[np.argmin(energies[idx])])
        clusters.append(Cluster(curves[rep], float(energies[rep]), len(idx),
                                float(energies[idx].max() - energies[idx].min()),
                                [kept[i][0] for i in idx]))
    reps = [c.representative for c in clusters]
    rep_d = [[h1_distance(p, q) for q in reps] for p in reps]
    cross = D[labels[:, None] != labels[None, :]]
    gap = float(cross.min()) if cross.size else None
    passed = len(clusters) >= 2 and gap is not None and gap > opts.cluster_threshold
    nonconst = [r.energy for r in results if r.converged and r.energy >= CRITICAL_ENERGY_FLOOR]
    report = GapReport(clusters, rep_d, gap, opts.cluster_threshold, passed, best.energy, len(results),
                       sum(r.converged for r in results), n, float(min(nonconst)) if nonconst else float("nan"))
    log.info("detect_gap clusters=%s gap=%s threshold=%s passed=%s m_est=%.10g",
             len(clusters), gap, opts.cluster_threshold, passed, best.energy)
    return report
