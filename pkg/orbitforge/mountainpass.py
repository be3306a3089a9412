"""Mountain-pass search in path space and the saddle diagnostics.

Paths are relaxed as an elastic band in the discrete H1 metric with a
climbing image; the climbing image is then refined by deflated Newton and
classified.
"""
from __future__ import annotations

import concurrent.futures as cf
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .curve import (DiscreteCurve, action_and_gradient, classify_tails, energy, energy_median, grad_norm,
                    h1_distance, h1_metric, hamiltonian_residual, ode_residual, residual_order,
                    shift_fractional, tail_indicator, total_energy)
from .errors import DriftedToMinimizer, GapNotDetected, Inconsistent, InvalidGrid, NonConvergence
from .minimize import GapReport, MinimizeResult, Projection, newton_polish
from .potential import PotentialSpec, hess_V
from .progress import Progress

log = logging.getLogger("orbitforge.mountainpass")

PathCallback = Callable[[int, List[DiscreteCurve], np.ndarray], None]

# relative slack on the max-image energy test; steps below MIN_STEP * alpha0 end the relaxation
ENERGY_SLACK = 1e-12
MIN_STEP = 1e-12


@dataclass
class CurvePath:
    images: List[DiscreteCurve]
    energies: np.ndarray

    def __post_init__(self) -> None:
        if len(self.images) < 2:
            raise ValueError("a path needs at least its two endpoints")
        for im in self.images[1:]:
            self.images[0].same_space(im)
        self.energies = np.asarray(self.energies, dtype=float)

    @property
    def N(self) -> int:
        return len(self.images)

    @property
    def grid(self):
        return self.images[0].grid

    def endpoints_ok(self, m_est: float, window: float) -> bool:
        return bool(abs(self.energies[0] - m_est) <= window and abs(self.energies[-1] - m_est) <= window)


def init_path(q0: DiscreteCurve, q1: DiscreteCurve, N: int, spec: Optional[PotentialSpec] = None) -> CurvePath:
    """Nodewise affine interpolation between two minimizers at s = j/(N-1)."""
    q0.same_space(q1)
    if N < 2:
        raise ValueError(f"N={N} must be >= 2")
    images = [q0]
    for j in range(1, N - 1):
        s = j / (N - 1)
        images.append(q0.with_values((1.0 - s) * q0.values + s * q1.values))
    images.append(q1)
    E = [total_energy(spec, im) for im in images] if spec is not None else [np.nan] * N
    return CurvePath(images, np.array(E))


@dataclass(frozen=True)
class PathOptions:
    tol_grad: float = 1e-3
    max_iter: int = 20000
    spring: Union[str, float] = "auto"
    climbing: bool = True
    max_backtracks: int = 6
    record_every: int = 10
    splitting_delta: float = 0.05
    min_plateau: int = 25


@dataclass
class RelaxResult:
    path: CurvePath
    c_est: float
    climbing_index: int
    grad_norm: float
    grad_norms: np.ndarray
    iterations: int
    converged: bool
    rejected_steps: int
    spring: float
    history: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def climbing_image(self) -> DiscreteCurve:
        return self.path.images[self.climbing_index]

    def summary(self) -> Dict[str, Any]:
        return {
            "c_est": self.c_est,
            "climbing_index": self.climbing_index,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "rejected_steps": self.rejected_steps,
            "spring": self.spring,
            "N": self.path.N,
        }


def _tangent(X: np.ndarray, j: int, metric) -> np.ndarray:
    t = X[j + 1] - X[j - 1]
    n = metric.norm(t)
    return t / n if n > 0 else t


def relax_path(spec: PotentialSpec, path: CurvePath, opts: Optional[PathOptions] = None, *,
               project: Optional[Projection] = None, callback: Optional[PathCallback] = None,
               workers: int = 1, progress: Optional[Progress] = None) -> RelaxResult:
    """Climbing-image elastic band in the H1 metric; endpoints stay frozen.

    Steps that raise the max-image energy are halved up to
    ``max_backtracks`` times; if none is accepted the path is kept, the
    step stays short and the iteration counts as rejected. Without a
    climbing image the stop test is the largest band force in H1 norm.
    """
    opts = opts or PathOptions()
    template = path.images[0]
    grid = template.grid
    h = grid.h
    metric = h1_metric(grid)
    N = path.N
    X = np.stack([im.values for im in path.images])

    def evaluate(vals: np.ndarray) -> Tuple[float, np.ndarray]:
        E, gi = action_and_gradient(spec, vals, h)
        g = np.zeros_like(vals)
        g[1:-1] = gi
        return E, g

    executor = cf.ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def evaluate_all(Xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        out = list(executor.map(evaluate, Xs)) if executor else [evaluate(x) for x in Xs]
        return np.array([e for e, _ in out]), np.stack([g for _, g in out])

    try:
        E, G = evaluate_all(X)
        lam = float(np.max(np.linalg.eigvalsh(hess_V(spec, X.reshape(-1, spec.k)))))
        alpha0 = 1.0 / max(1.0, lam)
        alpha = alpha0
        R = np.stack([metric.riesz(g) for g in G])
        if opts.spring == "auto":
            norms = [metric.norm(R[j]) for j in range(1, N - 1)]
            gaps = [metric.norm(X[j + 1] - X[j]) for j in range(N - 1)]
            spring = float(np.median(norms) / np.mean(gaps)) if N > 2 and np.mean(gaps) > 0 else 0.0
        else:
            spring = float(opts.spring)
        log.info("relax_path N=%s alpha0=%.3g spring=%.4g climbing=%s", N, alpha0, spring, opts.climbing)
        if progress is not None:
            progress.emit("relax:start", N=N, alpha0=alpha0, spring=spring)

        history: List[Dict[str, Any]] = []
        stalls = 0
        converged = False
        it = 0
        imax = 1 + int(np.argmax(E[1:-1])) if N > 2 else int(np.argmax(E))
        for it in range(opts.max_iter + 1):
            imax = 1 + int(np.argmax(E[1:-1])) if N > 2 else int(np.argmax(E))
            F = np.zeros_like(X)
            for j in range(1, N - 1):
                tau = _tangent(X, j, metric)
                par = metric.inner(R[j], tau)
                if opts.climbing and j == imax:
                    F[j] = -R[j] + 2.0 * par * tau
                else:
                    ahead = metric.norm(X[j + 1] - X[j])
                    behind = metric.norm(X[j] - X[j - 1])
                    F[j] = -(R[j] - par * tau) + spring * (ahead - behind) * tau
            if opts.climbing or N < 3:
                gn = float(np.max(np.linalg.norm(G[imax], axis=1))) / h
            else:
                # a plain band never zeroes the top image's gradient; its own force does vanish
                gn = max(metric.norm(F[j]) for j in range(1, N - 1))
            if it % opts.record_every == 0:
                climber = template.with_values(X[imax])
                centres = [b.center for b in detect_splitting(spec, climber, opts.splitting_delta,
                                                              opts.min_plateau).bumps]
                history.append({"iteration": it, "max_energy": float(E.max()), "climbing_index": imax,
                                "grad_norm": gn, "step": alpha, "bump_centers": centres})
            if callback is not None:
                callback(it, [template.with_values(x) for x in X], E)
            if gn < opts.tol_grad or N < 3:
                converged = gn < opts.tol_grad
                break
            if it == opts.max_iter:
                break
            top = float(E.max())
            step = alpha
            accepted = False
            for b in range(opts.max_backtracks + 1):
                Xt = X + step * F
                if project is not None:
                    Xt[1:-1] = np.stack([project(template.with_values(x)).values for x in Xt[1:-1]])
                Et, Gt = evaluate_all(Xt)
                if np.isfinite(Et).all() and Et.max() <= top + ENERGY_SLACK * max(1.0, abs(top)):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                # keep the path; the next iteration retries from a shorter step
                stalls += 1
                alpha = step
                if alpha < MIN_STEP * alpha0:
                    log.warning("relax_path stalled at iteration=%s step=%.3e", it, alpha)
                    break
                continue
            alpha = min(1.25 * step, alpha0)
            X, E, G = Xt, Et, Gt
            R = np.stack([metric.riesz(g) for g in G])
            if progress is not None and it and it % (50 * opts.record_every) == 0:
                progress.emit("relax:iteration", iteration=it, max_energy=float(E.max()), grad_norm=gn)
    finally:
        if executor is not None:
            executor.shutdown()

    images = [template.with_values(x) for x in X]
    grads = np.array([float(np.max(np.linalg.norm(g, axis=1))) / h for g in G])
    result = RelaxResult(CurvePath(images, E), float(E[imax]), imax, float(grads[imax]), grads, it,
                         converged, stalls, spring, history)
    log.info("relax_path done iterations=%s c_est=%.10g climbing=%s grad=%.3e converged=%s rejected_steps=%s",
             it, result.c_est, imax, result.grad_norm, converged, stalls)
    if progress is not None:
        progress.emit("relax:done", **result.summary())
    return result


# ---------------------------------------------------------------------------
# saddle refinement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RefineOptions:
    tol_refine: float = 1e-8
    max_iter: int = 50
    loose: float = 1e-1
    cluster_threshold: float = 0.05


def centered(spec: PotentialSpec, curve: DiscreteCurve) -> DiscreteCurve:
    m = energy_median(spec, curve)
    return curve if m is None else shift_fractional(curve, (curve.grid.center - m) * curve.grid.h)


def distance_to_minimizers(spec: PotentialSpec, curve: DiscreteCurve, representatives: Sequence[DiscreteCurve]) -> float:
    """H1 distance after centring, to the nearest representative sharing the limit wells."""
    c = centered(spec, curve)
    best = float("inf")
    for rep in representatives:
        try:
            best = min(best, h1_distance(c, rep))
        except (ValueError, TypeError):
            continue
    return best


def refine_saddle(spec: PotentialSpec, curve: DiscreteCurve, opts: Optional[RefineOptions] = None,
                  representatives: Sequence[DiscreteCurve] = (), project: Optional[Projection] = None) -> MinimizeResult:
    """Drive grad_J of a near-critical curve to zero with a residual-merit Newton.

    The translation mode is frozen first so the climbing image cannot slide
    along the tails; a free pass then clears what is left along that mode.
    """
    opts = opts or RefineOptions()
    gn0 = grad_norm(spec, curve)
    if gn0 > opts.loose:
        log.warning("refine_saddle input far from critical grad=%.3e loose=%.1e", gn0, opts.loose)
    polished, its, _ = newton_polish(spec, curve, opts.tol_refine, opts.max_iter, monotone=False, project=project)
    ok = grad_norm(spec, polished) <= opts.tol_refine
    if not ok:
        polished, extra, ok = newton_polish(spec, polished, opts.tol_refine, opts.max_iter, monotone=False,
                                            project=project, deflate=False)
        its += extra
    result = MinimizeResult(polished, total_energy(spec, polished), grad_norm(spec, polished), its, ok)
    if representatives:
        d = distance_to_minimizers(spec, polished, representatives)
        if d < opts.cluster_threshold:
            raise DriftedToMinimizer(f"refined curve within h1 distance {d:.3e} of a minimizer",
                                     result=result, distance=d)
    if not ok:
        raise NonConvergence(f"grad={result.grad_norm:.3e} > tol_refine={opts.tol_refine:g}",
                             result=result, stage="refine_saddle")
    log.info("refine_saddle energy=%.12g grad=%.3e iterations=%s", result.energy, result.grad_norm, its)
    return result


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ThreeMCheck:
    passed: bool
    j: int
    multiple: float
    distance: float


def check_3m(c_est: float, m_est: float, tol: float = 1e-2) -> ThreeMCheck:
    if not c_est > m_est:
        raise ValueError(f"check_3m needs c_est > m_est (got {c_est} <= {m_est})")
    j = max(1, int(round((c_est / m_est - 1.0) / 2.0)))
    multiple = (2 * j + 1) * m_est
    distance = abs(c_est - multiple)
    return ThreeMCheck(c_est < 3.0 * m_est - tol or distance > tol, j, multiple, distance)


def trace_distance(curve: DiscreteCurve, representatives: Sequence[DiscreteCurve], stride: int = 1) -> float:
    """How far the curve's trace escapes the union of the representatives' traces."""
    tree = cKDTree(np.concatenate([r.values for r in representatives]))
    d, _ = tree.query(curve.values[::max(1, stride)])
    return float(np.max(d))


@dataclass
class Bump:
    start: int
    end: int
    center: int
    energy: float
    from_well: Optional[int]
    to_well: Optional[int]


@dataclass
class SplittingReport:
    count: int
    bumps: List[Bump]
    total_energy: float
    bump_energy_sum: float

    @property
    def energies(self) -> List[float]:
        return [b.energy for b in self.bumps]


def _plateaus(labels: np.ndarray, min_len: int) -> List[Tuple[int, int, int]]:
    runs: List[Tuple[int, int, int]] = []
    i, M = 0, len(labels)
    while i < M:
        j = i
        while j + 1 < M and labels[j + 1] == labels[i]:
            j += 1
        if labels[i] >= 0 and j - i + 1 >= min_len:
            runs.append((i, j, int(labels[i])))
        i = j + 1
    return runs


def detect_splitting(spec: PotentialSpec, curve: DiscreteCurve, delta: float, min_plateau: int = 25) -> SplittingReport:
    """Split the nodes into well plateaus and transition bumps.

    Every cell's energy is assigned to exactly one bump: plateaus are cut at
    their midpoints, outer plateaus go to the adjacent bump.
    """
    W = spec.wells_array
    dist = np.linalg.norm(curve.values[:, None, :] - W[None, :, :], axis=2)
    near = np.argmin(dist, axis=1)
    labels = np.where(dist[np.arange(len(near)), near] <= delta, near, -1)
    cells = energy(spec, curve).cells
    total = float(cells.sum())
    M = curve.grid.M
    plats = _plateaus(labels, min_plateau)
    segments: List[Tuple[int, int, Optional[int], Optional[int]]] = []
    if not plats:
        if total > 0:
            segments.append((0, M - 1, None, None))
    else:
        if plats[0][0] > 0:
            segments.append((0, plats[0][0] - 1, None, plats[0][2]))
        for p, q in zip(plats, plats[1:]):
            segments.append((p[1] + 1, q[0] - 1, p[2], q[2]))
        if plats[-1][1] < M - 1:
            segments.append((plats[-1][1] + 1, M - 1, plats[-1][2], None))
    bounds = [0]
    for (_, e, _, _), (s, _, _, _) in zip(segments, segments[1:]):
        bounds.append((e + s) // 2 + 1)
    bounds.append(M)
    bumps: List[Bump] = []
    for n, (s, e, a, b) in enumerate(segments):
        dom = cells[bounds[n]:bounds[n + 1]]
        if e >= s:
            cum = np.cumsum(cells[s:e + 1])
            center = s + int(np.searchsorted(cum, 0.5 * cum[-1])) if cum[-1] > 0 else (s + e) // 2
        else:
            center = s
        bumps.append(Bump(int(s), int(e), int(center), float(dom.sum()), a, b))
    return SplittingReport(len(bumps), bumps, total, float(sum(b.energy for b in bumps)))


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass
class OutcomeInputs:
    c_est: float
    m_est: float
    refined: MinimizeResult
    delta: float
    representatives: Sequence[DiscreteCurve] = ()
    m_star: Optional[float] = None
    eta_min_est: float = float("nan")
    gap: Optional[float] = None
    tol_3m: float = 1e-2
    min_plateau: int = 25
    symmetric: bool = False


@dataclass
class SaddleReport:
    c_est: float
    m_est: float
    energy: float
    grad_norm: float
    label: str
    label_kind: str
    margin_m: float
    margin_m_star: Optional[float]
    third_well_asserted: Optional[bool]
    rho2: Optional[float]
    three_m: Optional[ThreeMCheck]
    trace_nu: Optional[float]
    tube_eps: Optional[float]
    splitting: SplittingReport
    eta_min_est: float
    strong_regime: bool
    ode_residual: float
    hamiltonian_residual: float
    residual_order: Optional[float]
    tail_indicator: float
    symmetric: bool = False
    ksym_distance: Optional[float] = None
    outcome: Optional[str] = None
    curve: Optional[DiscreteCurve] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        out = {k: v for k, v in self.__dict__.items() if k not in ("curve", "splitting", "three_m")}
        out["three_m"] = None if self.three_m is None else self.three_m.__dict__.copy()
        out["splitting"] = {
            "count": self.splitting.count,
            "energies": self.splitting.energies,
            "centers": [b.center for b in self.splitting.bumps],
            "total_energy": self.splitting.total_energy,
            "bump_energy_sum": self.splitting.bump_energy_sum,
        }
        return out


def classify_outcome(spec: PotentialSpec, inputs: OutcomeInputs) -> SaddleReport:
    curve = inputs.refined.curve
    E = total_energy(spec, curve)
    if inputs.c_est < inputs.m_est - 1e-6:
        raise Inconsistent(f"c_est={inputs.c_est:.10g} below m_est={inputs.m_est:.10g}")
    label = classify_tails(spec, curve, inputs.delta)
    if label.kind == "heteroclinic" and E <= inputs.m_est - 1e-6:
        raise Inconsistent(f"heteroclinic outcome with E={E:.10g} <= m_est={inputs.m_est:.10g}")

    rho2: Optional[float] = None
    asserted: Optional[bool] = None
    if inputs.m_star is not None:
        ends = {spec.well_index(curve.left), spec.well_index(curve.right)}
        third = [w for j, w in enumerate(spec.wells_array) if j not in ends]
        if inputs.c_est < inputs.m_star and third:
            rho2 = float(np.min(np.linalg.norm(curve.values[:, None, :] - np.array(third)[None], axis=2)))
            asserted = rho2 > 0
        else:
            asserted = False
            log.warning("third-well exclusion not asserted: c_est=%.10g >= m_star=%.10g",
                        inputs.c_est, inputs.m_star)

    three = check_3m(inputs.c_est, inputs.m_est, inputs.tol_3m) if inputs.c_est > inputs.m_est else None
    nu = trace_distance(curve, inputs.representatives) if inputs.representatives else None
    eps = inputs.gap / 4.0 if inputs.gap is not None else None
    split = detect_splitting(spec, curve, inputs.delta, inputs.min_plateau)
    try:
        order = residual_order(spec, curve)
    except InvalidGrid:
        order = None
    strong = bool(np.isfinite(inputs.eta_min_est) and inputs.c_est < inputs.m_est + inputs.eta_min_est)
    report = SaddleReport(
        c_est=inputs.c_est, m_est=inputs.m_est, energy=E, grad_norm=grad_norm(spec, curve),
        label=str(label), label_kind=label.kind, margin_m=inputs.c_est - inputs.m_est,
        margin_m_star=None if inputs.m_star is None else inputs.m_star - inputs.c_est,
        third_well_asserted=asserted, rho2=rho2, three_m=three, trace_nu=nu, tube_eps=eps,
        splitting=split, eta_min_est=inputs.eta_min_est, strong_regime=strong,
        ode_residual=ode_residual(spec, curve), hamiltonian_residual=hamiltonian_residual(spec, curve),
        residual_order=order, tail_indicator=tail_indicator(spec, curve), symmetric=inputs.symmetric,
        curve=curve,
    )
    log.info("classify label=%s E=%.10g c_est=%.10g margin=%.4g nu=%s bumps=%s", report.label, E,
             inputs.c_est, report.margin_m, nu, split.count)
    return report


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass
class MountainPassRun:
    initial: CurvePath
    relax: RelaxResult
    refined: MinimizeResult
    report: SaddleReport


def endpoints_from_gap(gap: GapReport) -> Tuple[DiscreteCurve, DiscreteCurve]:
    if len(gap.clusters) < 2:
        raise GapNotDetected(gap.statement, report=gap)
    return gap.clusters[0].representative, gap.clusters[1].representative


def run_mountain_pass(spec: PotentialSpec, gap: GapReport, delta: float, *, path_opts: Optional[PathOptions] = None,
                      refine_opts: Optional[RefineOptions] = None, N: int = 17, m_star: Optional[float] = None,
                      tol_3m: float = 1e-2, workers: int = 1, progress: Optional[Progress] = None) -> MountainPassRun:
    path_opts = path_opts or PathOptions()
    q0, q1 = endpoints_from_gap(gap)
    initial = init_path(q0, q1, N, spec)
    relax = relax_path(spec, initial, path_opts, workers=workers, progress=progress)
    if not relax.converged:
        raise NonConvergence(f"climbing image grad={relax.grad_norm:.3e} after {relax.iterations} iterations",
                             result=relax, stage="relax_path")
    reps = [c.representative for c in gap.clusters]
    refined = refine_saddle(spec, relax.climbing_image, refine_opts, representatives=reps)
    report = classify_outcome(spec, OutcomeInputs(
        c_est=relax.c_est, m_est=gap.m_est, refined=refined, delta=delta, representatives=reps,
        m_star=m_star, eta_min_est=gap.eta_min_est, gap=gap.gap, tol_3m=tol_3m, min_plateau=path_opts.min_plateau))
    return MountainPassRun(initial, relax, refined, report)
