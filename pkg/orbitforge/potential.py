"""Multi-well potentials: evaluation, analytic derivatives and sampled audits.

A potential is described by a serializable :class:`PotentialSpec`. Builtins
are closed-form; general potentials are polynomial coefficient tables.
All evaluators accept a single point ``(k,)`` or a batch ``(n, k)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm
from scipy.stats.qmc import Sobol

from .errors import ConfigError, NegativeValue, SpecViolation

log = logging.getLogger("orbitforge.potential")

NEGATIVE_TOL = 1e-12
KINDS = ("product_double_well", "two_channel", "well_product", "polynomial")

_DEFAULT_PARAMS: Dict[str, Dict[str, float]] = {
    "product_double_well": {"c": 5.0},
    "two_channel": {"a": 1.0, "eps": 0.1},
    "well_product": {},
    "polynomial": {},
}


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    kind: str
    k: int
    wells: Tuple[Tuple[float, ...], ...]
    params: Dict[str, float] = field(default_factory=dict)
    symmetric: bool = False
    terms: Tuple[Tuple[Tuple[int, ...], float], ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown potential kind={self.kind!r}; expected one of {KINDS}")
        if int(self.k) < 1:
            raise ConfigError(f"potential dimension k={self.k} must be >= 1")
        object.__setattr__(self, "k", int(self.k))
        wells = tuple(tuple(float(x) for x in w) for w in self.wells)
        if len(wells) < 2:
            raise ConfigError(f"need at least 2 wells, got {len(wells)}")
        for w in wells:
            if len(w) != self.k:
                raise ConfigError(f"well {w} has dimension {len(w)} != k={self.k}")
        object.__setattr__(self, "wells", wells)
        params = dict(_DEFAULT_PARAMS[self.kind])
        params.update({key: float(v) for key, v in (self.params or {}).items()})
        object.__setattr__(self, "params", params)
        if self.kind == "two_channel" and self.k != 2:
            raise ConfigError("two_channel potential is defined for k=2 only")
        if self.kind == "product_double_well" and self.k < 2:
            raise ConfigError("product_double_well needs k >= 2")
        terms = tuple((tuple(int(e) for e in ex), float(c)) for ex, c in self.terms)
        if self.kind == "polynomial":
            if not terms:
                raise ConfigError("polynomial potential needs a non-empty terms table")
            for ex, _ in terms:
                if len(ex) != self.k or min(ex) < 0:
                    raise ConfigError(f"bad exponent tuple {ex} for k={self.k}")
        object.__setattr__(self, "terms", terms)

    @property
    def wells_array(self) -> np.ndarray:
        return np.asarray(self.wells, dtype=float)

    @property
    def n_wells(self) -> int:
        return len(self.wells)

    def well_index(self, point: Sequence[float], tol: float = 1e-9) -> Optional[int]:
        d = np.linalg.norm(self.wells_array - np.asarray(point, dtype=float), axis=1)
        j = int(np.argmin(d))
        return j if d[j] <= tol else None

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "kind": self.kind,
            "k": self.k,
            "params": dict(self.params),
            "wells": [list(w) for w in self.wells],
            "symmetric": self.symmetric,
        }
        if self.terms:
            out["terms"] = [[list(ex), c] for ex, c in self.terms]
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, block: Dict[str, Any]) -> "PotentialSpec":
        if not isinstance(block, dict) or "kind" not in block:
            raise ConfigError("potential block must be an object with a 'kind' key")
        block = dict(block)
        kind = str(block.pop("kind"))
        if kind in _BUILTINS:
            base = _BUILTINS[kind]().to_dict()
            params = dict(base.get("params", {}))
            params.update(block.pop("params", {}) or {})
            base.update(block)
            base["params"] = params
            base.pop("kind")
            kind, block = base_kind(kind), base
        unknown = set(block) - {"k", "params", "wells", "symmetric", "terms", "name"}
        if unknown:
            raise ConfigError(f"unknown potential keys: {sorted(unknown)}")
        try:
            return cls(
                kind=kind,
                k=int(block.get("k", len(block["wells"][0]))),
                wells=tuple(tuple(w) for w in block["wells"]),
                params=dict(block.get("params", {}) or {}),
                symmetric=bool(block.get("symmetric", False)),
                terms=tuple((tuple(ex), c) for ex, c in block.get("terms", []) or []),
                name=str(block.get("name", "")),
            )
        except (KeyError, IndexError, TypeError) as e:
            raise ConfigError(f"malformed potential block: {e}") from e


# ---------------------------------------------------------------------------
# evaluators: each maps an (n, k) batch to values (n,), gradients (n, k),
# Hessians (n, k, k)
# ---------------------------------------------------------------------------

def _product_double_well(spec: PotentialSpec, u: np.ndarray, order: int) -> np.ndarray:
    c = spec.params["c"]
    u1 = u[:, 0]
    rest = u[:, 1:]
    if order == 0:
        return (1.0 - u1 * u1) ** 2 + c * np.sum(rest * rest, axis=1)
    if order == 1:
        g = np.empty_like(u)
        g[:, 0] = -4.0 * u1 * (1.0 - u1 * u1)
        g[:, 1:] = 2.0 * c * rest
        return g
    H = np.zeros((u.shape[0], spec.k, spec.k))
    H[:, 0, 0] = 12.0 * u1 * u1 - 4.0
    idx = np.arange(1, spec.k)
    H[:, idx, idx] = 2.0 * c
    return H


def _two_channel(spec: PotentialSpec, u: np.ndarray, order: int) -> np.ndarray:
    a, eps = spec.params["a"], spec.params["eps"]
    x, y = u[:, 0], u[:, 1]
    g = y * y - a * (1.0 - x * x)
    if order == 0:
        return (x * x - 1.0) ** 2 + g * g + eps * y * y
    if order == 1:
        out = np.empty_like(u)
        out[:, 0] = 4.0 * x * (x * x - 1.0) + 4.0 * a * x * g
        out[:, 1] = 4.0 * y * g + 2.0 * eps * y
        return out
    H = np.empty((u.shape[0], 2, 2))
    H[:, 0, 0] = 12.0 * x * x - 4.0 + 4.0 * a * g + 8.0 * a * a * x * x
    H[:, 0, 1] = H[:, 1, 0] = 8.0 * a * x * y
    H[:, 1, 1] = 4.0 * g + 8.0 * y * y + 2.0 * eps
    return H


def _exclusive_products(d: np.ndarray, skip: Sequence[int]) -> np.ndarray:
    keep = [j for j in range(d.shape[1]) if j not in skip]
    return np.prod(d[:, keep], axis=1) if keep else np.ones(d.shape[0])


def _well_product(spec: PotentialSpec, u: np.ndarray, order: int) -> np.ndarray:
    W = spec.wells_array
    D = u[:, None, :] - W[None, :, :]
    d = np.sum(D * D, axis=2)
    l = W.shape[0]
    if order == 0:
        return np.prod(d, axis=1)
    if order == 1:
        out = np.zeros_like(u)
        for j in range(l):
            out += 2.0 * _exclusive_products(d, (j,))[:, None] * D[:, j, :]
        return out
    eye = np.eye(spec.k)
    H = np.zeros((u.shape[0], spec.k, spec.k))
    for j in range(l):
        H += 2.0 * _exclusive_products(d, (j,))[:, None, None] * eye
        for i in range(l):
            if i != j:
                pij = _exclusive_products(d, (i, j))
                H += 4.0 * pij[:, None, None] * np.einsum("na,nb->nab", D[:, j, :], D[:, i, :])
    return H


def _poly_table(spec: PotentialSpec) -> Tuple[np.ndarray, np.ndarray]:
    E = np.array([ex for ex, _ in spec.terms], dtype=int)
    c = np.array([coef for _, coef in spec.terms], dtype=float)
    return E, c


def _poly_diff(E: np.ndarray, c: np.ndarray, axis: int) -> Tuple[np.ndarray, np.ndarray]:
    c2 = c * E[:, axis]
    E2 = E.copy()
    E2[:, axis] = np.clip(E2[:, axis] - 1, 0, None)
    return E2, c2


def _poly_eval(u: np.ndarray, E: np.ndarray, c: np.ndarray) -> np.ndarray:
    mono = np.prod(u[:, None, :] ** E[None, :, :], axis=2)
    return mono @ c


def _polynomial(spec: PotentialSpec, u: np.ndarray, order: int) -> np.ndarray:
    E, c = _poly_table(spec)
    if order == 0:
        return _poly_eval(u, E, c)
    if order == 1:
        return np.stack([_poly_eval(u, *_poly_diff(E, c, a)) for a in range(spec.k)], axis=1)
    H = np.empty((u.shape[0], spec.k, spec.k))
    for a in range(spec.k):
        Ea, ca = _poly_diff(E, c, a)
        for b in range(a, spec.k):
            H[:, a, b] = H[:, b, a] = _poly_eval(u, *_poly_diff(Ea, ca, b))
    return H


_EVALUATORS: Dict[str, Callable[[PotentialSpec, np.ndarray, int], np.ndarray]] = {
    "product_double_well": _product_double_well,
    "two_channel": _two_channel,
    "well_product": _well_product,
    "polynomial": _polynomial,
}


def _batch(spec: PotentialSpec, u: Any) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(u, dtype=float)
    single = arr.ndim == 1
    arr = arr.reshape(-1, spec.k)
    return arr, single


def eval_V(spec: PotentialSpec, u: Any) -> Any:
    """V at a point (returns float) or a batch of points (returns array)."""
    arr, single = _batch(spec, u)
    v = _EVALUATORS[spec.kind](spec, arr, 0)
    vmin = float(np.min(v)) if v.size else 0.0
    if vmin < -NEGATIVE_TOL:
        j = int(np.argmin(v))
        raise NegativeValue(f"V={vmin:.3e} < 0 at u={arr[j].tolist()}; potential spec is invalid")
    if vmin < 0.0:
        v = np.maximum(v, 0.0)
    return float(v[0]) if single else v


def grad_V(spec: PotentialSpec, u: Any) -> np.ndarray:
    arr, single = _batch(spec, u)
    g = _EVALUATORS[spec.kind](spec, arr, 1)
    return g[0] if single else g


def hess_V(spec: PotentialSpec, u: Any) -> np.ndarray:
    arr, single = _batch(spec, u)
    H = _EVALUATORS[spec.kind](spec, arr, 2)
    return H[0] if single else H


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def product_double_well(c: float = 5.0) -> PotentialSpec:
    return PotentialSpec(kind="product_double_well", k=2, wells=((-1.0, 0.0), (1.0, 0.0)),
                         params={"c": c}, symmetric=True, name="product_double_well")


def two_channel(a: float = 1.0, eps: float = 0.1) -> PotentialSpec:
    return PotentialSpec(kind="two_channel", k=2, wells=((-1.0, 0.0), (1.0, 0.0)),
                         params={"a": a, "eps": eps}, symmetric=True, name="two_channel")


def triple_well(wells: Sequence[Sequence[float]] = ((-1.0, 0.0), (1.0, 0.0), (0.0, 1.0))) -> PotentialSpec:
    return PotentialSpec(kind="well_product", k=len(wells[0]), wells=tuple(tuple(w) for w in wells),
                         name="triple_well")


_BUILTINS: Dict[str, Callable[..., PotentialSpec]] = {
    "product_double_well": product_double_well,
    "two_channel": two_channel,
    "triple_well": triple_well,
}


def base_kind(name: str) -> str:
    return "well_product" if name == "triple_well" else name


def builtin_catalog() -> List[PotentialSpec]:
    return [factory() for factory in _BUILTINS.values()]


def builtin(name: str, **params: Any) -> PotentialSpec:
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ConfigError(f"unknown builtin potential {name!r}; known: {sorted(_BUILTINS)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# sampled audits: coercivity, nondegenerate wells, isolated zeros, symmetry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingConfig:
    seed: int = 0
    n_directions: int = 256
    n_ball: int = 256
    n_box: int = 4096
    radius: Optional[float] = None
    box_margin: float = 1.0
    well_tol: float = 1e-10
    eig_tol: float = 1e-10
    symmetry_tol: float = 1e-12


@dataclass
class CoercivityReport:
    R0: float
    alpha0: float
    beta0: float
    passed: bool
    worst_point: List[float]
    n_samples: int
    shells: List[float]


@dataclass
class WellNondegeneracy:
    well: List[float]
    eigenvalues: List[float]
    delta: Optional[float]
    beta: Optional[float]
    passed: bool
    value: float
    first_violation: Optional[List[float]] = None


@dataclass
class NondegeneracyReport:
    wells: List[WellNondegeneracy]
    passed: bool

    @property
    def min_eigenvalue(self) -> float:
        return min(min(w.eigenvalues) for w in self.wells)

    @property
    def delta(self) -> float:
        """Smallest certified ball radius over the wells (0.0 if any failed)."""
        ds = [w.delta for w in self.wells]
        return 0.0 if any(d is None for d in ds) else float(min(ds))


@dataclass
class ZeroSetReport:
    well_values: List[float]
    min_off_well: Optional[float]
    argmin_off_well: Optional[List[float]]
    exclusion_radius: float
    box: List[List[float]]
    n_samples: int
    passed: bool
    coverage: str


@dataclass
class SymmetryReport:
    wells_ok: bool
    max_defect: float
    n_samples: int
    passed: bool


class AssumptionReports(NamedTuple):
    coercivity: CoercivityReport
    nondegeneracy: NondegeneracyReport
    zero_set: ZeroSetReport

    @property
    def passed(self) -> bool:
        return self.coercivity.passed and self.nondegeneracy.passed and self.zero_set.passed

    def to_dict(self) -> Dict[str, Any]:
        out = {name: asdict(getattr(self, name)) for name in self._fields}
        out["nondegeneracy"]["min_eigenvalue"] = self.nondegeneracy.min_eigenvalue
        out["nondegeneracy"]["delta"] = self.nondegeneracy.delta
        out["passed"] = self.passed
        return out


def _sobol(d: int, n: int, seed: Sequence[int]) -> np.ndarray:
    m = max(1, int(math.ceil(math.log2(max(n, 2)))))
    return Sobol(d, scramble=True, seed=np.random.default_rng(list(seed))).random_base2(m)[:n]


def _directions(k: int, n: int, seed: Sequence[int]) -> np.ndarray:
    if k == 1:
        return np.array([[1.0], [-1.0]])
    z = norm.ppf(np.clip(_sobol(k, n, seed), 1e-12, 1 - 1e-12))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _ball(k: int, n: int, seed: Sequence[int]) -> np.ndarray:
    """Quasi-random points in the open unit ball, never at the centre."""
    pts = _sobol(k + 1, n, seed)
    radial = np.clip(pts[:, -1], 1e-6, 1.0) ** (1.0 / k)
    if k == 1:
        dirs = np.where(pts[:, :1] < 0.5, -1.0, 1.0)
    else:
        z = norm.ppf(np.clip(pts[:, :k], 1e-12, 1 - 1e-12))
        dirs = z / np.linalg.norm(z, axis=1, keepdims=True)
    return dirs * radial[:, None]


def check_wells(spec: PotentialSpec) -> None:
    W = spec.wells_array
    for i in range(len(W)):
        for j in range(i + 1, len(W)):
            if np.linalg.norm(W[i] - W[j]) <= 1e-12:
                raise SpecViolation(f"wells {i} and {j} coincide at {W[i].tolist()}")


def _coercivity(spec: PotentialSpec, sampling: SamplingConfig) -> CoercivityReport:
    W = spec.wells_array
    R0 = float(sampling.radius) if sampling.radius else 2.0 * float(np.max(np.linalg.norm(W, axis=1))) + 1.0
    dirs = _directions(spec.k, sampling.n_directions, (sampling.seed, 0))
    shells = [R0 * f for f in (1.0, 1.5, 2.0, 4.0)]
    pts = np.concatenate([r * dirs for r in shells])
    values = eval_V(spec, pts)
    ratios = np.einsum("na,na->n", grad_V(spec, pts), pts) / np.einsum("na,na->n", pts, pts)
    j = int(np.argmin(ratios))
    alpha0, beta0 = float(ratios[j]), float(np.min(values))
    return CoercivityReport(R0=R0, alpha0=alpha0, beta0=beta0, passed=alpha0 > 0 and beta0 > 0,
                            worst_point=pts[j].tolist(), n_samples=int(len(pts)), shells=shells)


def _nondegeneracy(spec: PotentialSpec, sampling: SamplingConfig) -> NondegeneracyReport:
    reports = []
    for idx, sigma in enumerate(spec.wells_array):
        eig = np.linalg.eigvalsh(hess_V(spec, sigma))
        value = eval_V(spec, sigma)
        unit = _ball(spec.k, sampling.n_ball, (sampling.seed, 1, idx))
        delta: Optional[float] = None
        beta: Optional[float] = None
        violation: Optional[List[float]] = None
        for p in range(1, 9):
            r = 2.0 ** -p
            d = r * unit
            n2 = np.einsum("na,na->n", d, d)
            u = sigma + d
            r1 = eval_V(spec, u) / n2
            r2 = np.einsum("na,na->n", grad_V(spec, u), d) / n2
            bad = ~(np.isfinite(r1) & np.isfinite(r2) & (r1 > 0) & (r2 > 0))
            if not bad.any():
                delta = r
                beta = 1.25 * float(max(r1.max(), r2.max(), 1.0 / r1.min(), 1.0 / r2.min()))
                violation = None
                break
            if violation is None:
                violation = u[int(np.argmax(bad))].tolist()
        passed = bool(eig.min() > sampling.eig_tol and delta is not None and abs(value) <= sampling.well_tol)
        reports.append(WellNondegeneracy(well=sigma.tolist(), eigenvalues=eig.tolist(), delta=delta,
                                         beta=beta, passed=passed, value=value, first_violation=violation))
    return NondegeneracyReport(wells=reports, passed=all(w.passed for w in reports))


def _zero_set(spec: PotentialSpec, sampling: SamplingConfig) -> ZeroSetReport:
    W = spec.wells_array
    lo = W.min(axis=0) - sampling.box_margin
    hi = W.max(axis=0) + sampling.box_margin
    pts = lo + (hi - lo) * _sobol(spec.k, sampling.n_box, (sampling.seed, 2))
    sep = min(np.linalg.norm(W[i] - W[j]) for i in range(len(W)) for j in range(i + 1, len(W)))
    excl = 0.25 * float(sep)
    dist = np.min(np.linalg.norm(pts[:, None, :] - W[None, :, :], axis=2), axis=1)
    off = pts[dist >= excl]
    well_values = [float(v) for v in eval_V(spec, W)]
    if len(off):
        v = eval_V(spec, off)
        j = int(np.argmin(v))
        min_off, argmin = float(v[j]), off[j].tolist()
    else:
        min_off, argmin = None, None
    ok = all(abs(v) <= sampling.well_tol for v in well_values) and (min_off is None or min_off > 0)
    coverage = (f"sampled evidence only: {len(off)} quasi-random points in the box "
                f"around the wells at distance >= {excl:.3g} from every well; "
                "positivity of V off the wells is not certified")
    return ZeroSetReport(well_values=well_values, min_off_well=min_off, argmin_off_well=argmin,
                         exclusion_radius=excl, box=[lo.tolist(), hi.tolist()], n_samples=int(len(pts)),
                         passed=bool(ok), coverage=coverage)


def verify_assumptions(spec: PotentialSpec, sampling: Optional[SamplingConfig] = None) -> AssumptionReports:
    """Audit coercivity, well nondegeneracy and the zero set of V on samples.

    Deterministic for a fixed ``sampling.seed``. Raises :class:`SpecViolation`
    (with the reports attached) when a declared well is not a nondegenerate
    zero of V.
    """
    sampling = sampling or SamplingConfig()
    check_wells(spec)
    reports = AssumptionReports(_coercivity(spec, sampling), _nondegeneracy(spec, sampling),
                                _zero_set(spec, sampling))
    log.info("verify kind=%s coercivity=%s alpha0=%.4g nondegeneracy=%s min_eig=%.4g delta=%.4g zero_set=%s",
             spec.kind, reports.coercivity.passed, reports.coercivity.alpha0, reports.nondegeneracy.passed,
             reports.nondegeneracy.min_eigenvalue, reports.nondegeneracy.delta, reports.zero_set.passed)
    bad = [w for w in reports.nondegeneracy.wells if not w.passed]
    if bad:
        w = bad[0]
        raise SpecViolation(
            f"well {w.well} fails: V={w.value:.3e} min_eig={min(w.eigenvalues):.3e} delta={w.delta}",
            reports=reports)
    return reports


def verify_symmetry(spec: PotentialSpec, sampling: Optional[SamplingConfig] = None) -> SymmetryReport:
    sampling = sampling or SamplingConfig()
    minus = np.zeros(spec.k)
    minus[0] = -1.0
    wells_ok = spec.well_index(minus, 0.0) is not None and spec.well_index(-minus, 0.0) is not None
    W = spec.wells_array
    R = float(np.max(np.abs(W))) + sampling.box_margin
    pts = -R + 2.0 * R * _sobol(spec.k, sampling.n_box, (sampling.seed, 3))
    flipped = pts.copy()
    flipped[:, 0] = -flipped[:, 0]
    v, vf = eval_V(spec, pts), eval_V(spec, flipped)
    defect = float(np.max(np.abs(v - vf) / (1.0 + np.abs(v))))
    return SymmetryReport(wells_ok=bool(wells_ok), max_defect=defect, n_samples=int(len(pts)),
                          passed=bool(wells_ok and defect <= sampling.symmetry_tol))
