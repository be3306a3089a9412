"""Discrete curves on a truncated time grid and the discrete action.

Kinetic energy uses forward differences, potential energy the trapezoid
rule; ``grad_J`` is the exact derivative of that sum with respect to the
interior nodal values.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve_banded, cholesky_banded, solve_banded

from .errors import GridMismatch, GridTooSmall, InvalidGrid, WellMismatch
from .potential import PotentialSpec, eval_V, grad_V, hess_V

log = logging.getLogger("orbitforge.curve")

TAIL_FRACTION = 0.05


@dataclass(frozen=True)
class Grid:
    T: float
    M: int

    def __post_init__(self) -> None:
        if int(self.M) != self.M or self.M < 3 or self.M % 2 == 0:
            raise InvalidGrid(f"grid node count M={self.M} must be an odd integer >= 3")
        if not self.T > 0:
            raise InvalidGrid(f"grid half-width T={self.T} must be positive")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "M", int(self.M))

    @property
    def h(self) -> float:
        return 2.0 * self.T / (self.M - 1)

    @property
    def center(self) -> int:
        return (self.M - 1) // 2

    @property
    def nodes(self) -> np.ndarray:
        # integer offsets keep the grid exactly mirror-symmetric about t=0
        return self.h * (np.arange(self.M) - self.center)

    @property
    def weights(self) -> np.ndarray:
        w = np.ones(self.M)
        w[0] = w[-1] = 0.5
        return w

    def refined(self) -> "Grid":
        return Grid(self.T, 2 * self.M - 1)


@dataclass(frozen=True, eq=False)
class DiscreteCurve:
    """Nodal values on a grid with clamped ends at the limit wells.

    The constructor copies ``values``, overwrites the end nodes with
    ``left``/``right`` and freezes the array.
    """
    grid: Grid
    values: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.grid.M:
            raise GridMismatch(f"values have {values.shape[0]} rows, grid has M={self.grid.M}")
        left = np.array(self.left, dtype=float).reshape(-1)
        right = np.array(self.right, dtype=float).reshape(-1)
        if left.shape != (values.shape[1],) or right.shape != (values.shape[1],):
            raise WellMismatch("limit wells must match the curve dimension")
        values[0] = left
        values[-1] = right
        if not np.all(np.isfinite(values)):
            raise ValueError("curve values must be finite")
        for arr in (values, left, right):
            arr.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1]

    def with_values(self, values: np.ndarray) -> "DiscreteCurve":
        return DiscreteCurve(self.grid, values, self.left, self.right)

    def same_space(self, other: "DiscreteCurve") -> None:
        if self.grid != other.grid:
            raise GridMismatch(f"grids differ: {self.grid} vs {other.grid}")
        if not (np.array_equal(self.left, other.left) and np.array_equal(self.right, other.right)):
            raise WellMismatch("curves have different limit wells")


@dataclass
class EnergyBreakdown:
    kinetic: float
    potential: float
    total: float
    density: np.ndarray
    cells: np.ndarray


def constant_curve(grid: Grid, well: Sequence[float]) -> DiscreteCurve:
    w = np.asarray(well, dtype=float)
    return DiscreteCurve(grid, np.tile(w, (grid.M, 1)), w, w)


def ramp_curve(grid: Grid, a: Sequence[float], b: Sequence[float], width: float = 1.0) -> DiscreteCurve:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    s = np.clip((grid.nodes + width) / (2.0 * width), 0.0, 1.0)[:, None]
    return DiscreteCurve(grid, (1.0 - s) * a + s * b, a, b)


def psi_curve(grid: Grid, sigma_minus: Sequence[float], sigma_plus: Sequence[float]) -> DiscreteCurve:
    """The straight ramp from sigma_minus at t<=-1 to sigma_plus at t>=1."""
    if grid.T < 1.0:
        raise GridTooSmall(f"T={grid.T} < 1 cannot resolve the ramp on [-1, 1]")
    return ramp_curve(grid, sigma_minus, sigma_plus, 1.0)


def energy(spec: PotentialSpec, curve: DiscreteCurve) -> EnergyBreakdown:
    h = curve.grid.h
    u = curve.values
    d = np.diff(u, axis=0) / h
    kin = 0.5 * np.einsum("ia,ia->i", d, d)
    V = eval_V(spec, u)
    w = curve.grid.weights
    kinetic = h * float(kin.sum())
    potential = h * float(w @ V)
    half = np.zeros(curve.grid.M)
    half[:-1] += 0.5 * kin
    half[1:] += 0.5 * kin
    cells = h * (half + w * V)
    return EnergyBreakdown(kinetic=kinetic, potential=potential, total=kinetic + potential,
                           density=cells / (h * w), cells=cells)


def total_energy(spec: PotentialSpec, curve: DiscreteCurve) -> float:
    return energy(spec, curve).total


def action_and_gradient(spec: PotentialSpec, u: np.ndarray, h: float) -> Tuple[float, np.ndarray]:
    """Total action of raw nodal values and its gradient on the interior nodes."""
    d = np.diff(u, axis=0) / h
    V = eval_V(spec, u)
    E = 0.5 * h * float(np.sum(d * d)) + h * float(np.sum(V[1:-1]) + 0.5 * (V[0] + V[-1]))
    g = -(u[2:] - 2.0 * u[1:-1] + u[:-2]) / h + h * grad_V(spec, u[1:-1])
    return E, g


def grad_J(spec: PotentialSpec, curve: DiscreteCurve) -> np.ndarray:
    h = curve.grid.h
    u = curve.values
    g = np.zeros_like(u)
    g[1:-1] = -(u[2:] - 2.0 * u[1:-1] + u[:-2]) / h + h * grad_V(spec, u[1:-1])
    return g


def grad_norm(spec: PotentialSpec, curve: DiscreteCurve, g: Optional[np.ndarray] = None) -> float:
    """Sup over nodes of |grad_J|/h; independent of the grid spacing."""
    g = grad_J(spec, curve) if g is None else g
    return float(np.max(np.linalg.norm(g, axis=1))) / curve.grid.h


def hess_J(spec: PotentialSpec, curve: DiscreteCurve) -> sp.csc_matrix:
    """Hessian of the discrete action in the interior nodal values (node-major)."""
    h, k = curve.grid.h, curve.k
    n = curve.grid.M - 2
    blocks = h * hess_V(spec, curve.interior)
    base = (np.arange(n) * k)[:, None, None]
    rows = np.broadcast_to(base + np.arange(k)[None, :, None], blocks.shape)
    cols = np.broadcast_to(base + np.arange(k)[None, None, :], blocks.shape)
    pot = sp.coo_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(n * k, n * k))
    lap = sp.kron(sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n)), sp.identity(k)) / h
    return (lap + pot).tocsc()


class H1Metric:
    """Gram matrix A = L/h + h I of the discrete H1 product on interior nodes.

    ``riesz`` turns a gradient (dual vector) into its H1 representative;
    ``to_coords``/``from_coords`` are the Cholesky change of variables
    x = C^-T y in which the H1 metric becomes Euclidean.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        n, h = grid.M - 2, grid.h
        ab = np.zeros((2, n))
        ab[0] = 2.0 / h + h
        ab[1, :-1] = -1.0 / h
        self._chol = cholesky_banded(ab, lower=True)
        c = self._chol
        self._lower = np.vstack([c[0], c[1]])
        self._upper = np.vstack([np.r_[0.0, c[1][:-1]], c[0]])

    def riesz(self, g: np.ndarray) -> np.ndarray:
        """A^-1 g for a full nodal field (ends ignored and returned as zero)."""
        out = np.zeros_like(g)
        out[1:-1] = cho_solve_banded((self._chol, True), g[1:-1])
        return out

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        h = self.grid.h
        da, db = np.diff(a, axis=0), np.diff(b, axis=0)
        return float(np.sum(da * db) / h + h * np.sum(a * b))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(a, a), 0.0)))

    def to_coords(self, x: np.ndarray) -> np.ndarray:
        c = self._chol
        y = c[0][:, None] * x
        y[:-1] += c[1][:-1, None] * x[1:]
        return y

    def from_coords(self, y: np.ndarray) -> np.ndarray:
        return solve_banded((0, 1), self._upper, y)

    def dual_to_coords(self, g: np.ndarray) -> np.ndarray:
        return solve_banded((1, 0), self._lower, g)


@functools.lru_cache(maxsize=16)
def h1_metric(grid: Grid) -> H1Metric:
    return H1Metric(grid)


def h1_distance(q: DiscreteCurve, q2: DiscreteCurve) -> float:
    q.same_space(q2)
    h = q.grid.h
    d = q.values - q2.values
    dd = np.diff(d, axis=0) / h
    return float(np.sqrt(h * np.sum(dd * dd) + h * np.sum(d * d)))


def ode_residual(spec: PotentialSpec, curve: DiscreteCurve) -> float:
    h = curve.grid.h
    u = curve.values
    r = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (h * h) - grad_V(spec, u[1:-1])
    return float(np.max(np.linalg.norm(r, axis=1))) if len(r) else 0.0


def hamiltonian_residual(spec: PotentialSpec, curve: DiscreteCurve) -> float:
    h = curve.grid.h
    u = curve.values
    du = (u[2:] - u[:-2]) / (2.0 * h)
    r = 0.5 * np.einsum("ia,ia->i", du, du) - eval_V(spec, u[1:-1])
    return float(np.max(np.abs(r))) if len(r) else 0.0


def subsample(curve: DiscreteCurve, stride: int) -> DiscreteCurve:
    M = curve.grid.M
    if stride < 1 or (M - 1) % (2 * stride):
        raise InvalidGrid(f"stride {stride} does not map M={M} onto an odd grid")
    return DiscreteCurve(Grid(curve.grid.T, (M - 1) // stride + 1), curve.values[::stride],
                         curve.left, curve.right)


def residual_order(spec: PotentialSpec, curve: DiscreteCurve, strides: Tuple[int, int] = (4, 8)) -> float:
    """Ratio of ode residuals of a converged fine solution seen at two strides.

    For a second-order scheme the ratio tends to (s2^2 - 1)/(s1^2 - 1),
    i.e. 63/15 for strides 4 and 8.
    """
    fine, coarse = strides
    r_fine = ode_residual(spec, subsample(curve, fine))
    r_coarse = ode_residual(spec, subsample(curve, coarse))
    return r_coarse / r_fine if r_fine > 0 else float("inf")


def tail_indicator(spec: PotentialSpec, curve: DiscreteCurve) -> float:
    """Fraction of the energy carried by the outer 10% of the nodes."""
    e = energy(spec, curve)
    n = max(1, int(np.ceil(TAIL_FRACTION * curve.grid.M)))
    tail = float(e.cells[:n].sum() + e.cells[-n:].sum())
    return tail / e.total if e.total > 0 else 0.0


@dataclass(frozen=True)
class TailLabel:
    kind: str
    left: Optional[int] = None
    right: Optional[int] = None

    def __str__(self) -> str:
        if self.kind == "heteroclinic":
            return f"heteroclinic({self.left}->{self.right})"
        if self.kind == "homoclinic":
            return f"homoclinic({self.left})"
        return "unresolved"


def _tail_well(spec: PotentialSpec, block: np.ndarray, delta: float) -> Optional[int]:
    W = spec.wells_array
    far = np.max(np.linalg.norm(block[:, None, :] - W[None, :, :], axis=2), axis=0)
    hits = np.flatnonzero(far <= delta)
    return int(hits[0]) if len(hits) == 1 else None


def classify_tails(spec: PotentialSpec, curve: DiscreteCurve, delta: float) -> TailLabel:
    n = max(1, int(np.ceil(TAIL_FRACTION * curve.grid.M)))
    a = _tail_well(spec, curve.values[:n], delta)
    b = _tail_well(spec, curve.values[-n:], delta)
    if a is None or b is None:
        return TailLabel("unresolved", a, b)
    if a == b:
        return TailLabel("homoclinic", a, b)
    return TailLabel("heteroclinic", a, b)


def translate(curve: DiscreteCurve, shift: int) -> DiscreteCurve:
    """Shift by whole grid steps (positive moves the profile to later times)."""
    shift = int(shift)
    if shift == 0:
        return curve
    M = curve.grid.M
    out = np.empty_like(curve.values)
    if shift > 0:
        s = min(shift, M)
        out[:s] = curve.left
        out[s:] = curve.values[:M - s]
    else:
        s = min(-shift, M)
        out[M - s:] = curve.right
        out[:M - s] = curve.values[s:]
    return curve.with_values(out)


def energy_median(spec: PotentialSpec, curve: DiscreteCurve) -> Optional[float]:
    """Fractional node index at which the cumulative energy reaches one half."""
    cells = energy(spec, curve).cells
    total = cells.sum()
    if total <= 0:
        return None
    cum = np.cumsum(cells)
    i = int(np.searchsorted(cum, 0.5 * total))
    prev = cum[i - 1] if i > 0 else 0.0
    frac = (0.5 * total - prev) / cells[i] if cells[i] > 0 else 0.0
    return i - 0.5 + float(frac)


def normalize_translation(spec: PotentialSpec, curve: DiscreteCurve) -> DiscreteCurve:
    m = energy_median(spec, curve)
    if m is None:
        return curve
    return translate(curve, curve.grid.center - int(round(m)))


def shift_fractional(curve: DiscreteCurve, tau: float) -> DiscreteCurve:
    """u(t) -> u(t - tau) by linear interpolation with constant extension."""
    t = curve.grid.nodes
    src = t - tau
    out = np.column_stack([
        np.interp(src, t, curve.values[:, a], left=curve.left[a], right=curve.right[a])
        for a in range(curve.k)
    ])
    return curve.with_values(out)


def refine(curve: DiscreteCurve) -> DiscreteCurve:
    u = curve.values
    out = np.empty((2 * len(u) - 1, u.shape[1]))
    out[0::2] = u
    out[1::2] = 0.5 * (u[:-1] + u[1:])
    return DiscreteCurve(curve.grid.refined(), out, curve.left, curve.right)


def reverse(curve: DiscreteCurve) -> DiscreteCurve:
    """Time reversal t -> -t; swaps the limit wells."""
    return DiscreteCurve(curve.grid, curve.values[::-1], curve.right, curve.left)


def glue(pieces: Sequence[DiscreteCurve], plateau: int = 0) -> DiscreteCurve:
    """Concatenate curves sharing a spacing, with plateaus of repeated wells."""
    h = pieces[0].grid.h
    blocks: List[np.ndarray] = []
    for j, p in enumerate(pieces):
        if not np.isclose(p.grid.h, h, rtol=0, atol=1e-14):
            raise GridMismatch("glued pieces must share the grid spacing")
        if j and not np.array_equal(pieces[j - 1].right, p.left):
            raise WellMismatch(f"piece {j} does not start where piece {j - 1} ends")
        blocks.append(p.values)
        if j < len(pieces) - 1 and plateau:
            blocks.append(np.tile(p.right, (plateau, 1)))
    values = np.concatenate(blocks)
    if len(values) % 2 == 0:
        values = np.concatenate([values, values[-1:]])
    M = len(values)
    return DiscreteCurve(Grid(h * (M - 1) / 2.0, M), values, pieces[0].left, pieces[-1].right)


def curve_from_function(grid: Grid, fn: Any, left: Sequence[float], right: Sequence[float]) -> DiscreteCurve:
    """Sample a vectorized profile ``fn(t) -> (M, k)`` on the grid."""
    return DiscreteCurve(grid, np.asarray(fn(grid.nodes), dtype=float), left, right)
