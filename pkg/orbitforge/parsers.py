"""DataFrame views of curves, paths and relaxation history, and the orbit CSV reader."""
from __future__ import annotations
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd

from .curve import DiscreteCurve, Grid, energy
from .errors import InvalidGrid, WellMismatch
from .mountainpass import CurvePath
from .potential import PotentialSpec

WELL_SNAP_TOL = 1e-6


def _coord_columns(k: int) -> List[str]:
    return [f"u_{a + 1}" for a in range(k)]


def curve_to_frame(spec: PotentialSpec, curve: DiscreteCurve) -> pd.DataFrame:
    """Orbit table: ``t, u_1..u_k, e_density``, one row per node."""
    df = pd.DataFrame(np.array(curve.values), columns=_coord_columns(curve.k))
    df.insert(0, "t", curve.grid.nodes)
    df["e_density"] = energy(spec, curve).density
    return df


def frame_to_curve(spec: PotentialSpec, df: pd.DataFrame) -> DiscreteCurve:
    """Rebuild a curve from an orbit table; the end rows are snapped to the nearest wells."""
    cols = _coord_columns(spec.k)
    missing = [c for c in ["t", *cols] if c not in df.columns]
    if missing:
        raise InvalidGrid(f"orbit table lacks columns {missing}")
    t = df["t"].to_numpy(dtype=float)
    M = len(t)
    if M < 3 or M % 2 == 0:
        raise InvalidGrid(f"orbit table has {M} rows; need an odd count >= 3")
    grid = Grid(0.5 * (t[-1] - t[0]), M)
    if not np.allclose(t, grid.nodes, rtol=0, atol=1e-9 * max(1.0, grid.T)):
        raise InvalidGrid("orbit table time column is not a uniform grid symmetric about 0")
    u = df[cols].to_numpy(dtype=float)
    ends = []
    for row in (u[0], u[-1]):
        j = spec.well_index(row, WELL_SNAP_TOL)
        if j is None:
            raise WellMismatch(f"orbit end point {row.tolist()} is not within {WELL_SNAP_TOL:g} of a well")
        ends.append(spec.wells_array[j])
    return DiscreteCurve(grid, u, ends[0], ends[1])


def read_orbit_csv(spec: PotentialSpec, path: Union[str, Path]) -> DiscreteCurve:
    return frame_to_curve(spec, pd.read_csv(path, float_precision="round_trip"))


def path_profile_frame(path: CurvePath, grad_norms: Sequence[float]) -> pd.DataFrame:
    """Path energy profile: ``s, image_energy, grad_norm``, one row per image."""
    N = path.N
    return pd.DataFrame({
        "s": np.arange(N) / (N - 1),
        "image_energy": np.asarray(path.energies, dtype=float),
        "grad_norm": np.asarray(grad_norms, dtype=float),
    })


def traces_frame(orbits: Mapping[str, DiscreteCurve]) -> pd.DataFrame:
    """Long table juxtaposing the traces of several orbits (column ``orbit`` names each)."""
    frames = []
    for name, curve in orbits.items():
        df = pd.DataFrame(np.array(curve.values), columns=_coord_columns(curve.k))
        df.insert(0, "t", curve.grid.nodes)
        df.insert(0, "orbit", name)
        frames.append(df)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def history_frame(history: Sequence[Dict]) -> pd.DataFrame:
    rows = []
    for r in history:
        row = {k: v for k, v in r.items() if k != "bump_centers"}
        centres = r.get("bump_centers") or []
        row["n_bumps"] = len(centres)
        row["bump_centers"] = " ".join(str(int(c)) for c in centres)
        rows.append(row)
    return pd.DataFrame.from_records(rows)
