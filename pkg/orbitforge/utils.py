from __future__ import annotations
import dataclasses
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd

from .config import CSV_FLOAT_FORMAT

log = logging.getLogger("orbitforge.utils")


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types for reports: numpy scalars/arrays unwrapped, non-finite floats -> None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    return obj


def write_tables(root: Path, tables: Dict[str, pd.DataFrame], formats: Sequence[str] = ("csv",)) -> List[Path]:
    """Write non-empty tables under root as CSV (17 significant digits) and/or Parquet; return the paths."""
    root.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    for name, df in tables.items():
        if not isinstance(df, pd.DataFrame) or df.empty:
            continue
        if "csv" in formats:
            path = root / f"{name}.csv"
            df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
            written.append(path)
        if "parquet" in formats:
            path = root / f"{name}.parquet"
            df.to_parquet(path, index=False)
            written.append(path)
    log.info("Tables written root=%s tables=%s files=%s", root, len(tables), len(written))
    return written
