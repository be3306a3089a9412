from __future__ import annotations
import os
from pathlib import Path

# Load .env from project root if available
try:
    from dotenv import load_dotenv
    _ROOT = Path(__file__).resolve().parents[1]
    load_dotenv(_ROOT / ".env")
except Exception:
    pass


def _flag(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() in ("1", "true", "yes", "y")


# ---- Concurrency ----
MAX_WORKERS: int = int(os.getenv("ORBITFORGE_MAX_WORKERS", "1"))

# ---- Output ----
OUT_DIR: str = os.getenv("ORBITFORGE_OUT", "./orbitforge_out")
REPORT_NAME: str = os.getenv("ORBITFORGE_REPORT_NAME", "report.json")
CSV_FLOAT_FORMAT: str = "%.17g"

# ---- Progress bars (tqdm) ----
SHOW_PROGRESS: bool = _flag("ORBITFORGE_PROGRESS", "true")

# ---- Report schema ----
REPORT_SCHEMA: int = 1
