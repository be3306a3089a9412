"""Static PNG figures for orbit traces and path energy profiles."""
from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

log = logging.getLogger("orbitforge.plotting")


def plot_traces(traces: pd.DataFrame, path: Path) -> Path:
    """Projection of every orbit onto the (u_1, u_2) plane, or u_1 against t when k = 1."""
    sns.set_theme(style="whitegrid")
    fig, ax = plt.subplots(figsize=(6, 5))
    x, y = ("u_1", "u_2") if "u_2" in traces.columns else ("t", "u_1")
    sns.lineplot(data=traces, x=x, y=y, hue="orbit", sort=False, estimator=None, ax=ax)
    ax.set_title("orbit traces")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    log.info("figure written path=%s", path)
    return path


def plot_profile(profile: pd.DataFrame, path: Path) -> Path:
    sns.set_theme(style="whitegrid")
    fig, ax = plt.subplots(figsize=(6, 4))
    sns.lineplot(data=profile, x="s", y="image_energy", marker="o", ax=ax)
    ax.set_xlabel("path parameter s")
    ax.set_ylabel("image energy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    log.info("figure written path=%s", path)
    return path
