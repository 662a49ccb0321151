"""
Static SVG figures: latent-coloured sample scatter and per-time profiles
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

FIGURE_SIZE = (8.0, 8.0)
FIGURE_DPI = 100
PALETTE = plt.get_cmap("Dark2").colors
NULL_COLOR = "#555555"

# t values, per-time values (None or NaN where absent)
Series = Tuple[Sequence[float], Sequence[Optional[float]]]


def _save(fig, path: Union[str, Path], description: Optional[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"Description": description} if description else None
    fig.savefig(path, format="svg", metadata=metadata)
    plt.close(fig)
    logger.info(f"Wrote figure: {path}")
    return path


def plot_samples(path: Union[str, Path], samples: np.ndarray, latents: np.ndarray,
                 trajectories: Optional[np.ndarray] = None, title: str = "",
                 description: Optional[str] = None) -> Path:
    """
    Scatter of generated samples, one SVG group per latent index

    Colour follows the first latent dimension. Groups carry the id
    `latent-<j>`, null-latent samples go to `latent-null`. Optional
    trajectories (T, P, 2) are drawn as dotted polylines underneath.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    latents = np.asarray(latents).reshape(samples.shape[0], -1)
    first = latents[:, 0] if latents.shape[1] else np.full(samples.shape[0], -1)

    fig, ax = plt.subplots(figsize=FIGURE_SIZE, dpi=FIGURE_DPI)
    if trajectories is not None and trajectories.size:
        for p in range(trajectories.shape[1]):
            (line,) = ax.plot(trajectories[:, p, 0], trajectories[:, p, 1], linestyle=":", linewidth=0.8,
                              color="#999999", zorder=1)
            line.set_gid(f"trajectory-{p}")
    for code in np.unique(first):
        mask = first == code
        color = NULL_COLOR if code < 0 else PALETTE[int(code) % len(PALETTE)]
        label = "null" if code < 0 else str(int(code))
        points = ax.scatter(samples[mask, 0], samples[mask, 1], s=6, color=color, label=f"z={label}", zorder=2)
        points.set_gid(f"latent-{label}")
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    if samples.shape[0]:
        ax.legend(loc="upper right", fontsize="small", markerscale=2)
    return _save(fig, path, description)


def plot_profiles(path: Union[str, Path], series: Dict[str, Series], ylabel: str, title: str = "",
                  log_y: bool = True, description: Optional[str] = None) -> Path:
    """Line plot of a per-time statistic for each arm on a log t axis"""
    fig, ax = plt.subplots(figsize=FIGURE_SIZE, dpi=FIGURE_DPI)
    for i, (name, (times, values)) in enumerate(sorted(series.items())):
        t = np.asarray(times, dtype=np.float64)
        v = np.array([np.nan if x is None else x for x in values], dtype=np.float64)
        ok = np.isfinite(v) & (t > 0)
        if log_y:
            ok &= v > 0
        if not ok.any():
            continue
        (line,) = ax.plot(t[ok], v[ok], marker="o", markersize=3, color=PALETTE[i % len(PALETTE)], label=name)
        line.set_gid(f"series-{name}")
    ax.set_xscale("log")
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if series:
        ax.legend(loc="best", fontsize="small")
    return _save(fig, path, description)


def plot_losses(path: Union[str, Path], losses: Sequence[float], description: Optional[str] = None) -> Path:
    """Training loss curve with a running mean"""
    fig, ax = plt.subplots(figsize=FIGURE_SIZE, dpi=FIGURE_DPI)
    steps = np.arange(1, len(losses) + 1)
    ax.plot(steps, losses, linewidth=0.5, alpha=0.4, color=PALETTE[0], label="loss")
    if len(losses):
        ax.plot(steps, running_mean(losses), color=PALETTE[1], label="running mean")
        ax.legend(loc="upper right", fontsize="small")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("weighted DSM loss")
    return _save(fig, path, description)


def running_mean(values: Sequence[float], window: int = 100) -> np.ndarray:
    """Trailing mean over up to `window` values"""
    values = np.asarray(values, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, values.size + 1)
    start = np.maximum(idx - window, 0)
    return (csum[idx] - csum[start]) / (idx - start)
