"""
Gaussian-mixture toy data and its analytic oracles
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import logsumexp, softmax

logger = logging.getLogger(__name__)

DEFAULT_RADIUS = 3.0
DEFAULT_COMPONENT_STD = 0.2


@dataclass(frozen=True)
class MixtureSpec:
    """Isotropic 2D Gaussian mixture with a shared component std"""
    means: np.ndarray
    sigma: float = DEFAULT_COMPONENT_STD
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64).reshape(-1, 2)
        if means.shape[0] == 0:
            raise ValueError("MixtureSpec needs at least one component")
        if not self.sigma > 0:
            raise ValueError(f"Component std must be positive, got {self.sigma}")
        if self.weights is None:
            weights = np.full(means.shape[0], 1.0 / means.shape[0])
        else:
            weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != means.shape[0]:
            raise ValueError(f"Got {weights.shape[0]} weights for {means.shape[0]} components")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("Mixture weights must be non-negative and sum to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def n_components(self) -> int:
        return int(self.means.shape[0])


@dataclass
class Dataset:
    """Training points with the component each was drawn from (diagnostics only)"""
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError(f"Dataset points must be N x 2, got {self.points.shape}")
        if self.labels.shape != (self.points.shape[0],):
            raise ValueError("Dataset needs one label per point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("Dataset points must be finite")

    def __len__(self) -> int:
        return int(self.points.shape[0])


def default_mixture(sigma: float = DEFAULT_COMPONENT_STD, radius: float = DEFAULT_RADIUS) -> MixtureSpec:
    """Eight equally weighted modes on a regular octagon of the given radius"""
    d = radius / np.sqrt(2.0)
    means = np.array([
        [radius, 0.0],
        [-radius, 0.0],
        [0.0, radius],
        [0.0, -radius],
        [d, d],
        [d, -d],
        [-d, d],
        [-d, -d],
    ])
    return MixtureSpec(means=means, sigma=sigma)


def sample_dataset(spec: MixtureSpec, n_per_component: int, seed: Union[int, np.random.SeedSequence]) -> Dataset:
    """
    Draw exactly `n_per_component` points from every component

    Args:
        spec: Mixture to sample
        n_per_component: Points per component, >= 1
        seed: Seed (or seed sequence) for numpy's default generator

    Returns:
        Dataset ordered component by component
    """
    if n_per_component < 1:
        raise ValueError(f"n_per_component must be >= 1, got {n_per_component}")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(spec.n_components), n_per_component)
    noise = rng.standard_normal((labels.shape[0], 2))
    points = spec.means[labels] + spec.sigma * noise
    logger.info(f"Sampled {points.shape[0]} points from {spec.n_components} components")
    return Dataset(points=points, labels=labels)


def _as_points(x: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def _component_log_terms(spec: MixtureSpec, x: np.ndarray, t) -> np.ndarray:
    var = spec.sigma ** 2 + np.asarray(t, dtype=np.float64) ** 2
    var = np.broadcast_to(np.atleast_1d(var), (x.shape[0],))[:, None]
    sq = np.sum((x[:, None, :] - spec.means[None, :, :]) ** 2, axis=-1)
    return np.log(spec.weights)[None, :] - 0.5 * sq / var - np.log(2.0 * np.pi * var)


def log_density(spec: MixtureSpec, x: np.ndarray, t=0.0) -> np.ndarray:
    """log p(x; t) of the mixture convolved with N(0, t^2 I)"""
    x = _as_points(x)
    return logsumexp(_component_log_terms(spec, x, t), axis=1)


def component_posterior(spec: MixtureSpec, x: np.ndarray, t=0.0) -> np.ndarray:
    """Responsibilities p(component | x; t), rows sum to 1"""
    x = _as_points(x)
    return softmax(_component_log_terms(spec, x, t), axis=1)


def diffused_score(spec: MixtureSpec, x: np.ndarray, t=0.0) -> np.ndarray:
    """
    Exact score of the diffused mixture

    Args:
        spec: Mixture
        x: Point(s), shape (2,) or (N, 2)
        t: Noise level(s) >= 0, scalar or shape (N,)

    Returns:
        Score with the shape of `x`
    """
    if np.any(np.asarray(t) < 0):
        raise ValueError("Noise level t must be non-negative")
    single = np.ndim(x) == 1
    pts = _as_points(x)
    var = np.broadcast_to(np.atleast_1d(spec.sigma ** 2 + np.asarray(t, dtype=np.float64) ** 2),
                          (pts.shape[0],))[:, None]
    resp = component_posterior(spec, pts, t)
    score = (resp @ spec.means - pts) / var
    return score[0] if single else score


def exact_denoiser(spec: MixtureSpec, x: np.ndarray, t=0.0) -> np.ndarray:
    """Posterior mean E[y | x] under the mixture: x + t^2 * score"""
    t2 = np.asarray(t, dtype=np.float64) ** 2
    score = diffused_score(spec, x, t)
    if np.ndim(x) == 1:
        return np.asarray(x, dtype=np.float64) + t2 * score
    return np.asarray(x, dtype=np.float64) + np.reshape(np.broadcast_to(t2, (score.shape[0],)), (-1, 1)) * score


def exact_conditional_denoiser(spec: MixtureSpec, x: np.ndarray, t, components: np.ndarray) -> np.ndarray:
    """Posterior mean given the component each row came from"""
    pts = _as_points(x)
    var = spec.sigma ** 2 + np.asarray(t, dtype=np.float64) ** 2
    shrink = np.reshape(np.broadcast_to(spec.sigma ** 2 / var, (pts.shape[0],)), (-1, 1))
    mu = spec.means[np.asarray(components, dtype=int)]
    return mu + shrink * (pts - mu)


def single_component(spec: MixtureSpec, index: int) -> MixtureSpec:
    """One component of `spec` as its own mixture"""
    return MixtureSpec(means=spec.means[index:index + 1], sigma=spec.sigma)


def write_dataset_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write `x,y,component` rows with 17 significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["x", "y", "component"])
        for (px, py), label in zip(dataset.points, dataset.labels):
            writer.writerow([f"{px:.17g}", f"{py:.17g}", int(label)])
    logger.info(f"Wrote dataset: {path}")
    return path


def read_dataset_csv(path: Union[str, Path]) -> Dataset:
    """Read a dataset written by `write_dataset_csv`"""
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Dataset(points=table[:, :2].copy(), labels=table[:, 2].astype(int))
