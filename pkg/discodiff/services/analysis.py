"""
Trajectory curvature, Jacobian norms, Wasserstein-2 and loss-vs-t diagnostics
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from ..engine import Tensor, grad
from .diffusion import DiffusionConfig, LatentCode, ToyDenoiser, denoise, per_sample_dsm, score_head
from .sampler import DenoiseFn, TimeGrid, Trajectory, heun_solve

logger = logging.getLogger(__name__)

MIN_DRIFT_NORM = 1e-9

# v(x, t) on an (N, 2) batch
DriftFn = Callable[[np.ndarray, float], np.ndarray]
# Tensor (N, 2) and times -> Tensor (N, d)
TensorFn = Callable[[Tensor, Union[float, np.ndarray]], Tensor]


def drift_from_denoiser(denoise_fn: DenoiseFn) -> DriftFn:
    """Probability-flow drift (x - D(x, t)) / t"""

    def drift(x: np.ndarray, t: float) -> np.ndarray:
        return (x - denoise_fn(x, t)) / t

    return drift


def curvature_at(drift_fn: DriftFn, x: np.ndarray, t: float, dt: float = 0.001) -> Union[float, np.ndarray]:
    """
    Finite-difference curvature ||T(t) - T(t - dt)|| / ||x(t) - x(t - dt)||

    x(t - dt) is one Euler step back along the drift; T is the unit drift.
    Points where either drift norm is at most 1e-9 come back as NaN.

    Args:
        drift_fn: Drift field
        x: Point (2,) or batch (N, 2)
        t: Time, must exceed dt
        dt: Time elapsed between the two evaluations

    Returns:
        Curvature per row (float for a single point)
    """
    if not dt > 0 or not t > dt:
        raise ValueError(f"Need 0 < dt < t, got dt={dt}, t={t}")
    single = np.ndim(x) == 1
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    v_now = drift_fn(pts, t)
    x_prev = pts - dt * v_now
    v_prev = drift_fn(x_prev, t - dt)
    n_now = np.linalg.norm(v_now, axis=1)
    n_prev = np.linalg.norm(v_prev, axis=1)
    valid = (n_now > MIN_DRIFT_NORM) & (n_prev > MIN_DRIFT_NORM)
    kappa = np.full(pts.shape[0], np.nan)
    if valid.any():
        tangent_now = v_now[valid] / n_now[valid, None]
        tangent_prev = v_prev[valid] / n_prev[valid, None]
        step = np.linalg.norm(pts[valid] - x_prev[valid], axis=1)
        kappa[valid] = np.linalg.norm(tangent_now - tangent_prev, axis=1) / step
    return float(kappa[0]) if single else kappa


@dataclass
class CurvatureProfile:
    """Mean curvature at each grid time; NaN where every point was excluded"""
    times: np.ndarray
    mean_curvature: np.ndarray
    counts: np.ndarray
    excluded: int = 0

    @property
    def integrated(self) -> float:
        """Mean of the per-time means over times with data"""
        ok = self.counts > 0
        return float(np.mean(self.mean_curvature[ok])) if ok.any() else float("nan")


def curvature_profile(denoise_fn: DenoiseFn, grid: TimeGrid, x0: np.ndarray, dt: float = 0.001,
                      trajectory: Optional[Trajectory] = None) -> CurvatureProfile:
    """
    Expected curvature along ODE trajectories started at the rows of `x0`

    Curvature is evaluated at every recorded state with t > dt. An existing
    trajectory for the same denoiser can be passed to skip the solve.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1, 2)
    if x0.shape[0] == 0:
        return CurvatureProfile(times=np.zeros(0), mean_curvature=np.zeros(0), counts=np.zeros(0, dtype=int))
    if trajectory is None:
        trajectory = heun_solve(denoise_fn, grid, x0, record=True).trajectory
    drift = drift_from_denoiser(denoise_fn)
    times, means, counts = [], [], []
    excluded = 0
    for i, t in enumerate(trajectory.times):
        if t <= dt:
            continue
        kappa = curvature_at(drift, trajectory.states[i], float(t), dt)
        ok = np.isfinite(kappa)
        excluded += int((~ok).sum())
        times.append(float(t))
        counts.append(int(ok.sum()))
        means.append(float(kappa[ok].mean()) if ok.any() else float("nan"))
    if excluded:
        logger.warning(f"Excluded {excluded} curvature points with vanishing drift")
    return CurvatureProfile(times=np.array(times), mean_curvature=np.array(means), counts=np.array(counts),
                            excluded=excluded)


def jacobian(fn: TensorFn, x: np.ndarray, t: Union[float, np.ndarray]) -> np.ndarray:
    """
    Per-row input Jacobians of a row-wise map, (N, d_out, 2)

    One reverse sweep per output coordinate; rows must not interact.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    xt = Tensor(pts, requires_grad=True)
    out = fn(xt, t)
    if out.data.ndim != 2 or out.shape[0] != pts.shape[0]:
        raise ValueError(f"Expected one output row per input row, got {out.shape}")
    rows = []
    for j in range(out.shape[1]):
        seed = np.zeros(out.shape)
        seed[:, j] = 1.0
        (g,) = grad(out, [xt], seed=seed)
        rows.append(g)
    return np.stack(rows, axis=1)


def jacobian_frob_sq(fn: TensorFn, x: np.ndarray, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """||d fn / d x||_F^2 per row (float for a single point)"""
    jac = jacobian(fn, x, t)
    norms = np.sum(jac ** 2, axis=(1, 2))
    return float(norms[0]) if np.ndim(x) == 1 else norms


def log_bin_edges(lo: float, hi: float, n_bins: int) -> np.ndarray:
    if not 0 < lo < hi or n_bins < 1:
        raise ValueError(f"Need 0 < lo < hi and n_bins >= 1, got {lo}, {hi}, {n_bins}")
    return np.geomspace(lo, hi, n_bins + 1)


def bin_centers(edges: np.ndarray) -> np.ndarray:
    return np.sqrt(edges[:-1] * edges[1:])


def bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin of each value in [edge_i, edge_{i+1}) with the last bin closed; -1 outside"""
    values = np.asarray(values, dtype=np.float64)
    idx = np.searchsorted(edges, values, side="right") - 1
    idx[values == edges[-1]] = len(edges) - 2
    idx[(values < edges[0]) | (values > edges[-1])] = -1
    return idx


def bin_losses(sigmas: np.ndarray, losses: np.ndarray, edges: np.ndarray) -> List[Optional[float]]:
    """Mean loss per time bin; None when a bin is empty"""
    losses = np.asarray(losses, dtype=np.float64)
    idx = bin_index(sigmas, edges)
    out: List[Optional[float]] = []
    for b in range(len(edges) - 1):
        hit = idx == b
        out.append(float(losses[hit].mean()) if hit.any() else None)
    return out


@dataclass
class BinnedProfile:
    """A per-time-bin statistic; None marks an empty bin"""
    edges: np.ndarray
    values: List[Optional[float]]
    counts: List[int]

    @property
    def centers(self) -> np.ndarray:
        return bin_centers(self.edges)

    @property
    def integrated(self) -> float:
        present = [v for v in self.values if v is not None]
        return float(np.mean(present)) if present else float("nan")


@dataclass
class JacobianProfile:
    denoiser: BinnedProfile
    score_head: BinnedProfile

    def selected(self, target: str) -> BinnedProfile:
        return self.score_head if target == "G" else self.denoiser


def jacobian_profile(denoiser: ToyDenoiser, trajectory: Trajectory, edges: np.ndarray, probes: int,
                     rng: np.random.Generator) -> JacobianProfile:
    """
    Mean squared Jacobian norms of D and of G over trajectory states

    States are pooled per time bin and up to `probes` of them are drawn
    without replacement. Each state keeps the latent of its trajectory.
    """
    n_paths = trajectory.n_paths
    latents = trajectory.latents
    if latents is None:
        latents = np.full((n_paths, denoiser.num_latents), -1, dtype=int)
    values_d: List[Optional[float]] = []
    values_g: List[Optional[float]] = []
    counts: List[int] = []
    state_times = trajectory.times
    state_bins = bin_index(state_times, edges)
    for b in range(len(edges) - 1):
        in_bin = np.flatnonzero((state_bins == b) & (state_times > 0))
        pool = n_paths * in_bin.size
        if pool == 0:
            values_d.append(None)
            values_g.append(None)
            counts.append(0)
            continue
        pick = rng.choice(pool, size=min(probes, pool), replace=False)
        time_idx, path_idx = in_bin[pick // n_paths], pick % n_paths
        x = trajectory.states[time_idx, path_idx]
        t = state_times[time_idx]
        code = LatentCode.hard(latents[path_idx], denoiser.codebook_size)
        jac_d = jacobian_frob_sq(lambda xt, tt: denoise(denoiser, xt, tt, code), x, t)
        jac_g = jacobian_frob_sq(lambda xt, tt: score_head(denoiser, xt, tt, code), x, t)
        values_d.append(float(np.mean(jac_d)))
        values_g.append(float(np.mean(jac_g)))
        counts.append(int(pick.size))
    return JacobianProfile(
        denoiser=BinnedProfile(edges=edges, values=values_d, counts=counts),
        score_head=BinnedProfile(edges=edges, values=values_g, counts=list(counts)),
    )


def wasserstein2(a: np.ndarray, b: np.ndarray, rng: Optional[np.random.Generator] = None) -> float:
    """
    Empirical W-2 by exact optimal assignment on squared distances

    The larger set is subsampled uniformly to the size of the smaller one.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("wasserstein2 needs non-empty sample sets")
    if a.shape[0] != b.shape[0]:
        rng = rng if rng is not None else np.random.default_rng(0)
        n = min(a.shape[0], b.shape[0])
        logger.warning(f"Subsampling W-2 inputs ({a.shape[0]} vs {b.shape[0]}) to {n} points")
        if a.shape[0] > n:
            a = a[rng.choice(a.shape[0], size=n, replace=False)]
        else:
            b = b[rng.choice(b.shape[0], size=n, replace=False)]
    cost = cdist(a, b, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def loss_vs_t(denoiser: ToyDenoiser, config: DiffusionConfig, points: np.ndarray, latents: Optional[np.ndarray],
              edges: np.ndarray, probes_per_bin: int, rng: np.random.Generator) -> BinnedProfile:
    """
    Mean weighted denoising loss per noise-level bin

    Noise levels are log-uniform within each bin. `latents` are the per-point
    latents the denoiser is conditioned on (None means the null embedding).
    """
    points = np.asarray(points, dtype=np.float64)
    sigmas, losses = [], []
    for b in range(len(edges) - 1):
        idx = rng.integers(0, points.shape[0], size=probes_per_bin)
        sigma = np.exp(rng.uniform(np.log(edges[b]), np.log(edges[b + 1]), size=probes_per_bin))
        noise = rng.standard_normal((probes_per_bin, 2))
        if latents is None:
            code = LatentCode.null(probes_per_bin, denoiser.num_latents, denoiser.codebook_size)
        else:
            code = LatentCode.hard(latents[idx], denoiser.codebook_size)
        sigmas.append(sigma)
        losses.append(per_sample_dsm(denoiser, config, points[idx], code, sigma, noise))
    if sigmas:
        sigma_all, loss_all = np.concatenate(sigmas), np.concatenate(losses)
    else:
        sigma_all, loss_all = np.zeros(0), np.zeros(0)
    values = bin_losses(sigma_all, loss_all, edges)
    counts = [int(v is not None) * probes_per_bin for v in values]
    return BinnedProfile(edges=edges, values=values, counts=counts)


@dataclass
class ArmMetrics:
    """Metric suite of one trained arm"""
    arm: str
    w2: float
    n_samples: int
    curvature: CurvatureProfile
    jacobian: JacobianProfile
    loss: BinnedProfile
    extra: Dict[str, float] = field(default_factory=dict)


def metrics_rows(metrics: ArmMetrics) -> List[Dict[str, object]]:
    """Rows (metric, t, arm, value, n); t is 'NA' for scalar metrics, absent bins are skipped"""
    rows: List[Dict[str, object]] = []
    if np.isfinite(metrics.w2):
        rows.append({"metric": "w2", "t": "NA", "arm": metrics.arm, "value": metrics.w2, "n": metrics.n_samples})
    for t, value, n in zip(metrics.curvature.times, metrics.curvature.mean_curvature, metrics.curvature.counts):
        if n > 0:
            rows.append({"metric": "curvature", "t": float(t), "arm": metrics.arm, "value": float(value), "n": int(n)})
    for name, profile in (("jac_D", metrics.jacobian.denoiser), ("jac_G", metrics.jacobian.score_head),
                          ("loss", metrics.loss)):
        for t, value, n in zip(profile.centers, profile.values, profile.counts):
            if value is not None:
                rows.append({"metric": name, "t": float(t), "arm": metrics.arm, "value": value, "n": n})
    return rows


def _fraction_lower(t: np.ndarray, ours: List[Optional[float]], theirs: List[Optional[float]],
                    t_min: float) -> Optional[float]:
    pairs = [(a, b) for tt, a, b in zip(t, ours, theirs)
             if tt >= t_min and a is not None and b is not None and np.isfinite(a) and np.isfinite(b)]
    if not pairs:
        return None
    return sum(a < b for a, b in pairs) / len(pairs)


def compare_arms(disco: ArmMetrics, baseline: ArmMetrics, jacobian_target: str = "D",
                 t_min: float = 0.1) -> Dict[str, Optional[float]]:
    """
    Comparison summary of the DisCo arm against the baseline

    Fractions count time bins with t >= t_min where DisCo is strictly lower.
    """
    curv = _fraction_lower(disco.curvature.times, list(disco.curvature.mean_curvature),
                           list(baseline.curvature.mean_curvature), t_min)
    jd, jb = disco.jacobian.selected(jacobian_target), baseline.jacobian.selected(jacobian_target)
    jac = _fraction_lower(jd.centers, jd.values, jb.values, t_min)
    high = [(a, b) for t, a, b in zip(disco.loss.centers, disco.loss.values, baseline.loss.values)
            if t >= 1.0 and a is not None and b is not None]
    low = [abs(a - b) / b for t, a, b in zip(disco.loss.centers, disco.loss.values, baseline.loss.values)
           if t <= 0.05 and a is not None and b is not None and b > 0]
    return {
        "w2_disco": disco.w2,
        "w2_baseline": baseline.w2,
        "w2_ratio": baseline.w2 / disco.w2 if disco.w2 > 0 else None,
        "curvature_fraction_lower": curv,
        "jacobian_fraction_lower": jac,
        "loss_lower_at_high_t": float(all(a <= b for a, b in high)) if high else None,
        "loss_max_rel_gap_low_t": max(low) if low else None,
    }
