"""
EDM time discretisation and the deterministic Heun probability-flow ODE solver
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from ..engine import NonFiniteError, Tensor
from .diffusion import NULL_LATENT, DiffusionConfig, LatentCode, ToyDenoiser
from .disco import cfg_denoise
from .latent_prior import LatentPrior

logger = logging.getLogger(__name__)

# D(x, t) on an (N, 2) batch at one scalar time
DenoiseFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing noise levels t_0 > ... > t_n"""
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if times.size < 2:
            raise ValueError("A time grid needs at least two points")
        if np.any(np.diff(times) >= 0):
            raise ValueError("Time grid must be strictly decreasing")
        if times[-1] < 0:
            raise ValueError("Time grid must end at t >= 0")
        object.__setattr__(self, "times", times)

    @property
    def n_steps(self) -> int:
        return int(self.times.size - 1)

    @property
    def t_max(self) -> float:
        return float(self.times[0])


def edm_time_grid(config: DiffusionConfig, n_steps: int = 50, sigma_min: Optional[float] = None,
                  sigma_max: Optional[float] = None, append_zero: bool = True) -> TimeGrid:
    """
    t_i = (s_max^(1/rho) + i/(n-1) (s_min^(1/rho) - s_max^(1/rho)))^rho, i < n

    Args:
        config: Supplies rho and the default sigma range
        n_steps: Number of solver steps, >= 2
        sigma_min: Override of config.sigma_min
        sigma_max: Override of config.sigma_max
        append_zero: Append t_n = 0; without it the grid stops at sigma_min
            after n - 1 steps

    Returns:
        TimeGrid of n + 1 points (n points without the appended zero)
    """
    if n_steps < 2:
        raise ValueError(f"n_steps must be >= 2, got {n_steps}")
    lo = config.sigma_min if sigma_min is None else sigma_min
    hi = config.sigma_max if sigma_max is None else sigma_max
    if not 0 < lo < hi:
        raise ValueError(f"Need 0 < sigma_min < sigma_max, got {lo}, {hi}")
    inv = 1.0 / config.rho
    ramp = np.arange(n_steps) / (n_steps - 1)
    times = (hi ** inv + ramp * (lo ** inv - hi ** inv)) ** config.rho
    times[0], times[-1] = hi, lo
    if append_zero:
        times = np.append(times, 0.0)
    return TimeGrid(times)


@dataclass
class Trajectory:
    """ODE states (n+1, N, 2) on the grid and predictor drifts (n, N, 2)"""
    times: np.ndarray
    states: np.ndarray
    drifts: np.ndarray
    latents: Optional[np.ndarray] = None
    seed: Optional[int] = None

    @property
    def n_paths(self) -> int:
        return int(self.states.shape[1])

    def path(self, index: int) -> np.ndarray:
        return self.states[:, index, :]


@dataclass
class SolveResult:
    samples: np.ndarray
    nfe: int
    trajectory: Optional[Trajectory] = None


def heun_solve(denoise_fn: DenoiseFn, grid: TimeGrid, x0: np.ndarray, record: bool = False) -> SolveResult:
    """
    Second-order Heun integration of dx/dt = (x - D(x, t)) / t

    Every row of `x0` is an independent sample. The corrector is skipped on
    a step that lands on t = 0, so a grid ending at zero costs 2n - 1
    evaluations of `denoise_fn`.

    Raises:
        NonFiniteError: If the state becomes non-finite, naming the step
    """
    x = np.array(x0, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"heun_solve expects N x 2 initial states, got {x.shape}")
    times = grid.times
    nfe = 0
    states = [x.copy()] if record else None
    drifts = [] if record else None

    def drift(state: np.ndarray, t: float) -> np.ndarray:
        nonlocal nfe
        nfe += 1
        return (state - denoise_fn(state, t)) / t

    for i in range(grid.n_steps):
        t_cur, t_next = times[i], times[i + 1]
        d = drift(x, t_cur)
        x_next = x + (t_next - t_cur) * d
        if t_next != 0:
            d_prime = drift(x_next, t_next)
            x_next = x + (t_next - t_cur) * (0.5 * d + 0.5 * d_prime)
        if not np.all(np.isfinite(x_next)):
            raise NonFiniteError(f"ODE state became non-finite at step {i} (t={t_cur:.6g} -> {t_next:.6g})")
        x = x_next
        if record:
            drifts.append(d)
            states.append(x.copy())

    trajectory = None
    if record:
        n = x.shape[0]
        trajectory = Trajectory(
            times=times.copy(),
            states=np.stack(states) if n else np.zeros((times.size, 0, 2)),
            drifts=np.stack(drifts) if n else np.zeros((grid.n_steps, 0, 2)),
        )
    return SolveResult(samples=x, nfe=nfe, trajectory=trajectory)


def model_denoise_fn(denoiser: ToyDenoiser, latents: Optional[np.ndarray], w: float = 1.0) -> DenoiseFn:
    """Wrap the toy denoiser as a plain-array D(x, t) with latents fixed per row"""

    def fn(x: np.ndarray, t: float) -> np.ndarray:
        n = x.shape[0]
        if latents is None:
            code = LatentCode.null(n, denoiser.num_latents, denoiser.codebook_size)
            return cfg_denoise(denoiser, Tensor(x), t, code, 1.0).data
        code = LatentCode.hard(latents, denoiser.codebook_size)
        return cfg_denoise(denoiser, Tensor(x), t, code, w).data

    return fn


@dataclass
class GeneratedSamples:
    samples: np.ndarray
    latents: np.ndarray
    seed: int
    nfe: int
    trajectory: Optional[Trajectory] = None


def generate(denoiser: ToyDenoiser, prior: Optional[LatentPrior], grid: TimeGrid, n_samples: int, seed: int, *,
             w_cfg: float, temperature: float = 1.0, record: bool = False, stream: Optional[int] = None,
             systematic: bool = False) -> GeneratedSamples:
    """
    Draw latents from the prior, then solve the ODE from N(0, t_0^2 I)

    Without a prior (baseline arm) every sample uses the null embedding and
    its latents are reported as -1.

    Args:
        denoiser: Trained toy denoiser
        prior: Latent prior, None for the baseline arm
        grid: Sampler time grid
        n_samples: Number of samples
        seed: Run seed, recorded with the samples
        w_cfg: Guidance weight; 1 is plain conditional sampling
        temperature: Prior sampling temperature
        record: Keep the full trajectories
        stream: Draw from SeedSequence([seed, stream]) instead of the bare seed
        systematic: Systematic draws of the first latent, so code counts match
            the prior to within one sample

    Returns:
        Samples, their latents and the evaluation count
    """
    rng = np.random.default_rng(seed if stream is None else np.random.SeedSequence([seed, stream]))
    m = denoiser.num_latents
    if n_samples == 0:
        return GeneratedSamples(samples=np.zeros((0, 2)), latents=np.zeros((0, m), dtype=int), seed=seed, nfe=0)
    if prior is None:
        latents = np.full((n_samples, m), NULL_LATENT, dtype=int)
        fn = model_denoise_fn(denoiser, None)
    else:
        latents = prior.sample(n_samples, rng, temperature, systematic=systematic)
        fn = model_denoise_fn(denoiser, latents, w_cfg)
    x0 = grid.t_max * rng.standard_normal((n_samples, 2))
    result = heun_solve(fn, grid, x0, record=record)
    if result.trajectory is not None:
        result.trajectory.latents = latents
        result.trajectory.seed = seed
    logger.info(f"Generated {n_samples} samples with {result.nfe} denoiser evaluations each")
    return GeneratedSamples(samples=result.samples, latents=latents, seed=seed, nfe=result.nfe,
                            trajectory=result.trajectory)


def write_samples_csv(generated: GeneratedSamples, path: Union[str, Path]) -> Path:
    """Columns x,y,latent_0..latent_{m-1},seed"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = generated.latents.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["x", "y"] + [f"latent_{i}" for i in range(m)] + ["seed"])
        for (px, py), z in zip(generated.samples, generated.latents):
            writer.writerow([f"{px:.17g}", f"{py:.17g}"] + [int(v) for v in z] + [generated.seed])
    logger.info(f"Wrote samples: {path}")
    return path


def read_samples_csv(path: Union[str, Path]) -> GeneratedSamples:
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    seed = int(table[0, -1]) if table.shape[0] else 0
    return GeneratedSamples(samples=table[:, :2].copy(), latents=table[:, 2:-1].astype(int), seed=seed, nfe=0)
