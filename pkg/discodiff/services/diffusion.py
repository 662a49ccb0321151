"""
EDM-style diffusion core: noise distribution, loss weighting, the toy
denoiser and the denoising score-matching objective
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.spatial.distance import cdist

from ..engine import MLP, Module, Tensor, as_tensor, mlp_sizes, parameter
from ..engine.tensor import concat, matmul, multiply, reduce_mean, sq_norm, take

logger = logging.getLogger(__name__)

NULL_LATENT = -1
TimeLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class DiffusionConfig:
    """Noise schedule, training-noise distribution and data scale

    sigma_data has no default: runs pass the empirical std of their data.
    """
    sigma_data: float
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    p_mean: float = -1.2
    p_std: float = 1.2

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError(f"Need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")
        if self.rho < 1:
            raise ValueError(f"rho must be >= 1, got {self.rho}")
        if self.p_std < 0:
            raise ValueError(f"p_std must be >= 0, got {self.p_std}")
        if not self.sigma_data > 0:
            raise ValueError(f"sigma_data must be positive, got {self.sigma_data}")


def empirical_sigma_data(points: np.ndarray) -> float:
    """Standard deviation of the training data over all coordinates"""
    return float(np.std(np.asarray(points, dtype=np.float64)))


def sample_training_sigma(config: DiffusionConfig, rng: np.random.Generator,
                          size: Optional[int] = None) -> Union[float, np.ndarray]:
    """sigma = exp(P_mean + P_std * xi), xi ~ N(0, 1)"""
    xi = rng.standard_normal(size)
    sigma = np.exp(config.p_mean + config.p_std * xi)
    return float(sigma) if size is None else sigma


def loss_weight(config: DiffusionConfig, sigma: TimeLike) -> TimeLike:
    """lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2"""
    s = np.asarray(sigma, dtype=np.float64)
    if np.any(s <= 0):
        raise ValueError("Loss weight needs sigma > 0")
    sd2 = config.sigma_data ** 2
    weight = (s * s + sd2) / (s * s * sd2)
    return float(weight) if np.ndim(weight) == 0 else weight


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of log(t), shape (N, dim)"""
    if dim % 2:
        raise ValueError(f"Time embedding dim must be even, got {dim}")
    freqs = np.geomspace(0.25, 4.0, dim // 2)
    phase = np.log(np.asarray(t, dtype=np.float64))[:, None] * freqs[None, :]
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


def kmeans_centroids(points: np.ndarray, k: int, rng: np.random.Generator, restarts: int = 10,
                     iterations: int = 20) -> np.ndarray:
    """
    Lowest-distortion k-means++ solution over `restarts` runs, (k, 2)

    With k or fewer distinct points those points are returned, repeated up to k rows.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError(f"k-means needs a nonempty N x d array, got {points.shape}")
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    distinct = np.unique(points, axis=0)
    if distinct.shape[0] <= k:
        return distinct[np.arange(k) % distinct.shape[0]]
    best, best_distortion = None, np.inf
    with warnings.catch_warnings():
        # kmeans2 warns on empty clusters
        warnings.simplefilter("ignore", UserWarning)
        for _ in range(restarts):
            centroids, _ = kmeans2(points, k, iter=iterations, minit="++", seed=rng)
            distortion = float(np.mean(np.min(cdist(points, centroids, "sqeuclidean"), axis=1)))
            if distortion < best_distortion:
                best, best_distortion = centroids, distortion
    logger.debug(f"k-means init: k={k}, distortion {best_distortion:.4f}")
    return np.asarray(best, dtype=np.float64)


def _per_sample(t: TimeLike, n: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(n, float(t))
    if t.shape != (n,):
        raise ValueError(f"Expected {n} noise levels, got shape {t.shape}")
    if np.any(t <= 0):
        raise ValueError("Denoiser needs t > 0")
    return t


def _columns(values: np.ndarray, width: int) -> Tensor:
    return Tensor(np.repeat(values[:, None], width, axis=1))


class LatentCode:
    """
    Discrete latents as the denoiser consumes them.

    For each of the m latent dimensions, an (N, k) matrix of mixing weights
    over codebook rows: one-hot rows for hard latents, Gumbel-Softmax simplex
    rows during training. Dropped samples have zero weights and use the null
    embedding instead, for all m dimensions at once.
    """

    def __init__(self, weights: List[Tensor], dropped: np.ndarray):
        if not weights:
            raise ValueError("LatentCode needs at least one latent dimension")
        n = weights[0].shape[0]
        if any(w.shape != weights[0].shape for w in weights):
            raise ValueError("All latent weight matrices must share one shape")
        self.weights = weights
        self.dropped = np.asarray(dropped, dtype=bool).reshape(n)

    @property
    def batch_size(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_latents(self) -> int:
        return len(self.weights)

    @property
    def codebook_size(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def hard(cls, indices: np.ndarray, codebook_size: int) -> "LatentCode":
        """From integer latents (N, m); a row of NULL_LATENT selects the null embedding"""
        idx = np.atleast_2d(np.asarray(indices))
        if not np.issubdtype(idx.dtype, np.integer):
            raise ValueError("Latent indices must be integers")
        dropped = np.all(idx == NULL_LATENT, axis=1)
        active = idx[~dropped]
        if np.any(active < 0) or np.any(active >= codebook_size):
            bad = active[(active < 0) | (active >= codebook_size)][0]
            raise ValueError(f"Latent index {bad} out of range for codebook size {codebook_size}")
        weights = []
        for i in range(idx.shape[1]):
            onehot = np.zeros((idx.shape[0], codebook_size))
            rows = np.flatnonzero(~dropped)
            onehot[rows, idx[rows, i]] = 1.0
            weights.append(Tensor(onehot))
        return cls(weights, dropped)

    @classmethod
    def null(cls, n: int, num_latents: int, codebook_size: int) -> "LatentCode":
        return cls.hard(np.full((n, num_latents), NULL_LATENT), codebook_size)

    @classmethod
    def relaxed(cls, relaxed: Tensor, num_latents: int, codebook_size: int,
                dropped: Optional[np.ndarray] = None) -> "LatentCode":
        """From an (N, m*k) Gumbel-Softmax sample; gradients flow through the weights"""
        n = relaxed.shape[0]
        if relaxed.shape != (n, num_latents * codebook_size):
            raise ValueError(f"Relaxed latents of shape {relaxed.shape} do not match m={num_latents}, "
                             f"k={codebook_size}")
        dropped = np.zeros(n, dtype=bool) if dropped is None else np.asarray(dropped, dtype=bool)
        keep = None
        if dropped.any():
            keep = Tensor(np.repeat((~dropped).astype(np.float64)[:, None], codebook_size, axis=1))
        weights = []
        for i in range(num_latents):
            w = take(relaxed, i * codebook_size, (i + 1) * codebook_size)
            weights.append(multiply(w, keep) if keep is not None else w)
        return cls(weights, dropped)


class ToyDenoiser(Module):
    """
    Closed-form-friendly denoiser for Gaussian-mixture data

    G(x, t, z) = (F(z) - x) / (t^2 + sigma_1^2) + H(x, t)

    F holds one k x 2 embedding table per latent dimension plus a learned null
    embedding. H is a plain MLP on (x, time embedding of t) with no input or
    output scaling. Its last layer starts at zero, so H == 0 at
    initialisation.

    Embedding rows start as N(0, embedding_init_std^2) draws; call
    `init_embeddings_from_data` to place them on k-means centroids of the
    training points instead.
    """

    def __init__(self, num_latents: int, codebook_size: int, rng: np.random.Generator,
                 sigma_component: float = 0.2, hidden_width: int = 64, depth: int = 4,
                 time_embedding_dim: int = 16, embedding_init_std: float = 1.0):
        if num_latents < 1 or codebook_size < 1:
            raise ValueError(f"Need m >= 1 and k >= 1, got m={num_latents}, k={codebook_size}")
        self.num_latents = num_latents
        self.codebook_size = codebook_size
        self.sigma_component = float(sigma_component)
        self.time_embedding_dim = time_embedding_dim
        self.tables = [
            parameter(rng.normal(0.0, embedding_init_std, size=(codebook_size, 2)), f"denoiser.F.{i}")
            for i in range(num_latents)
        ]
        self.null_embeddings = [parameter(np.zeros((1, 2)), f"denoiser.null.{i}") for i in range(num_latents)]
        self.residual = MLP(mlp_sizes(2 + time_embedding_dim, hidden_width, 2, depth), rng,
                            name="denoiser.H", zero_last=True)

    def init_embeddings_from_data(self, points: np.ndarray, rng: np.random.Generator,
                                  restarts: int = 10) -> None:
        """Overwrite every embedding table with k-means centroids of `points`"""
        for table in self.tables:
            table.data = kmeans_centroids(points, self.codebook_size, rng, restarts=restarts)

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for table in self.tables:
            params[table.name] = table
        for null in self.null_embeddings:
            params[null.name] = null
        params.update(self.residual.parameters())
        return params

    def embed(self, code: LatentCode) -> Tensor:
        """Mean over latent dimensions of the selected (or mixed) embeddings, (N, 2)"""
        if code.num_latents != self.num_latents or code.codebook_size != self.codebook_size:
            raise ValueError(f"LatentCode (m={code.num_latents}, k={code.codebook_size}) does not match "
                             f"denoiser (m={self.num_latents}, k={self.codebook_size})")
        drop_col = Tensor(code.dropped.astype(np.float64)[:, None])
        total = None
        for weights, table, null in zip(code.weights, self.tables, self.null_embeddings):
            e = matmul(weights, table) + matmul(drop_col, null)
            total = e if total is None else total + e
        if self.num_latents > 1:
            total = total * (1.0 / self.num_latents)
        return total

    def residual_term(self, x: Tensor, t: np.ndarray) -> Tensor:
        """H(x, t), (N, 2)"""
        return self.residual(concat([x, Tensor(time_embedding(t, self.time_embedding_dim))]))


def score_head(model: ToyDenoiser, x: Union[Tensor, np.ndarray], t: TimeLike, code: LatentCode) -> Tensor:
    """
    G(x, t, z) = (F(z) - x) / (t^2 + sigma_1^2) + H(x, t)

    Args:
        model: Toy denoiser
        x: Noisy inputs, (N, 2)
        t: Noise level, scalar or (N,), > 0
        code: Latents (hard, relaxed or null) for the N rows

    Returns:
        Score-scale output, (N, 2)
    """
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"score_head expects N x 2 inputs, got {x.shape}")
    t = _per_sample(t, x.shape[0])
    if code.batch_size != x.shape[0]:
        raise ValueError(f"LatentCode batch {code.batch_size} does not match inputs {x.shape[0]}")
    inv = _columns(1.0 / (t * t + model.sigma_component ** 2), 2)
    return multiply(model.embed(code) - x, inv) + model.residual_term(x, t)


def denoise(model: ToyDenoiser, x: Union[Tensor, np.ndarray], t: TimeLike, code: LatentCode) -> Tensor:
    """D(x, t, z) = x + t^2 G(x, t, z)"""
    x = as_tensor(x)
    g = score_head(model, x, t, code)
    t = _per_sample(t, x.shape[0])
    return x + multiply(_columns(t * t, 2), g)


def weighted_denoising_error(config: DiffusionConfig, denoised: np.ndarray, clean: np.ndarray,
                             sigma: np.ndarray) -> np.ndarray:
    """Per-sample lambda(sigma) ||D - y||^2 on plain arrays"""
    err = np.sum((np.asarray(denoised) - np.asarray(clean)) ** 2, axis=1)
    return loss_weight(config, np.asarray(sigma, dtype=np.float64)) * err


def dsm_loss(model: ToyDenoiser, config: DiffusionConfig, y: np.ndarray, code: LatentCode,
             sigma: np.ndarray, noise: Optional[np.ndarray] = None,
             rng: Optional[np.random.Generator] = None) -> Tensor:
    """
    Mean over the batch of lambda(sigma) ||D(y + n, sigma, z) - y||^2

    Args:
        model: Toy denoiser
        config: Diffusion config (sigma_data for the weighting)
        y: Clean samples, (N, 2)
        code: Latents per sample
        sigma: Per-sample noise levels, (N,)
        noise: Standard-normal draws (N, 2); drawn from `rng` when omitted
        rng: Generator used only when `noise` is None

    Returns:
        Scalar loss tensor, differentiable w.r.t. the model and relaxed latents
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] == 0:
        raise ValueError(f"dsm_loss needs a nonempty N x 2 batch, got {y.shape}")
    sigma = _per_sample(sigma, y.shape[0])
    if noise is None:
        if rng is None:
            raise ValueError("dsm_loss needs either noise or rng")
        noise = rng.standard_normal(y.shape)
    x = y + sigma[:, None] * noise
    d = denoise(model, x, sigma, code)
    err = sq_norm(d - Tensor(y), axis=1)
    return reduce_mean(multiply(err, Tensor(loss_weight(config, sigma))))


def per_sample_dsm(model: ToyDenoiser, config: DiffusionConfig, y: np.ndarray, code: LatentCode,
                   sigma: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Unreduced lambda(sigma) ||D(y + sigma n, sigma, z) - y||^2, shape (N,)"""
    y = np.asarray(y, dtype=np.float64)
    sigma = _per_sample(sigma, y.shape[0])
    x = y + sigma[:, None] * noise
    return weighted_denoising_error(config, denoise(model, x, sigma, code).data, y, sigma)
