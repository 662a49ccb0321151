"""
Encoder, Gumbel-Softmax relaxation, joint denoiser/encoder training and
discrete-latent classifier-free guidance
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..config import Arm
from ..engine import MLP, Adam, Module, NonFiniteError, Tensor, as_tensor, backward, merge_parameters, mlp_sizes
from ..engine.tensor import concat, scale, softmax, take
from .diffusion import DiffusionConfig, LatentCode, ToyDenoiser, denoise, dsm_loss, sample_training_sigma

logger = logging.getLogger(__name__)

GUMBEL_EPS = 1e-12


class Encoder(Module):
    """MLP from a clean data point to m rows of k logits"""

    def __init__(self, num_latents: int, codebook_size: int, rng: np.random.Generator,
                 hidden_width: int = 64, depth: int = 3, input_scale: float = 1.0):
        self.num_latents = num_latents
        self.codebook_size = codebook_size
        self.input_scale = float(input_scale)
        self.net = MLP(mlp_sizes(2, hidden_width, num_latents * codebook_size, depth), rng, name="encoder")

    def __call__(self, y: Union[Tensor, np.ndarray]) -> Tensor:
        """Logits, (N, m*k)"""
        y = as_tensor(y)
        return self.net(scale(y, self.input_scale))

    def parameters(self) -> Dict[str, Tensor]:
        return self.net.parameters()


@dataclass
class LatentSample:
    """Encoder sample: hard indices (N, m) and the relaxed simplex rows (N, m*k)"""
    hard: np.ndarray
    relaxed: Tensor
    tau: float


def gumbel_noise(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """Standard Gumbel draws from clamped uniforms"""
    u = np.clip(rng.random(shape), GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    return -np.log(-np.log(u))


def gumbel_softmax(logits: Union[Tensor, np.ndarray], tau: float, rng: Optional[np.random.Generator] = None,
                   noise: Optional[np.ndarray] = None) -> Tensor:
    """
    softmax((logits + g) / tau) with g ~ Gumbel(0, 1) over the last axis

    Args:
        logits: (k,) or (N, k) logits
        tau: Temperature, strictly positive
        rng: Source of Gumbel noise when `noise` is not given
        noise: Frozen Gumbel noise with the shape of `logits`

    Returns:
        Relaxed one-hot sample, differentiable w.r.t. `logits`
    """
    if not tau > 0:
        raise ValueError(f"Gumbel-Softmax temperature must be > 0, got {tau}")
    logits = as_tensor(logits)
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_softmax needs either rng or noise")
        noise = gumbel_noise(rng, logits.shape)
    return softmax(scale(logits + Tensor(noise), 1.0 / tau))


def encode(encoder: Encoder, y: np.ndarray, tau: float, rng: Optional[np.random.Generator] = None,
           noise: Optional[np.ndarray] = None) -> LatentSample:
    """Sample m independent relaxed latents per row of `y`"""
    logits = encoder(y)
    m, k = encoder.num_latents, encoder.codebook_size
    if noise is None:
        if rng is None:
            raise ValueError("encode needs either rng or noise")
        noise = gumbel_noise(rng, logits.shape)
    blocks = [
        gumbel_softmax(take(logits, i * k, (i + 1) * k), tau, noise=noise[:, i * k:(i + 1) * k])
        for i in range(m)
    ]
    relaxed = concat(blocks) if m > 1 else blocks[0]
    hard = np.stack([np.argmax(b.data, axis=1) for b in blocks], axis=1)
    return LatentSample(hard=hard, relaxed=relaxed, tau=tau)


def extract_latents(encoder: Encoder, points: np.ndarray, tau: float, rng: np.random.Generator,
                    batch_size: int = 4096) -> np.ndarray:
    """Hard latents (N, m) for a whole dataset, in batches"""
    chunks = []
    for start in range(0, points.shape[0], batch_size):
        chunks.append(encode(encoder, points[start:start + batch_size], tau, rng).hard)
    if not chunks:
        return np.zeros((0, encoder.num_latents), dtype=int)
    return np.concatenate(chunks, axis=0)


def mode_purity(latents: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of points whose latent's majority component is their own component"""
    latents = np.asarray(latents).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if latents.shape != labels.shape:
        raise ValueError("Need one latent per label")
    if latents.size == 0:
        return 0.0
    agree = 0
    for code in np.unique(latents):
        agree += int(np.bincount(labels[latents == code]).max())
    return agree / latents.size


class DiscoModel(Module):
    """Denoiser, encoder and latent configuration trained together"""

    def __init__(self, denoiser: ToyDenoiser, encoder: Encoder):
        if (denoiser.num_latents, denoiser.codebook_size) != (encoder.num_latents, encoder.codebook_size):
            raise ValueError("Denoiser and encoder disagree on (m, k)")
        self.denoiser = denoiser
        self.encoder = encoder

    @property
    def num_latents(self) -> int:
        return self.denoiser.num_latents

    @property
    def codebook_size(self) -> int:
        return self.denoiser.codebook_size

    def parameters(self) -> Dict[str, Tensor]:
        return merge_parameters(self.denoiser.parameters(), self.encoder.parameters())

    def trainable_parameters(self, arm: Arm) -> Dict[str, Tensor]:
        if arm == Arm.BASELINE:
            return self.denoiser.parameters()
        return self.parameters()


def guided_combination(conditional: Tensor, unconditional: Tensor, w: float) -> Tensor:
    """w * D_cond + (1 - w) * D_uncond"""
    if w == 1.0:
        return conditional
    if w == 0.0:
        return unconditional
    return scale(conditional, w) + scale(unconditional, 1.0 - w)


def cfg_denoise(model: ToyDenoiser, x: Union[Tensor, np.ndarray], t, code: LatentCode, w: float) -> Tensor:
    """Classifier-free guidance on the model's own discrete latents"""
    x = as_tensor(x)
    if w == 1.0:
        return denoise(model, x, t, code)
    null = LatentCode.null(x.shape[0], model.num_latents, model.codebook_size)
    if w == 0.0:
        return denoise(model, x, t, null)
    return guided_combination(denoise(model, x, t, code), denoise(model, x, t, null), w)


class DiscoTrainer:
    """
    Mini-batch training of denoiser and encoder

    The disco arm samples relaxed latents from the encoder and replaces them
    with the null embedding per sample with probability `p_drop`. The baseline
    arm always uses the null embedding and never updates the encoder.
    """

    def __init__(self, model: DiscoModel, diffusion: DiffusionConfig, rng: np.random.Generator,
                 arm: Arm = Arm.DISCO, tau: float = 1.0, p_drop: float = 0.1, batch_size: int = 512,
                 lr: float = 1e-3, clip_norm: Optional[float] = None):
        if not tau > 0:
            raise ValueError(f"Training temperature must be > 0, got {tau}")
        if not 0.0 <= p_drop <= 1.0:
            raise ValueError(f"p_drop must lie in [0, 1], got {p_drop}")
        self.model = model
        self.diffusion = diffusion
        self.rng = rng
        self.arm = Arm(arm)
        self.tau = tau
        self.p_drop = p_drop
        self.batch_size = batch_size
        self.params = model.trainable_parameters(self.arm)
        self.optimizer = Adam(self.params, lr=lr, clip_norm=clip_norm)

    @property
    def step_count(self) -> int:
        return self.optimizer.state.step

    def latent_code(self, batch: np.ndarray) -> LatentCode:
        m, k = self.model.num_latents, self.model.codebook_size
        n = batch.shape[0]
        if self.arm == Arm.BASELINE:
            return LatentCode.null(n, m, k)
        dropped = self.rng.random(n) < self.p_drop
        sample = encode(self.model.encoder, batch, self.tau, self.rng)
        return LatentCode.relaxed(sample.relaxed, m, k, dropped)

    def compute_gradients(self, batch: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
        """Loss on `batch` and its gradient for every trainable parameter"""
        batch = np.asarray(batch, dtype=np.float64)
        sigma = sample_training_sigma(self.diffusion, self.rng, batch.shape[0])
        code = self.latent_code(batch)
        loss = dsm_loss(self.model.denoiser, self.diffusion, batch, code, sigma, rng=self.rng)
        return loss.item(), backward(loss, self.params)

    def joint_train_step(self, batch: np.ndarray) -> float:
        """
        One Adam step on the joint objective

        Raises:
            NonFiniteError: If the loss or a gradient is not finite; no
                parameter is touched in that case
        """
        try:
            loss, grads = self.compute_gradients(batch)
            self.optimizer.step(grads)
        except NonFiniteError as e:
            logger.error(f"Non-finite training state at step {self.step_count + 1}: {e}")
            raise
        return loss

    def sample_batch(self, points: np.ndarray) -> np.ndarray:
        idx = self.rng.integers(0, points.shape[0], size=min(self.batch_size, points.shape[0]))
        return points[idx]

    def train(self, points: np.ndarray, steps: int, progress: Optional[object] = None) -> List[float]:
        """Run `steps` training steps on random mini-batches, returning the losses"""
        losses = []
        for _ in range(steps):
            losses.append(self.joint_train_step(self.sample_batch(points)))
            if progress is not None:
                progress.update(1)
        return losses
