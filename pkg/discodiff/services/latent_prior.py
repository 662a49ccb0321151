"""
Second-stage autoregressive prior over discrete latents
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from scipy.special import logsumexp, softmax

from ..engine import MLP, Adam, Module, Tensor, backward, mlp_sizes, parameter
from ..engine.tensor import log_softmax, multiply, reduce_sum, scale
from .disco import Encoder, extract_latents

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def latent_histogram(latents: np.ndarray, codebook_size: int) -> np.ndarray:
    """Empirical distribution of single-dimension latents"""
    latents = np.asarray(latents).reshape(-1)
    if latents.size == 0:
        return np.zeros(codebook_size)
    return np.bincount(latents, minlength=codebook_size)[:codebook_size] / latents.size


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def _check_latents(latents: np.ndarray, num_latents: int, codebook_size: int) -> np.ndarray:
    latents = np.asarray(latents)
    if latents.ndim == 1:
        latents = latents[:, None]
    if latents.ndim != 2 or latents.shape[1] != num_latents:
        raise ValueError(f"Expected latents of shape (N, {num_latents}), got {latents.shape}")
    if latents.size and (latents.min() < 0 or latents.max() >= codebook_size):
        raise ValueError(f"Latent indices must lie in [0, {codebook_size})")
    return latents.astype(int)


def systematic_uniforms(n: int, rng: np.random.Generator) -> np.ndarray:
    """(perm + U) / n: each entry is U(0, 1), and every 1/n stratum holds exactly one"""
    return (rng.permutation(n) + rng.random()) / n


def _sample_logits(logits: np.ndarray, temperature: float, rng: np.random.Generator,
                   u: Optional[np.ndarray] = None) -> np.ndarray:
    """One categorical draw per row of `logits`; temperature 0 takes the argmax"""
    if temperature < 0:
        raise ValueError(f"Temperature must be >= 0, got {temperature}")
    if temperature == 0:
        return np.argmax(logits, axis=-1)
    probs = softmax(logits / temperature, axis=-1)
    u = (rng.random(probs.shape[0]) if u is None else u)[:, None]
    idx = (np.cumsum(probs, axis=-1) < u).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


class LatentPrior(Module):
    """p(z) = prod_i p(z_i | z_<i) over m latents with codebook size k"""

    num_latents: int
    codebook_size: int

    def fit(self, latents: np.ndarray, epochs: int, rng: np.random.Generator) -> List[float]:
        raise NotImplementedError

    def conditional_logits(self, prefix: np.ndarray, position: int) -> np.ndarray:
        """Logits of z_position given z_<position, (N, k)"""
        raise NotImplementedError

    def log_likelihood(self, latents: np.ndarray) -> float:
        """Mean log p(z) over rows"""
        latents = _check_latents(latents, self.num_latents, self.codebook_size)
        total = np.zeros(latents.shape[0])
        for i in range(self.num_latents):
            logits = self.conditional_logits(latents, i)
            logp = logits - logsumexp(logits, axis=1, keepdims=True)
            total += logp[np.arange(latents.shape[0]), latents[:, i]]
        return float(total.mean()) if total.size else 0.0

    def sample(self, n: int, rng: np.random.Generator, temperature: float = 1.0,
               systematic: bool = False) -> np.ndarray:
        """
        Ancestral samples, (n, m)

        With `systematic` the first position uses systematic uniforms: each
        row is still a draw from the prior, and the counts of z_0 match
        n * p(z_0) to within one.
        """
        out = np.zeros((n, self.num_latents), dtype=int)
        if n == 0:
            return out
        for i in range(self.num_latents):
            logits = self.conditional_logits(out, i)
            u = systematic_uniforms(n, rng) if systematic and i == 0 else None
            out[:, i] = _sample_logits(logits, temperature, rng, u)
        return out


class CategoricalPrior(LatentPrior):
    """Single latent: a table of k logits fitted in closed form"""

    def __init__(self, codebook_size: int):
        self.num_latents = 1
        self.codebook_size = codebook_size
        self.logits = parameter(np.zeros(codebook_size), "prior.logits")

    def parameters(self) -> Dict[str, Tensor]:
        return {self.logits.name: self.logits}

    @property
    def probabilities(self) -> np.ndarray:
        return softmax(self.logits.data)

    def fit(self, latents: np.ndarray, epochs: int = 1, rng: Optional[np.random.Generator] = None) -> List[float]:
        """Maximum likelihood: logits are the log empirical frequencies"""
        latents = _check_latents(latents, 1, self.codebook_size)
        if latents.shape[0] == 0:
            raise ValueError("Cannot fit a prior on zero latents")
        freqs = latent_histogram(latents[:, 0], self.codebook_size)
        history = []
        for _ in range(max(epochs, 1)):
            self.logits.data = np.log(np.maximum(freqs, PROB_FLOOR))
            history.append(self.log_likelihood(latents))
        return history

    def conditional_logits(self, prefix: np.ndarray, position: int) -> np.ndarray:
        if position != 0:
            raise ValueError(f"Categorical prior has a single position, got {position}")
        return np.broadcast_to(self.logits.data, (prefix.shape[0], self.codebook_size))


class AutoregressivePrior(LatentPrior):
    """
    MLP over (one-hot z_<i with later positions masked, one-hot position i)

    The input for position i never contains z_i or anything after it.
    """

    def __init__(self, num_latents: int, codebook_size: int, rng: np.random.Generator,
                 hidden_width: int = 64, depth: int = 3, lr: float = 1e-3, batch_size: int = 256):
        self.num_latents = num_latents
        self.codebook_size = codebook_size
        self.batch_size = batch_size
        self.net = MLP(mlp_sizes(num_latents * codebook_size + num_latents, hidden_width, codebook_size, depth),
                       rng, name="prior")
        self.optimizer = Adam(self.net.parameters(), lr=lr)

    def parameters(self) -> Dict[str, Tensor]:
        return self.net.parameters()

    def _inputs(self, latents: np.ndarray, position: int) -> np.ndarray:
        n, m, k = latents.shape[0], self.num_latents, self.codebook_size
        feats = np.zeros((n, m * k + m))
        for j in range(position):
            feats[np.arange(n), j * k + latents[:, j]] = 1.0
        feats[:, m * k + position] = 1.0
        return feats

    def conditional_logits(self, prefix: np.ndarray, position: int) -> np.ndarray:
        return self.net(Tensor(self._inputs(prefix, position))).data

    def nll(self, latents: np.ndarray) -> Tensor:
        """Mean negative log-likelihood as a differentiable scalar"""
        n = latents.shape[0]
        total = None
        for i in range(self.num_latents):
            logp = log_softmax(self.net(Tensor(self._inputs(latents, i))))
            onehot = np.zeros((n, self.codebook_size))
            onehot[np.arange(n), latents[:, i]] = 1.0
            term = reduce_sum(multiply(logp, Tensor(onehot)))
            total = term if total is None else total + term
        return scale(total, -1.0 / n)

    def fit(self, latents: np.ndarray, epochs: int, rng: np.random.Generator) -> List[float]:
        """Minimise the negative log-likelihood with Adam; returns log-likelihood per epoch"""
        latents = _check_latents(latents, self.num_latents, self.codebook_size)
        if latents.shape[0] == 0:
            raise ValueError("Cannot fit a prior on zero latents")
        params = self.net.parameters()
        history = []
        for epoch in range(epochs):
            order = rng.permutation(latents.shape[0])
            for start in range(0, order.size, self.batch_size):
                batch = latents[order[start:start + self.batch_size]]
                loss = self.nll(batch)
                self.optimizer.step(backward(loss, params))
            history.append(self.log_likelihood(latents))
            logger.debug(f"Prior epoch {epoch + 1}/{epochs}: log-likelihood {history[-1]:.4f}")
        return history


def build_prior(num_latents: int, codebook_size: int, rng: np.random.Generator, hidden_width: int = 64,
                depth: int = 3, lr: float = 1e-3, batch_size: int = 256) -> LatentPrior:
    if num_latents == 1:
        return CategoricalPrior(codebook_size)
    return AutoregressivePrior(num_latents, codebook_size, rng, hidden_width=hidden_width, depth=depth,
                               lr=lr, batch_size=batch_size)


@dataclass
class PriorFit:
    """Latents the prior was fitted on and its log-likelihood after each epoch"""
    latents: np.ndarray
    history: List[float]

    @property
    def final_log_likelihood(self) -> float:
        return self.history[-1]


def ar_train(prior: LatentPrior, encoder: Encoder, points: np.ndarray, rng: np.random.Generator,
             tau_extract: float = 0.01, epochs: int = 1) -> PriorFit:
    """
    Fit the prior on hard latents extracted from the training data

    Args:
        prior: Prior to fit in place
        encoder: Trained first-stage encoder
        points: Training data, (N, 2)
        rng: Generator for extraction noise and mini-batch order
        tau_extract: Gumbel-Softmax temperature for extraction
        epochs: Passes over the extracted latents

    Returns:
        The extracted hard latents and the per-epoch mean log-likelihood
    """
    latents = extract_latents(encoder, points, tau_extract, rng)
    history = prior.fit(latents, epochs, rng)
    logger.info(f"Fitted prior on {latents.shape[0]} latents, log-likelihood {history[-1]:.4f}")
    return PriorFit(latents=latents, history=history)


def ar_sample(prior: LatentPrior, n: int, rng: np.random.Generator, temperature: float = 1.0,
              systematic: bool = False) -> np.ndarray:
    return prior.sample(n, rng, temperature, systematic=systematic)
