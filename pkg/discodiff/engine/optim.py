"""
Adam optimizer over named parameters
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .tensor import NonFiniteError, Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Adam hyper-parameters, moments and step counter"""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: Optional[float] = None
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"Learning rate must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"Betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    """Rescale all gradients together so their joint L2 norm is at most `max_norm`"""
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    logger.warning(f"Clipping gradient norm {norm:.4g} to {max_norm:.4g}")
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}


def adam_step(state: AdamState, params: Dict[str, Tensor], grads: Dict[str, np.ndarray]) -> AdamState:
    """
    Apply one bias-corrected Adam update

    Args:
        state: Optimizer state; moments are created lazily per parameter
        params: Named parameters, updated by replacing their data arrays
        grads: Gradient per parameter name; a missing name counts as zero

    Returns:
        The same state object with the step counter incremented

    Raises:
        NonFiniteError: If a gradient contains NaN or Inf
        ValueError: If a gradient or moment shape disagrees with its parameter
    """
    full: Dict[str, np.ndarray] = {}
    for name, param in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(param.shape)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != param.shape:
            raise ValueError(f"Gradient shape {g.shape} does not match parameter {name} {param.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"Non-finite gradient for parameter {name}")
        full[name] = g

    if state.clip_norm is not None:
        full = clip_by_global_norm(full, state.clip_norm)

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step

    for name, param in params.items():
        g = full[name]
        m = state.m.get(name, np.zeros(param.shape))
        v = state.v.get(name, np.zeros(param.shape))
        if m.shape != param.shape or v.shape != param.shape:
            raise ValueError(f"Moment shape mismatch for parameter {name}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        param.data = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        state.m[name] = m
        state.v[name] = v

    return state


class Adam:
    """Adam bound to a fixed parameter group"""

    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: Optional[float] = None):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, clip_norm=clip_norm)

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        adam_step(self.state, self.params, grads)
