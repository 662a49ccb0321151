"""
Small neural-network building blocks on top of the tensor tape
"""

from typing import Dict, List, Optional, Sequence

import numpy as np

from .tensor import Tensor, affine, parameter, silu


class Module:
    """Base class for anything that owns named parameters"""

    def parameters(self) -> Dict[str, Tensor]:
        raise NotImplementedError

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copy of every parameter array, keyed by name"""
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """
        Overwrite parameters from arrays

        Raises:
            KeyError: If a parameter is missing from `state`
            ValueError: If an array has the wrong shape
        """
        for name, param in self.parameters().items():
            if name not in state:
                raise KeyError(f"Missing parameter in state: {name}")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ValueError(f"Shape mismatch for {name}: expected {param.shape}, got {value.shape}")
            param.data = value.copy()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))


class Linear(Module):
    """Affine layer y = x W + b, W stored as (in, out)"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 name: str = "linear", zero_init: bool = False):
        if zero_init:
            weight = np.zeros((in_features, out_features))
        else:
            weight = rng.normal(0.0, 1.0 / np.sqrt(in_features), size=(in_features, out_features))
        self.name = name
        self.weight = parameter(weight, f"{name}.weight")
        self.bias = parameter(np.zeros(out_features), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)

    def parameters(self) -> Dict[str, Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}


class MLP(Module):
    """
    Stack of affine layers with SiLU between them

    `sizes` lists every width including input and output, so a four-layer MLP
    has five entries. The output layer is linear.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, name: str = "mlp",
                 zero_last: bool = False):
        if len(sizes) < 2:
            raise ValueError(f"MLP needs at least input and output sizes, got {list(sizes)}")
        self.name = name
        self.sizes = list(sizes)
        self.layers: List[Linear] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            self.layers.append(
                Linear(fan_in, fan_out, rng, name=f"{name}.layers.{i}", zero_init=zero_last and last)
            )

    @property
    def depth(self) -> int:
        return len(self.layers)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = silu(layer(x))
        return self.layers[-1](x)

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params


def mlp_sizes(in_features: int, hidden: int, out_features: int, depth: int) -> List[int]:
    """Widths for a `depth`-layer MLP with a constant hidden width"""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    return [in_features] + [hidden] * (depth - 1) + [out_features]


def merge_parameters(*groups: Optional[Dict[str, Tensor]]) -> Dict[str, Tensor]:
    """Union of named parameter groups; names must not collide"""
    merged: Dict[str, Tensor] = {}
    for group in groups:
        if not group:
            continue
        for name, param in group.items():
            if name in merged:
                raise ValueError(f"Duplicate parameter name: {name}")
            merged[name] = param
    return merged
