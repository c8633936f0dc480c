"""Dense feed-forward networks on top of the autodiff core."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor

_ACTIVATIONS = {"relu": ad.relu, "elu": ad.elu}

HIDDEN_UNITS = 64


def kaiming_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Mlp:
    """Fully connected net with hidden activations and a linear output layer.

    Weights are fan-in scaled uniform, biases zero. Parameters are registered
    in the given store under `prefix` so they share its optimizer state.
    """

    def __init__(self, store: ParameterStore, prefix: str, sizes: list[int],
                 activation: str = "elu", rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise ValueError("Mlp needs at least input and output sizes")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation: {activation}")
        if rng is None:
            rng = np.random.default_rng()
        self.prefix = prefix
        self.sizes = list(sizes)
        self.activation = activation
        self._act = _ACTIVATIONS[activation]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (din, dout) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.weights.append(store.add(f"{prefix}.w{i}", kaiming_uniform(rng, din, (din, dout))))
            self.biases.append(store.add(f"{prefix}.b{i}", np.zeros(dout)))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def param_names(self) -> list[str]:
        return [f"{self.prefix}.w{i}" for i in range(len(self.weights))] + \
               [f"{self.prefix}.b{i}" for i in range(len(self.biases))]

    def __call__(self, x: Tensor, detach_params: bool = False) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if detach_params:
                w, b = ad.stop_gradient(w), ad.stop_gradient(b)
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = self._act(h)
        return h


def mlp_2x64(store: ParameterStore, prefix: str, in_dim: int, out_dim: int,
             activation: str = "elu", rng: np.random.Generator | None = None) -> Mlp:
    """The standard two-hidden-layer, 64-unit network used everywhere."""
    return Mlp(store, prefix, [in_dim, HIDDEN_UNITS, HIDDEN_UNITS, out_dim], activation, rng)
